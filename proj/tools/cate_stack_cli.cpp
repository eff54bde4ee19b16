#include "cate_stack/cli.hpp"

int main(int argc, char** argv) { return cate_stack::cli::run(argc, argv); }
