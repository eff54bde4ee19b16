#include <catch_amalgamated.hpp>

#include <chrono>
#include <cstdlib>

#include "cate_stack/cli.hpp"
#include "test_util.hpp"

using namespace cate_stack;
using test_util::TempDir;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> v;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) v.push_back(l);
  return v;
}

const char* kTinyRoster = R"([
  {"framework": "constant_diff", "label": "constant"},
  {"framework": "t_learner", "base": {"kind": "ridge"}, "label": "ridge_t"},
  {"framework": "s_learner", "base": {"kind": "cart", "params": {"max_depth": 3}}, "label": "cart_s"}
])";

std::string tiny_suite(const std::string& extra = "") {
  return std::string(R"({"dgps": ["step_effect", "zero_effect"], "n": 200, "n_test": 200, "replications": 2,
    "mu_base": "ridge", "master_seed": 3, "roster": )") +
         kTinyRoster + extra + "}";
}

}  // namespace

TEST_CASE("simulate") {
  TempDir t;
  const auto cfg = t.write("sim.json", R"({"dgp": "interaction_effect", "n": 150, "p": 0.3, "master_seed": 1})");
  const auto a = t.path() + "/a", b = t.path() + "/b", c = t.path() + "/c";
  REQUIRE(run_cli({"simulate", "--config", cfg, "--out", a}).code == 0);
  REQUIRE(run_cli({"simulate", "--config", cfg, "--out", b}).code == 0);
  REQUIRE(run_cli({"simulate", "--config", cfg, "--out", c, "--seed", "2"}).code == 0);
  auto read = [](const std::string& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const auto data = read(a + "/dataset.csv"), truth = read(a + "/truth.csv");
  CHECK(lines(data).size() == 151);
  CHECK(lines(truth).size() == 151);
  CHECK(lines(truth)[0] == "y1,y0,tau,cate");
  CHECK(lines(data)[0] == "x1,x2,x3,x4,x5,x6,x7,x8,x9,x10,y,z");
  CHECK(data == read(b + "/dataset.csv"));
  CHECK(data != read(c + "/dataset.csv"));
  const auto sidecar = nlohmann::json::parse(read(a + "/dataset.json"));
  CHECK(sidecar["p"] == 0.3);
  // The sidecar and the CSV load back into a dataset with the same design.
  const auto ds = load_csv(a + "/dataset.csv", load_sidecar(a + "/dataset.json"));
  CHECK(ds.rows() == 150);
  CHECK(ds.treat_prob() == 0.3);

  SECTION("output directory below a regular file is a user error") {
    const auto file = t.write("plain", "x");
    const auto r = run_cli({"simulate", "--config", cfg, "--out", file + "/sub"});
    CHECK(r.code == 2);
    CHECK(r.err.find("output directory") != std::string::npos);
  }
  SECTION("config errors") {
    CHECK(run_cli({"simulate", "--config", t.write("bad.json", R"({"nn": 5})"), "--out", a}).code == 2);
    CHECK(run_cli({"simulate", "--config", t.write("bad2.json", "{"), "--out", a}).code == 2);
    CHECK(run_cli({"simulate", "--config", t.path() + "/missing.json", "--out", a}).code == 2);
    CHECK(run_cli({"simulate", "--config", t.write("bad3.json", R"({"dgp": "nope"})"), "--out", a}).code == 2);
    CHECK(run_cli({"simulate", "--config", cfg}).code == 2);
    CHECK(run_cli({"frobnicate"}).code == 2);
  }
}

TEST_CASE("fit") {
  TempDir t;
  const auto sim = t.write("sim.json", R"({"dgp": "step_effect", "n": 400, "p": 0.5, "master_seed": 8})");
  const auto data_dir = t.path() + "/data";
  REQUIRE(run_cli({"simulate", "--config", sim, "--out", data_dir}).code == 0);
  const auto data = data_dir + "/dataset.csv";

  SECTION("a single candidate gets all the weight") {
    const auto cfg = t.write("fit.json", R"({"roster": [{"framework": "t_learner", "base": {"kind": "ridge"}, "label": "only"}],
      "mu_base": "ridge"})");
    const auto r = run_cli({"fit", "--config", cfg, "--data", data, "--out", t.path() + "/fit"});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(t.read("fit/fit.json"));
    CHECK(j["weights"]["only"] == 1.0);
    CHECK(j["regime"] == "simplex");
    CHECK(j["p"] == 0.5);
    CHECK(j["n_train"].get<int>() + j["n_avg"].get<int>() == 400);
    const auto pred = lines(t.read("fit/predictions.csv"));
    CHECK(pred.size() == 401);
    CHECK(pred[0] == "row,only,stacked");
    // With weight one the stacked column repeats the candidate.
    const auto row = pred[1];
    const auto first = row.find(','), second = row.find(',', first + 1);
    CHECK(row.substr(first + 1, second - first - 1) == row.substr(second + 1));
    CHECK(lines(t.read("fit/pseudo_outcomes.csv")).size() == static_cast<std::size_t>(j["n_avg"].get<int>() + 1));
  }
  SECTION("regimes and the r-stack equivalence log") {
    const auto cfg = t.write("fit.json", std::string(R"({"mu_base": "ridge", "roster": )") + kTinyRoster + "}");
    for (const char* regime : {"simplex", "nonneg", "unconstrained"}) {
      const auto out = t.path() + "/fit_" + regime;
      REQUIRE(run_cli({"fit", "--config", cfg, "--data", data, "--out", out, "--regime", regime}).code == 0);
      std::ifstream in(out + "/fit.json");
      const auto j = nlohmann::json::parse(in);
      CHECK(j["regime"] == regime);
      CHECK(j["weights"].size() == 3);
    }
    const auto r = run_cli({"fit", "--config", cfg, "--data", data, "--out", t.path() + "/r", "--regime", "r-stack"});
    REQUIRE(r.code == 0);
    CHECK(r.err.find("r-stack equivalence check") != std::string::npos);
    const auto j = nlohmann::json::parse(t.read("r/fit.json"));
    CHECK(j["equivalence_check"]["passed"] == true);
    CHECK(j["equivalence_check"]["loss_ratio"].get<double>() == Catch::Approx(0.25).epsilon(1e-9));

    REQUIRE(run_cli({"fit", "--config", cfg, "--data", data, "--out", t.path() + "/full", "--refit-full"}).code == 0);
    CHECK(nlohmann::json::parse(t.read("full/fit.json"))["refit_full"] == true);
    CHECK(run_cli({"fit", "--config", cfg, "--data", data, "--out", t.path() + "/x", "--regime", "lasso"}).code == 2);
  }
  SECTION("malformed datasets") {
    const auto cfg = t.write("fit.json", R"({"roster": [{"framework": "constant_diff"}]})");
    const auto no_z = t.write("no_z.csv", "y,x1\n1,0.5\n2,0.1\n");
    const auto r = run_cli({"fit", "--config", cfg, "--data", no_z, "--out", t.path() + "/o"});
    CHECK(r.code == 2);
    CHECK(run_cli({"fit", "--config", cfg, "--out", t.path() + "/o"}).code == 2);
    CHECK(run_cli({"fit", "--config", cfg, "--data", t.path() + "/none.csv", "--out", t.path() + "/o"}).code == 2);
  }
}

TEST_CASE("benchmark, report and ablate") {
  TempDir t;
  const auto cfg = t.write("bench.json", tiny_suite());
  const auto start = std::chrono::steady_clock::now();
  const auto r = run_cli({"benchmark", "--config", cfg, "--out", t.path() + "/bench", "--jobs", "2"});
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  REQUIRE(r.code == 0);
  CHECK(seconds < 60.0);
  CHECK(r.err.find("step_effect p=0.3:") != std::string::npos);

  const auto table1 = lines(t.read("bench/table1_stack_vs_oracle.csv"));
  REQUIRE(table1.size() == 4);
  CHECK(table1[1].rfind("0.1,", 0) == 0);
  CHECK(table1[2].rfind("0.3,", 0) == 0);
  CHECK(table1[3].rfind("0.5,", 0) == 0);

  // Re-rendering from the saved JSON reproduces every table byte for byte.
  REQUIRE(run_cli({"report", t.path() + "/bench/report.json", "--out", t.path() + "/again"}).code == 0);
  const auto j = nlohmann::json::parse(t.read("bench/report.json"));
  const auto files = render_suite_tables(j);
  for (const auto& [name, content] : files) {
    CHECK(t.read("bench/" + name) == content);
    CHECK(t.read("again/" + name) == content);
  }

  // Overrides.
  REQUIRE(run_cli({"benchmark", "--config", cfg, "--out", t.path() + "/one", "--p", "0.5", "--reps", "1"}).code == 0);
  const auto one = nlohmann::json::parse(t.read("one/report.json"));
  CHECK(one["datasets"].size() == 2);
  CHECK(one["datasets"][0]["per_replication"].size() == 1);

  SECTION("ablation") {
    const auto acfg = t.write("ablate.json", tiny_suite(R"(, "p_values": [0.5], "reduced_roster": ["constant", "ridge_t"],
      "weak_mu": "constant_mean", "strategies": ["causal_stack"])"));
    REQUIRE(run_cli({"ablate", "--config", acfg, "--out", t.path() + "/abl"}).code == 0);
    const auto t5 = lines(t.read("abl/table5_full_vs_reduced_roster.csv"));
    REQUIRE(t5.size() == 2);
    CHECK(t5[1].substr(t5[1].rfind(',') + 1) == "2");
    REQUIRE(run_cli({"report", "--config", t.path() + "/abl/ablation.json", "--out", t.path() + "/abl2"}).code == 0);
    CHECK(t.read("abl2/table6_strong_vs_weak_mu.csv") == t.read("abl/table6_strong_vs_weak_mu.csv"));
    CHECK(run_cli({"ablate", "--config", t.write("bad.json", tiny_suite(R"(, "reduced_roster": ["svm"])")), "--out",
               t.path() + "/x"})
              .code == 2);
  }
  SECTION("report input that is not a report") {
    CHECK(run_cli({"report", t.write("other.json", R"({"a": 1})"), "--out", t.path() + "/x"}).code == 2);
    CHECK(run_cli({"report", "--out", t.path() + "/x"}).code == 2);
  }
}

TEST_CASE("installed binary") {
  const char* bin = std::getenv("CATE_STACK_CLI");
  if (!bin) SKIP("CATE_STACK_CLI not set");
  TempDir t;
  const auto cfg = t.write("sim.json", R"({"n": 50})");
  auto status = [](const std::string& cmd) {
    const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  const std::string b = std::string("\"") + bin + "\"";
  CHECK(status(b + " --help") == 0);
  CHECK(status(b + " simulate --config " + cfg + " --out " + t.path() + "/o") == 0);
  CHECK(lines(t.read("o/dataset.csv")).size() == 51);
  CHECK(status(b + " simulate --config " + cfg + " --out " + cfg + "/sub") == 2);
  CHECK(status(b + " fit --out " + t.path() + "/f") == 2);
  CHECK(status(b) == 2);
}
