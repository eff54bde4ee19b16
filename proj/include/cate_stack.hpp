#pragma once

#include "cate_stack/common.hpp"
#include "cate_stack/dataset.hpp"
#include "cate_stack/tree.hpp"
#include "cate_stack/regressors.hpp"
#include "cate_stack/metalearners.hpp"
#include "cate_stack/pseudo.hpp"
#include "cate_stack/ensemble.hpp"
#include "cate_stack/dgp.hpp"
#include "cate_stack/selection_eval.hpp"
#include "cate_stack/parallel.hpp"
#include "cate_stack/benchmark.hpp"
