#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "cate_stack/dgp.hpp"
#include "cate_stack/ensemble.hpp"
#include "cate_stack/metalearners.hpp"
#include "cate_stack/parallel.hpp"
#include "cate_stack/pseudo.hpp"

namespace cate_stack {

// Covariates paired with known true effects (synthetic data only).
struct EvaluationSample {
  Matrix covariates;
  Vector true_tau;

  EvaluationSample(Matrix X, Vector tau) : covariates(std::move(X)), true_tau(std::move(tau)) {
    require(covariates.rows() == true_tau.size(), "evaluation sample: covariates and true_tau disagree in length");
  }
};

inline EvaluationSample make_evaluation_sample(const DgpSpec& dgp, Eigen::Index q, std::uint64_t seed) {
  Matrix X = draw_covariates(dgp, q, seed);
  Vector tau = true_cate(dgp, X);
  return {std::move(X), std::move(tau)};
}

inline double pehe_squared(const Vector& predictions, const Vector& truth) {
  require(predictions.size() == truth.size() && truth.size() > 0, "pehe: nonempty, equal-length inputs required");
  return (predictions - truth).squaredNorm() / static_cast<double>(truth.size());
}

inline double pehe_squared(const CateModel& model, const EvaluationSample& sample) {
  return pehe_squared(model.predict(sample.covariates), sample.true_tau);
}

inline double pehe(const CateModel& model, const EvaluationSample& sample) {
  return std::sqrt(pehe_squared(model, sample));
}

// Index of the column with the smallest mean squared distance to `reference`;
// ties go to the lowest index.
inline std::size_t argmin_column_mse(const Matrix& predictions, const Vector& reference) {
  require(predictions.cols() >= 1, "selection needs at least one model");
  require(predictions.rows() == reference.size(), "selection: predictions and reference disagree in length");
  std::size_t best = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < predictions.cols(); ++k) {
    const double loss = (predictions.col(k) - reference).squaredNorm() / static_cast<double>(reference.size());
    if (loss < best_loss) {
      best_loss = loss;
      best = static_cast<std::size_t>(k);
    }
  }
  return best;
}

inline std::size_t oracle_select(const Matrix& predictions, const Vector& true_tau) {
  return argmin_column_mse(predictions, true_tau);
}

inline std::size_t oracle_select(const std::vector<CateModelPtr>& models, const EvaluationSample& avg_sample) {
  require(!models.empty(), "oracle_select: empty model list");
  return oracle_select(candidate_matrix(models, avg_sample.covariates), avg_sample.true_tau);
}

inline std::size_t plugin_select(const Matrix& predictions, const Vector& pseudo) {
  return argmin_column_mse(predictions, pseudo);
}

inline std::size_t plugin_select(const std::vector<CateModelPtr>& models, const PseudoOutcomeVector& pseudo,
                                 const Matrix& avg_covariates) {
  require(!models.empty(), "plugin_select: empty model list");
  require(avg_covariates.rows() == pseudo.values.size(), "plugin_select: pseudo-outcomes misaligned with rows");
  return plugin_select(candidate_matrix(models, avg_covariates), pseudo.values);
}

struct BoundParams {
  double L = 1.0;
  int K = 1;
  double delta = 0.05;
  double alpha = 1.0 / 3.0;
  long n = 1000;

  void validate() const {
    require(L >= 0.0 && std::isfinite(L), "bound: L must be nonnegative");
    require(K >= 1, "bound: K must be positive");
    require(delta > 0.0 && delta < 1.0, "bound: delta must lie in (0,1)");
    require(alpha > 0.0 && alpha < 1.0, "bound: alpha must lie in (0,1)");
    require(n >= 1, "bound: n must be positive");
  }
};

// Additive slack of the finite-sample guarantee:
//   12 L^2 sqrt(log((K+1)^2 / delta) / (alpha n)).
inline double regret_bound(const BoundParams& b) {
  b.validate();
  const double k1 = static_cast<double>(b.K) + 1.0;
  return 12.0 * b.L * b.L * std::sqrt(std::log(k1 * k1 / b.delta) / (b.alpha * static_cast<double>(b.n)));
}

// ---------------------------------------------------------------------------
// Monte Carlo check of the finite-sample bound

struct RegretTrial {
  double stacked_mse = 0.0;         // ||tau_s - tau||^2 on the evaluation sample
  double best_candidate_mse = 0.0;  // min_k ||tau_k - tau||^2
  double plugin_selected_mse = 0.0;
  double stacked_avg_loss = 0.0;    // plug-in loss at the stacked weights
  double min_candidate_avg_loss = 0.0;
  bool violation = false;           // stacked > best + bound
  bool plugin_violation = false;    // stacked > plugin-selected + bound
  bool in_sample_violation = false; // stacked avg loss > min candidate avg loss
  std::vector<double> weights;
};

struct RegretExperimentResult {
  double bound = 0.0;
  std::vector<RegretTrial> trials;
  int violations = 0;
  int plugin_violations = 0;
  int in_sample_violations = 0;

  double violation_rate() const { return trials.empty() ? 0.0 : static_cast<double>(violations) / trials.size(); }
  double plugin_violation_rate() const {
    return trials.empty() ? 0.0 : static_cast<double>(plugin_violations) / trials.size();
  }
};

// Builds candidate k for one trial; lets tests inject known functions.
using CandidateFactory = std::function<CateModelPtr(const ExperimentView& train, const DgpSpec& dgp, double p,
                                                    std::uint64_t seed)>;

struct RegretOptions {
  std::vector<CateAlgorithmSpec> roster;  // empty: first K of bounded_roster()
  std::vector<CandidateFactory> injected; // used instead of roster when nonempty
  RegressorSpec mu_base = RegressorSpec(RegressorKind::GradientBoosting);
  double p = 0.5;
  Design design = Design::Bernoulli;
  Eigen::Index eval_size = 20000;
  int jobs = 1;
};

// Cheap candidates for bound experiments.
inline std::vector<CateAlgorithmSpec> bounded_roster() {
  return {
      {Framework::ConstantDiff, RegressorSpec(), std::nullopt, "constant", 1},
      {Framework::TLearner, RegressorSpec(RegressorKind::Lasso), std::nullopt, "lasso_t_learner", 2},
      {Framework::TLearner, RegressorSpec(RegressorKind::CART), std::nullopt, "cart_t_learner", 3},
      {Framework::SLearner, RegressorSpec(RegressorKind::CART), std::nullopt, "cart_s_learner", 4},
      {Framework::TLearner, RegressorSpec(RegressorKind::GradientBoosting), std::nullopt, "gbm_t_learner", 5},
      {Framework::TLearner, RegressorSpec(RegressorKind::KNN), std::nullopt, "knn_t_learner", 6},
      {Framework::TLearner, RegressorSpec(RegressorKind::Ridge), std::nullopt, "ridge_t_learner", 7},
  };
}

// One trial: draw n units, split with alpha, fit everything truncated to L,
// stack on the simplex, then compare on a fresh evaluation sample.
inline RegretTrial regret_trial(const DgpSpec& dgp, const BoundParams& params, const RegretOptions& opt,
                                double bound, std::uint64_t seed) {
  const auto draw = generate_dataset(dgp, params.n, opt.p, opt.design, derive_seed(seed, 0));
  const auto sp = split(draw.data, params.alpha, derive_seed(seed, 1));
  const auto train = draw.data.view(sp.train_indices);
  const auto avg = draw.data.view(sp.avg_indices);

  std::vector<CateModelPtr> models;
  if (!opt.injected.empty()) {
    for (std::size_t k = 0; k < opt.injected.size(); ++k) {
      auto m = opt.injected[k](train, dgp, opt.p, derive_seed(seed, 100 + k));
      models.push_back(std::make_shared<TruncatedCateModel>(m, params.L));
    }
  } else {
    auto roster = opt.roster;
    if (roster.empty()) {
      const auto all = bounded_roster();
      require(params.K <= static_cast<int>(all.size()), "regret_experiment: K exceeds built-in roster; pass a roster");
      roster.assign(all.begin(), all.begin() + params.K);
    }
    LibraryOptions lib;
    lib.truncation_bound = params.L;
    lib.context_seed = derive_seed(seed, 2);
    models = fit_candidate_library(train, roster, opt.p, lib);
  }
  require(static_cast<int>(models.size()) == params.K, "regret_experiment: roster size must equal K");

  const auto mu = fit_outcome_models(train, MuFitMode::PerArm, opt.mu_base.with_seed(derive_seed(seed, 3)), params.L);
  const Vector pseudo = pseudo_outcomes(avg, mu, opt.p);
  const Matrix T_avg = candidate_matrix(models, avg.covariates);
  const auto problem = make_plugin_problem(T_avg, pseudo);
  const auto w = solve_stacking(problem, Regime::Simplex);

  const auto eval = make_evaluation_sample(dgp, opt.eval_size, derive_seed(seed, 4));
  const Matrix T_eval = candidate_matrix(models, eval.covariates);

  RegretTrial t;
  t.weights.assign(w.weights.data(), w.weights.data() + w.weights.size());
  t.stacked_mse = pehe_squared(T_eval * w.weights, eval.true_tau);
  t.best_candidate_mse = std::numeric_limits<double>::infinity();
  t.min_candidate_avg_loss = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < T_eval.cols(); ++k) {
    t.best_candidate_mse = std::min(t.best_candidate_mse, pehe_squared(T_eval.col(k), eval.true_tau));
    Vector e = Vector::Zero(T_eval.cols());
    e[k] = 1.0;
    t.min_candidate_avg_loss = std::min(t.min_candidate_avg_loss, problem.loss(e));
  }
  t.plugin_selected_mse = pehe_squared(T_eval.col(static_cast<Eigen::Index>(plugin_select(T_avg, pseudo))), eval.true_tau);
  t.stacked_avg_loss = w.loss;
  t.violation = t.stacked_mse > t.best_candidate_mse + bound;
  t.plugin_violation = t.stacked_mse > t.plugin_selected_mse + bound;
  t.in_sample_violation = t.stacked_avg_loss > t.min_candidate_avg_loss;
  return t;
}

inline RegretExperimentResult regret_experiment(const DgpSpec& dgp, const BoundParams& params, int trials,
                                                std::uint64_t seed, const RegretOptions& opt = {}) {
  params.validate();
  if (!dgp.outcome_bound) throw ParameterError("regret_experiment: DGP '" + dgp.name + "' has unbounded outcomes");
  require(*dgp.outcome_bound <= params.L, "regret_experiment: DGP outcome bound exceeds L");
  require(trials >= 100, "regret_experiment: at least 100 trials required");

  RegretExperimentResult out;
  out.bound = regret_bound(params);
  out.trials.resize(static_cast<std::size_t>(trials));
  parallel_for(out.trials.size(), opt.jobs, [&](std::size_t k) {
    out.trials[k] = regret_trial(dgp, params, opt, out.bound, derive_seed(seed, k));
  });
  for (const auto& t : out.trials) {
    out.violations += t.violation;
    out.plugin_violations += t.plugin_violation;
    out.in_sample_violations += t.in_sample_violation;
  }
  return out;
}

}  // namespace cate_stack
