#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cate_stack/dataset.hpp"
#include "cate_stack/regressors.hpp"

namespace cate_stack {

// A fitted CATE function x -> tau_hat(x). Immutable once constructed.
class CateModel {
 public:
  explicit CateModel(std::string label) : label_(std::move(label)) {}
  virtual ~CateModel() = default;

  virtual Vector predict(const Matrix& X) const = 0;

  double predict_one(const Eigen::RowVectorXd& x) const { return predict(Matrix(x))[0]; }
  const std::string& label() const { return label_; }
  virtual std::optional<double> truncation_bound() const { return std::nullopt; }

 private:
  std::string label_;
};

using CateModelPtr = std::shared_ptr<const CateModel>;

// X with the assignment column appended last.
inline Matrix augment(const Matrix& X, double z) {
  Matrix out(X.rows(), X.cols() + 1);
  out.leftCols(X.cols()) = X;
  out.col(X.cols()).setConstant(z);
  return out;
}

inline Matrix augment(const Matrix& X, const IntVector& z) {
  Matrix out(X.rows(), X.cols() + 1);
  out.leftCols(X.cols()) = X;
  out.col(X.cols()) = z.cast<double>();
  return out;
}

class ConstantCateModel final : public CateModel {
 public:
  ConstantCateModel(double value, std::string label = "constant") : CateModel(std::move(label)), value_(value) {}
  Vector predict(const Matrix& X) const override { return Vector::Constant(X.rows(), value_); }
  double value() const { return value_; }

 private:
  double value_;
};

// tau(x) = mu1(x) - mu0(x) with one regressor per arm.
class ArmDifferenceModel final : public CateModel {
 public:
  ArmDifferenceModel(RegressorPtr mu1, RegressorPtr mu0, std::string label)
      : CateModel(std::move(label)), mu1_(std::move(mu1)), mu0_(std::move(mu0)) {}
  Vector predict(const Matrix& X) const override { return mu1_->predict(X) - mu0_->predict(X); }
  const Regressor& treated_model() const { return *mu1_; }
  const Regressor& control_model() const { return *mu0_; }

 private:
  RegressorPtr mu1_, mu0_;
};

// tau(x) = mu(x, 1) - mu(x, 0) with a single regressor on [X, z].
class AugmentedDifferenceModel final : public CateModel {
 public:
  AugmentedDifferenceModel(RegressorPtr mu, std::string label) : CateModel(std::move(label)), mu_(std::move(mu)) {}
  Vector predict(const Matrix& X) const override { return mu_->predict(augment(X, 1.0)) - mu_->predict(augment(X, 0.0)); }
  const Regressor& joint_model() const { return *mu_; }

 private:
  RegressorPtr mu_;
};

class XLearnerModel final : public CateModel {
 public:
  XLearnerModel(RegressorPtr mu1, RegressorPtr mu0, RegressorPtr gamma1, RegressorPtr gamma0, double p,
                std::string label)
      : CateModel(std::move(label)),
        mu1_(std::move(mu1)),
        mu0_(std::move(mu0)),
        gamma1_(std::move(gamma1)),
        gamma0_(std::move(gamma0)),
        p_(p) {}

  Vector predict(const Matrix& X) const override {
    return (1.0 - p_) * gamma1_->predict(X) + p_ * gamma0_->predict(X);
  }

  const Regressor& treated_outcome_model() const { return *mu1_; }
  const Regressor& control_outcome_model() const { return *mu0_; }
  const Regressor& treated_effect_model() const { return *gamma1_; }
  const Regressor& control_effect_model() const { return *gamma0_; }
  double treat_prob() const { return p_; }

 private:
  RegressorPtr mu1_, mu0_, gamma1_, gamma0_;
  double p_;
};

class RLearnerModel final : public CateModel {
 public:
  RLearnerModel(RegressorPtr outcome, RegressorPtr effect, std::string label)
      : CateModel(std::move(label)), outcome_(std::move(outcome)), effect_(std::move(effect)) {}
  Vector predict(const Matrix& X) const override { return effect_->predict(X); }
  const Regressor& outcome_model() const { return *outcome_; }
  const Regressor& effect_model() const { return *effect_; }

 private:
  RegressorPtr outcome_, effect_;
};

// Wraps an arbitrary function; used for injected or known-truth candidates.
class FunctionCateModel final : public CateModel {
 public:
  using Fn = std::function<Vector(const Matrix&)>;
  FunctionCateModel(Fn fn, std::string label) : CateModel(std::move(label)), fn_(std::move(fn)) {}
  Vector predict(const Matrix& X) const override { return fn_(X); }

 private:
  Fn fn_;
};

// Clips another model's predictions to [-bound, bound].
class TruncatedCateModel final : public CateModel {
 public:
  TruncatedCateModel(CateModelPtr inner, double bound) : CateModel(inner->label()), inner_(std::move(inner)), bound_(bound) {
    require(bound >= 0.0, "truncation bound must be nonnegative");
  }
  Vector predict(const Matrix& X) const override { return inner_->predict(X).cwiseMax(-bound_).cwiseMin(bound_); }
  std::optional<double> truncation_bound() const override { return bound_; }
  const CateModel& inner() const { return *inner_; }

 private:
  CateModelPtr inner_;
  double bound_;
};

// ---------------------------------------------------------------------------
// Meta-learners

namespace detail {

inline void require_both_arms(const ExperimentView& v, const std::string& who) {
  if (v.n_treated() == 0) throw ArmEmptyError(who + ": no treated rows in training data");
  if (v.n_control() == 0) throw ArmEmptyError(who + ": no control rows in training data");
}

inline RegressorPtr fit_on_rows(const RegressorSpec& spec, const ExperimentView& v, const std::vector<Eigen::Index>& rows,
                                const Vector& target) {
  return fit_regressor(spec, select_rows(v.covariates, rows), select_entries(target, rows));
}

inline RegressorSpec reseed(const RegressorSpec& spec, std::uint64_t stream) {
  return spec.with_seed(derive_seed(spec.seed(), stream));
}

}  // namespace detail

inline CateModelPtr fit_t_learner(const ExperimentView& train, const RegressorSpec& base,
                                  std::string label = "t_learner",
                                  const std::optional<RegressorSpec>& control_base = std::nullopt) {
  detail::require_both_arms(train, label);
  auto mu1 = detail::fit_on_rows(detail::reseed(base, 1), train, train.arm_indices(1), train.outcomes);
  auto mu0 = detail::fit_on_rows(detail::reseed(control_base.value_or(base), 0), train, train.arm_indices(0),
                                 train.outcomes);
  return std::make_shared<ArmDifferenceModel>(std::move(mu1), std::move(mu0), std::move(label));
}

inline CateModelPtr fit_s_learner(const ExperimentView& train, const RegressorSpec& base,
                                  std::string label = "s_learner") {
  detail::require_both_arms(train, label);
  auto mu = fit_regressor(detail::reseed(base, 2), augment(train.covariates, train.assignments), train.outcomes);
  return std::make_shared<AugmentedDifferenceModel>(std::move(mu), std::move(label));
}

// Stage 1 fits per-arm outcome models; stage 2 regresses imputed effects
// (treated: Y - mu0(X), control: mu1(X) - Y) within each arm and blends the
// two effect models as (1 - p) gamma1 + p gamma0.
inline std::shared_ptr<const XLearnerModel> fit_x_learner(const ExperimentView& train, const RegressorSpec& base,
                                                          double p, std::string label = "x_learner",
                                                          const std::optional<RegressorSpec>& effect_base = std::nullopt) {
  require(p > 0.0 && p < 1.0, "x_learner: p must lie in (0,1)");
  detail::require_both_arms(train, label);
  const auto treated = train.arm_indices(1), control = train.arm_indices(0);
  auto mu1 = detail::fit_on_rows(detail::reseed(base, 1), train, treated, train.outcomes);
  auto mu0 = detail::fit_on_rows(detail::reseed(base, 0), train, control, train.outcomes);
  const Matrix X1 = select_rows(train.covariates, treated), X0 = select_rows(train.covariates, control);
  const Vector d1 = select_entries(train.outcomes, treated) - mu0->predict(X1);
  const Vector d0 = mu1->predict(X0) - select_entries(train.outcomes, control);
  const auto& second = effect_base.value_or(base);
  auto g1 = fit_regressor(detail::reseed(second, 3), X1, d1);
  auto g0 = fit_regressor(detail::reseed(second, 4), X0, d0);
  return std::make_shared<XLearnerModel>(std::move(mu1), std::move(mu0), std::move(g1), std::move(g0), p,
                                         std::move(label));
}

// Fits mu(X) ~ Y on all rows, then the effect model on targets
// (Y - mu(X)) / (Z - p) with weights (Z - p)^2, using the known design p.
inline std::shared_ptr<const RLearnerModel> fit_r_learner(const ExperimentView& train, const RegressorSpec& outcome_base,
                                                          const RegressorSpec& effect_base, double p,
                                                          std::string label = "r_learner") {
  if (!(p > 0.0 && p < 1.0)) throw ParameterError(label + ": p must lie strictly inside (0,1)");
  detail::require_both_arms(train, label);
  auto mu = fit_regressor(detail::reseed(outcome_base, 5), train.covariates, train.outcomes);
  const Vector resid = train.outcomes - mu->predict(train.covariates);
  const Vector centred = train.assignments.cast<double>().array() - p;
  const Vector target = resid.cwiseQuotient(centred);
  const Vector weight = centred.cwiseAbs2();
  auto effect = fit_regressor(detail::reseed(effect_base, 6), train.covariates, target, weight);
  return std::make_shared<RLearnerModel>(std::move(mu), std::move(effect), std::move(label));
}

inline CateModelPtr fit_constant_diff(const ExperimentView& train, std::string label = "constant") {
  detail::require_both_arms(train, label);
  double s1 = 0.0, s0 = 0.0;
  for (Eigen::Index i = 0; i < train.rows(); ++i) (train.assignments[i] ? s1 : s0) += train.outcomes[i];
  const double diff = s1 / static_cast<double>(train.n_treated()) - s0 / static_cast<double>(train.n_control());
  return std::make_shared<ConstantCateModel>(diff, std::move(label));
}

// ---------------------------------------------------------------------------
// Algorithm specs and candidate libraries

enum class Framework { SLearner, TLearner, XLearner, RLearner, ConstantDiff };

inline std::string to_string(Framework f) {
  switch (f) {
    case Framework::SLearner: return "s_learner";
    case Framework::TLearner: return "t_learner";
    case Framework::XLearner: return "x_learner";
    case Framework::RLearner: return "r_learner";
    case Framework::ConstantDiff: return "constant_diff";
  }
  return "?";
}

inline Framework parse_framework(const std::string& s) {
  for (auto f : {Framework::SLearner, Framework::TLearner, Framework::XLearner, Framework::RLearner,
                 Framework::ConstantDiff})
    if (to_string(f) == s) return f;
  throw ParameterError("unknown framework '" + s + "'");
}

// One candidate algorithm A_k. `second` is the control-arm base (T), the
// effect-stage base (X, R); when absent the primary base is reused.
struct CateAlgorithmSpec {
  Framework framework = Framework::ConstantDiff;
  RegressorSpec base;
  std::optional<RegressorSpec> second;
  std::string label;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const CateAlgorithmSpec& s) {
  j = nlohmann::json{{"framework", to_string(s.framework)}, {"base", s.base}, {"label", s.label}, {"seed", s.seed}};
  if (s.second) j["second_base"] = *s.second;
}

inline void from_json(const nlohmann::json& j, CateAlgorithmSpec& s) {
  if (!j.is_object() || !j.contains("framework")) throw ParameterError("algorithm spec needs a 'framework'");
  s.framework = parse_framework(j.at("framework").get<std::string>());
  s.base = j.contains("base") ? j.at("base").get<RegressorSpec>() : RegressorSpec();
  s.second.reset();
  if (j.contains("second_base")) s.second = j.at("second_base").get<RegressorSpec>();
  s.label = j.value("label", to_string(s.framework));
  s.seed = j.value("seed", std::uint64_t{0});
}

// Fits one algorithm. The effective seed of every regressor inside derives
// from (context_seed, spec.seed), so a library refits identically no matter
// which other candidates it contains.
inline CateModelPtr fit_cate_algorithm(const CateAlgorithmSpec& spec, const ExperimentView& train, double p,
                                       std::uint64_t context_seed = 0) {
  const std::uint64_t s = derive_seed(context_seed, spec.seed);
  const RegressorSpec base = spec.base.with_seed(derive_seed(s, 0));
  std::optional<RegressorSpec> second;
  if (spec.second) second = spec.second->with_seed(derive_seed(s, 1));
  switch (spec.framework) {
    case Framework::SLearner: return fit_s_learner(train, base, spec.label);
    case Framework::TLearner: return fit_t_learner(train, base, spec.label, second);
    case Framework::XLearner: return fit_x_learner(train, base, p, spec.label, second);
    case Framework::RLearner: return fit_r_learner(train, base, second.value_or(base), p, spec.label);
    case Framework::ConstantDiff: return fit_constant_diff(train, spec.label);
  }
  throw ParameterError("unhandled framework");
}

struct LibraryOptions {
  std::optional<double> truncation_bound;
  std::uint64_t context_seed = 0;
};

inline std::vector<CateModelPtr> fit_candidate_library(const ExperimentView& train,
                                                       const std::vector<CateAlgorithmSpec>& specs, double p,
                                                       const LibraryOptions& options = {}) {
  require(!specs.empty(), "candidate library needs at least one algorithm");
  std::vector<CateModelPtr> out;
  out.reserve(specs.size());
  for (const auto& spec : specs) {
    CateModelPtr model;
    try {
      model = fit_cate_algorithm(spec, train, p, options.context_seed);
    } catch (const ArmEmptyError& e) {
      throw ArmEmptyError("candidate '" + spec.label + "': " + e.what());
    } catch (const ParameterError& e) {
      throw ParameterError("candidate '" + spec.label + "': " + e.what());
    } catch (const std::exception& e) {
      throw Error("candidate '" + spec.label + "': " + e.what());
    }
    if (options.truncation_bound) model = std::make_shared<TruncatedCateModel>(model, *options.truncation_bound);
    out.push_back(std::move(model));
  }
  return out;
}

// The nine-algorithm library used in the experiments, with kernel ridge
// standing in for the support vector regression S-learner.
inline std::vector<CateAlgorithmSpec> default_roster() {
  const RegressorSpec gbm(RegressorKind::GradientBoosting);
  const RegressorSpec rf(RegressorKind::RandomForest);
  const RegressorSpec lasso(RegressorKind::Lasso);
  return {
      {Framework::SLearner, RegressorSpec(RegressorKind::KernelRidge), std::nullopt, "kernel_ridge_s_learner", 1},
      {Framework::TLearner, gbm, std::nullopt, "gbm_t_learner", 2},
      {Framework::TLearner, rf, std::nullopt, "rf_t_learner", 3},
      {Framework::SLearner, RegressorSpec(RegressorKind::CART), std::nullopt, "cart_s_learner", 4},
      {Framework::TLearner, lasso, std::nullopt, "lasso_t_learner", 5},
      {Framework::XLearner, rf, std::nullopt, "rf_x_learner", 6},
      {Framework::RLearner, gbm, gbm, "gbm_r_learner", 7},
      {Framework::RLearner, lasso, lasso, "lasso_r_learner", 8},
      {Framework::ConstantDiff, RegressorSpec(), std::nullopt, "constant", 9},
  };
}

}  // namespace cate_stack
