#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "cate_stack/dataset.hpp"
#include "cate_stack/metalearners.hpp"
#include "cate_stack/regressors.hpp"

namespace cate_stack {

// AIPW pseudo-outcome for one unit:
//   [mu1 - mu0] + (y - mu1) z / p - (y - mu0)(1 - z) / (1 - p)
inline double aipw_pseudo_outcome(double y, int z, double mu1x, double mu0x, double p) {
  return (mu1x - mu0x) + (y - mu1x) * z / p - (y - mu0x) * (1 - z) / (1.0 - p);
}

// Exact expectation of the pseudo-outcome over the unit's assignment, given
// both potential outcomes. Equals y1 - y0 whatever the regression values.
// Evaluated in extended precision: the 1/p terms are large for extreme p.
inline double enumerate_conditional_mean(double y1, double y0, double mu1x, double mu0x, double p) {
  using ld = long double;
  const ld P = p, m1 = mu1x, m0 = mu0x;
  const ld treated = (m1 - m0) + (ld(y1) - m1) / P;
  const ld control = (m1 - m0) - (ld(y0) - m0) / (1.0L - P);
  return static_cast<double>(P * treated + (1.0L - P) * control);
}

enum class MuFitMode { PerArm, Augmented };

inline std::string to_string(MuFitMode m) { return m == MuFitMode::PerArm ? "per_arm" : "augmented"; }

inline MuFitMode parse_mu_fit_mode(const std::string& s) {
  if (s == "per_arm") return MuFitMode::PerArm;
  if (s == "augmented") return MuFitMode::Augmented;
  throw ParameterError("unknown mu fit mode '" + s + "' (expected per_arm|augmented)");
}

// The pair (mu1, mu0), either one regressor per arm or a single regressor on
// [X, z]. Optionally clipped to [-bound, bound].
class OutcomeModels {
 public:
  OutcomeModels(MuFitMode mode, RegressorPtr first, RegressorPtr second, std::optional<double> bound)
      : mode_(mode), first_(std::move(first)), second_(std::move(second)), bound_(bound) {}

  Vector treated(const Matrix& X) const {
    return clip(mode_ == MuFitMode::PerArm ? first_->predict(X) : first_->predict(augment(X, 1.0)));
  }
  Vector control(const Matrix& X) const {
    return clip(mode_ == MuFitMode::PerArm ? second_->predict(X) : first_->predict(augment(X, 0.0)));
  }
  MuFitMode mode() const { return mode_; }

 private:
  Vector clip(Vector v) const {
    if (bound_) v = v.cwiseMax(-*bound_).cwiseMin(*bound_);
    return v;
  }

  MuFitMode mode_;
  RegressorPtr first_;
  RegressorPtr second_;
  std::optional<double> bound_;
};

inline OutcomeModels fit_outcome_models(const ExperimentView& train, MuFitMode mode, const RegressorSpec& base,
                                        std::optional<double> bound = std::nullopt) {
  detail::require_both_arms(train, "outcome models");
  if (mode == MuFitMode::PerArm) {
    const auto t = train.arm_indices(1), c = train.arm_indices(0);
    auto mu1 = detail::fit_on_rows(detail::reseed(base, 11), train, t, train.outcomes);
    auto mu0 = detail::fit_on_rows(detail::reseed(base, 10), train, c, train.outcomes);
    return {mode, std::move(mu1), std::move(mu0), bound};
  }
  auto mu = fit_regressor(detail::reseed(base, 12), augment(train.covariates, train.assignments), train.outcomes);
  return {mode, std::move(mu), nullptr, bound};
}

inline Vector pseudo_outcomes(const ExperimentView& rows, const OutcomeModels& models, double p) {
  require(p > 0.0 && p < 1.0, "pseudo outcomes: p must lie in (0,1)");
  const Vector m1 = models.treated(rows.covariates), m0 = models.control(rows.covariates);
  Vector out(rows.rows());
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    out[i] = aipw_pseudo_outcome(rows.outcomes[i], rows.assignments[i], m1[i], m0[i], p);
  return out;
}

struct PseudoOutcomeVector {
  Vector values;                    // aligned with indices
  std::vector<Eigen::Index> indices;  // dataset rows of the averaging set
  OutcomeModels models;
  double p;
};

// Fits mu1/mu0 on the training rows only and evaluates the pseudo-outcomes on
// the averaging rows with the design p.
inline PseudoOutcomeVector build_pseudo_outcomes(const ExperimentDataset& ds, const DataSplit& split,
                                                 MuFitMode mode, const RegressorSpec& base,
                                                 std::optional<double> bound = std::nullopt) {
  const auto train = ds.view(split.train_indices);
  auto models = fit_outcome_models(train, mode, base, bound);
  const auto avg = ds.view(split.avg_indices);
  Vector values = pseudo_outcomes(avg, models, ds.treat_prob());
  return {std::move(values), split.avg_indices, std::move(models), ds.treat_prob()};
}

inline void write_pseudo_outcomes_csv(const PseudoOutcomeVector& pv, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParameterError("cannot write '" + path + "'");
  out << "index,value\n";
  for (Eigen::Index i = 0; i < pv.values.size(); ++i)
    out << pv.indices[static_cast<std::size_t>(i)] << "," << detail::format_double(pv.values[i]) << "\n";
}

// Picks between the two ways of fitting mu1/mu0 by k-fold CV error on the
// observed outcomes (per-arm errors pooled by arm size).
inline MuFitMode choose_mu_fit_mode(const ExperimentView& train, const RegressorSpec& base, int folds,
                                    std::uint64_t seed) {
  const auto t = train.arm_indices(1), c = train.arm_indices(0);
  const auto n1 = static_cast<double>(t.size()), n0 = static_cast<double>(c.size());
  const double per_arm =
      (n1 * cross_val_mse(base, select_rows(train.covariates, t), select_entries(train.outcomes, t), folds, seed) +
       n0 * cross_val_mse(base, select_rows(train.covariates, c), select_entries(train.outcomes, c), folds, seed)) /
      (n1 + n0);
  const double joint = cross_val_mse(base, augment(train.covariates, train.assignments), train.outcomes, folds, seed);
  return joint < per_arm ? MuFitMode::Augmented : MuFitMode::PerArm;
}

}  // namespace cate_stack
