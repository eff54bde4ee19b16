#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cate_stack/dataset.hpp"

namespace cate_stack {

enum class Mu0Form { Linear, Piecewise, TreeLike, Nonlinear };
enum class TauForm { Zero, Constant, LinearSparse, Step, Interaction, BoundedNonlinear };

inline std::string to_string(Mu0Form f) {
  switch (f) {
    case Mu0Form::Linear: return "linear";
    case Mu0Form::Piecewise: return "piecewise";
    case Mu0Form::TreeLike: return "tree_like";
    case Mu0Form::Nonlinear: return "nonlinear";
  }
  return "?";
}

inline std::string to_string(TauForm f) {
  switch (f) {
    case TauForm::Zero: return "zero";
    case TauForm::Constant: return "constant";
    case TauForm::LinearSparse: return "linear_sparse";
    case TauForm::Step: return "step";
    case TauForm::Interaction: return "interaction";
    case TauForm::BoundedNonlinear: return "bounded_nonlinear";
  }
  return "?";
}

inline Mu0Form parse_mu0_form(const std::string& s) {
  for (auto f : {Mu0Form::Linear, Mu0Form::Piecewise, Mu0Form::TreeLike, Mu0Form::Nonlinear})
    if (to_string(f) == s) return f;
  throw ParameterError("unknown mu0_form '" + s + "'");
}

inline TauForm parse_tau_form(const std::string& s) {
  for (auto f : {TauForm::Zero, TauForm::Constant, TauForm::LinearSparse, TauForm::Step, TauForm::Interaction,
                 TauForm::BoundedNonlinear})
    if (to_string(f) == s) return f;
  throw ParameterError("unknown tau_form '" + s + "'");
}

// Synthetic data-generating process. Covariates are i.i.d. uniform on
// [-1, 1]^dim; Y0 = mu0(X) + e0 and Y1 = mu0(X) + tau(X) + e1 with
// independent N(0, noise_sigma^2) noise, clipped to [-L, L] afterwards when
// outcome_bound is set.
struct DgpSpec {
  std::string name = "dgp";
  int dim = 10;
  Mu0Form mu0_form = Mu0Form::Linear;
  TauForm tau_form = TauForm::Zero;
  double noise_sigma = 1.0;
  std::optional<double> outcome_bound;
  double tau_constant = 1.0;  // used by TauForm::Constant
  double mu0_scale = 1.0;

  void validate() const {
    require(dim >= 4, "dgp '" + name + "': dim must be at least 4");
    require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), "dgp '" + name + "': noise_sigma must be >= 0");
    if (outcome_bound) require(*outcome_bound > 0.0, "dgp '" + name + "': outcome_bound must be positive");
  }
};

inline void to_json(nlohmann::json& j, const DgpSpec& s) {
  j = nlohmann::json{{"name", s.name},
                     {"dim", s.dim},
                     {"mu0_form", to_string(s.mu0_form)},
                     {"tau_form", to_string(s.tau_form)},
                     {"noise_sigma", s.noise_sigma},
                     {"tau_constant", s.tau_constant},
                     {"mu0_scale", s.mu0_scale}};
  j["outcome_bound"] = s.outcome_bound ? nlohmann::json(*s.outcome_bound) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, DgpSpec& s) {
  DgpSpec d;
  d.name = j.value("name", d.name);
  d.dim = j.value("dim", d.dim);
  if (j.contains("mu0_form")) d.mu0_form = parse_mu0_form(j.at("mu0_form").get<std::string>());
  if (j.contains("tau_form")) d.tau_form = parse_tau_form(j.at("tau_form").get<std::string>());
  d.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  d.tau_constant = j.value("tau_constant", d.tau_constant);
  d.mu0_scale = j.value("mu0_scale", d.mu0_scale);
  if (j.contains("outcome_bound") && !j.at("outcome_bound").is_null()) d.outcome_bound = j.at("outcome_bound").get<double>();
  d.validate();
  s = d;
}

inline Vector mu0_function(const DgpSpec& dgp, const Matrix& X) {
  const auto x = [&](Eigen::Index i, int j) { return X(i, j); };
  Vector out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double v = 0.0;
    switch (dgp.mu0_form) {
      case Mu0Form::Linear: v = 1.0 + x(i, 0) + 0.5 * x(i, 1) - 0.5 * x(i, 2) + 0.25 * x(i, 3); break;
      case Mu0Form::Piecewise: v = std::abs(x(i, 0)) + std::max(0.0, x(i, 1)) - 0.5 * x(i, 2); break;
      case Mu0Form::TreeLike:
        v = 2.0 * (x(i, 0) > 0.0 && x(i, 1) > 0.0) - 1.0 * (x(i, 2) < -0.3) + 0.5 * (x(i, 3) > 0.5);
        break;
      case Mu0Form::Nonlinear:
        v = std::sin(std::numbers::pi * x(i, 0)) + x(i, 1) * x(i, 1) + 0.5 * x(i, 2) * x(i, 3);
        break;
    }
    out[i] = dgp.mu0_scale * v;
  }
  return out;
}

// The structural effect form (before any outcome clipping).
inline Vector tau_function(const DgpSpec& dgp, const Matrix& X) {
  Vector out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    switch (dgp.tau_form) {
      case TauForm::Zero: out[i] = 0.0; break;
      case TauForm::Constant: out[i] = dgp.tau_constant; break;
      case TauForm::LinearSparse: out[i] = 2.0 * X(i, 0); break;
      case TauForm::Step: out[i] = X(i, 0) > 0.0 ? 1.0 : 0.0; break;
      case TauForm::Interaction: out[i] = 2.0 * X(i, 0) * X(i, 1); break;
      case TauForm::BoundedNonlinear:
        out[i] = 0.5 * std::sin(std::numbers::pi * X(i, 0)) + 0.25 * std::cos(std::numbers::pi * X(i, 1));
        break;
    }
  }
  return out;
}

// E[clip(m + sigma e, -L, L)] for standard normal e.
inline double clipped_normal_mean(double m, double sigma, double L) {
  if (sigma == 0.0) return std::clamp(m, -L, L);
  const double a = (-L - m) / sigma, b = (L - m) / sigma;
  const auto Phi = [](double v) { return 0.5 * std::erfc(-v / std::numbers::sqrt2); };
  const auto phi = [](double v) { return std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi); };
  return -L * Phi(a) + L * (1.0 - Phi(b)) + m * (Phi(b) - Phi(a)) + sigma * (phi(a) - phi(b));
}

// True CATE E[Y1 - Y0 | X], accounting for clipping when bounded.
inline Vector true_cate(const DgpSpec& dgp, const Matrix& X) {
  const Vector tau = tau_function(dgp, X);
  if (!dgp.outcome_bound) return tau;
  const Vector mu0 = mu0_function(dgp, X);
  const double L = *dgp.outcome_bound;
  Vector out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    out[i] = clipped_normal_mean(mu0[i] + tau[i], dgp.noise_sigma, L) - clipped_normal_mean(mu0[i], dgp.noise_sigma, L);
  return out;
}

inline Matrix draw_covariates(const DgpSpec& dgp, Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Matrix X(n, dgp.dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < dgp.dim; ++j) X(i, j) = unif(rng);
  return X;
}

struct SyntheticDraw {
  ExperimentDataset data;
  PotentialOutcomeTable truth;
  Vector cate;  // true_cate at each unit's covariates
};

inline SyntheticDraw generate_dataset(const DgpSpec& dgp, Eigen::Index n, double p, Design design, std::uint64_t seed) {
  dgp.validate();
  Matrix X = draw_covariates(dgp, n, derive_seed(seed, 0));
  const Vector mu0 = mu0_function(dgp, X), tau = tau_function(dgp, X);
  std::mt19937_64 noise_rng(derive_seed(seed, 1));
  std::normal_distribution<double> noise(0.0, 1.0);
  Vector y1(n), y0(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e1 = noise(noise_rng), e0 = noise(noise_rng);
    y1[i] = mu0[i] + tau[i] + dgp.noise_sigma * e1;
    y0[i] = mu0[i] + dgp.noise_sigma * e0;
    if (dgp.outcome_bound) {
      y1[i] = std::clamp(y1[i], -*dgp.outcome_bound, *dgp.outcome_bound);
      y0[i] = std::clamp(y0[i], -*dgp.outcome_bound, *dgp.outcome_bound);
    }
  }
  IntVector z = assign_treatments(n, p, design, derive_seed(seed, 2));
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = z[i] ? y1[i] : y0[i];
  Vector cate = true_cate(dgp, X);
  return {ExperimentDataset(std::move(X), std::move(y), std::move(z), p, design),
          PotentialOutcomeTable(std::move(y1), std::move(y0)), std::move(cate)};
}

// Six shipped processes, one per effect form, d = 10.
inline std::vector<DgpSpec> default_dgps() {
  std::vector<DgpSpec> out;
  auto add = [&](std::string name, Mu0Form m, TauForm t) {
    DgpSpec d;
    d.name = std::move(name);
    d.mu0_form = m;
    d.tau_form = t;
    out.push_back(d);
  };
  add("zero_effect", Mu0Form::Nonlinear, TauForm::Zero);
  add("constant_effect", Mu0Form::TreeLike, TauForm::Constant);
  add("linear_sparse_effect", Mu0Form::Linear, TauForm::LinearSparse);
  add("step_effect", Mu0Form::Piecewise, TauForm::Step);
  add("interaction_effect", Mu0Form::Nonlinear, TauForm::Interaction);
  add("bounded_nonlinear_effect", Mu0Form::TreeLike, TauForm::BoundedNonlinear);
  return out;
}

// Process with outcomes clipped to [-1, 1]; used for the finite-sample bound.
inline DgpSpec bounded_dgp() {
  DgpSpec d;
  d.name = "bounded";
  d.mu0_form = Mu0Form::Nonlinear;
  d.tau_form = TauForm::BoundedNonlinear;
  d.mu0_scale = 0.25;
  d.noise_sigma = 0.25;
  d.outcome_bound = 1.0;
  return d;
}

inline DgpSpec find_dgp(const std::string& name) {
  for (const auto& d : default_dgps())
    if (d.name == name) return d;
  if (name == "bounded") return bounded_dgp();
  throw ParameterError("unknown dgp '" + name + "'");
}

}  // namespace cate_stack
