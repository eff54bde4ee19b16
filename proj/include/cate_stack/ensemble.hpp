#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "cate_stack/dataset.hpp"
#include "cate_stack/metalearners.hpp"

namespace cate_stack {

enum class Regime { Simplex, NonNegative, Unconstrained };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::Simplex: return "simplex";
    case Regime::NonNegative: return "nonneg";
    case Regime::Unconstrained: return "unconstrained";
  }
  return "?";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "simplex" || s == "nonneg_sum_one") return Regime::Simplex;
  if (s == "nonneg") return Regime::NonNegative;
  if (s == "unconstrained") return Regime::Unconstrained;
  throw ParameterError("unknown regime '" + s + "' (expected simplex|nonneg|unconstrained)");
}

// Weighted least-squares aggregation problem:
//   loss(w) = (1/m) sum_i r_i (target_i - sum_k w_k T[i,k])^2
class StackingProblem {
 public:
  StackingProblem(Matrix candidates, Vector target, Vector row_weights = Vector())
      : T_(std::move(candidates)), t_(std::move(target)), r_(std::move(row_weights)) {
    if (r_.size() == 0) r_ = Vector::Ones(t_.size());
    require(T_.rows() >= 1 && T_.cols() >= 1, "stacking problem needs m >= 1 rows and K >= 1 candidates");
    require(t_.size() == T_.rows() && r_.size() == T_.rows(), "stacking problem: mismatched row counts");
    require(T_.allFinite() && t_.allFinite() && r_.allFinite(), "stacking problem: entries must be finite");
    require((r_.array() >= 0.0).all(), "stacking problem: row weights must be nonnegative");
  }

  const Matrix& candidates() const { return T_; }
  const Vector& target() const { return t_; }
  const Vector& row_weights() const { return r_; }
  Eigen::Index rows() const { return T_.rows(); }
  Eigen::Index size() const { return T_.cols(); }

  double loss(const Vector& w) const {
    const Vector resid = t_ - T_ * w;
    return r_.dot(resid.cwiseAbs2()) / static_cast<double>(rows());
  }

  // Normal matrix A = T' R T / m and vector b = T' R t / m, so that
  // loss(w) = w'Aw - 2b'w + const.
  Matrix normal_matrix() const { return T_.transpose() * r_.asDiagonal() * T_ / static_cast<double>(rows()); }
  Vector normal_vector() const { return T_.transpose() * r_.cwiseProduct(t_) / static_cast<double>(rows()); }

 private:
  Matrix T_;
  Vector t_;
  Vector r_;
};

// Column k holds candidate k's predictions on X.
inline Matrix candidate_matrix(const std::vector<CateModelPtr>& models, const Matrix& X) {
  Matrix out(X.rows(), static_cast<Eigen::Index>(models.size()));
  for (std::size_t k = 0; k < models.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = models[k]->predict(X);
  return out;
}

inline StackingProblem make_plugin_problem(Matrix candidate_predictions, Vector pseudo_outcomes) {
  return StackingProblem(std::move(candidate_predictions), std::move(pseudo_outcomes));
}

// Residual-on-residual loss as a weighted problem: targets (Y - mu)/(Z - p),
// row weights (Z - p)^2, so loss(w) = R(w) / m.
inline StackingProblem build_r_stacking_problem(const ExperimentView& avg, Matrix candidate_predictions,
                                                const Vector& mu_predictions, double p) {
  if (!(p > 0.0 && p < 1.0)) throw ParameterError("r-stacking: p must lie strictly inside (0,1)");
  require(mu_predictions.size() == avg.rows() && candidate_predictions.rows() == avg.rows(),
          "r-stacking: averaging rows and predictions disagree in length");
  const Vector centred = avg.assignments.cast<double>().array() - p;
  Vector target = (avg.outcomes - mu_predictions).cwiseQuotient(centred);
  return StackingProblem(std::move(candidate_predictions), std::move(target), centred.cwiseAbs2());
}

inline StackingProblem build_r_stacking_problem(const ExperimentView& avg, const std::vector<CateModelPtr>& candidates,
                                                const Regressor& mu, double p) {
  return build_r_stacking_problem(avg, candidate_matrix(candidates, avg.covariates), mu.predict(avg.covariates), p);
}

// (K+1)x(K+1) second-moment matrix of (target, T[i,:]) rows, row-weighted.
// loss(w) = g' G g with g = (1, -w).
inline Matrix gram(const StackingProblem& problem) {
  Matrix V(problem.rows(), problem.size() + 1);
  V.col(0) = problem.target();
  V.rightCols(problem.size()) = problem.candidates();
  Matrix G = V.transpose() * problem.row_weights().asDiagonal() * V / static_cast<double>(problem.rows());
  return 0.5 * (G + G.transpose());
}

// Euclidean projection onto {w >= 0, sum w = 1} (sort-and-threshold).
inline Vector project_simplex(const Vector& v) {
  const Eigen::Index K = v.size();
  require(K >= 1 && v.allFinite(), "project_simplex: input must be finite and nonempty");
  std::vector<double> u(v.data(), v.data() + K);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, theta = 0.0;
  for (Eigen::Index j = 0; j < K; ++j) {
    cumsum += u[static_cast<std::size_t>(j)];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - t > 0.0) theta = t;
  }
  Vector w = (v.array() - theta).max(0.0).matrix();
  const double s = w.sum();
  if (s > 0.0 && s != 1.0) w /= s;
  return w;
}

struct SolverOptions {
  double tol = 1e-10;
  int max_iter = 50000;
};

struct WeightVector {
  Vector weights;
  Regime regime = Regime::Simplex;
  double loss = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  bool singular = false;  // unconstrained only: ridge jitter was applied
  double jitter = 0.0;
};

inline void to_json(nlohmann::json& j, const WeightVector& w) {
  j = nlohmann::json{{"regime", to_string(w.regime)},
                     {"weights", std::vector<double>(w.weights.data(), w.weights.data() + w.weights.size())},
                     {"loss", w.loss},
                     {"kkt_residual", w.kkt_residual},
                     {"iterations", w.iterations},
                     {"singular", w.singular},
                     {"jitter", w.jitter}};
}

namespace detail {

inline Vector project(const Vector& v, Regime regime) {
  switch (regime) {
    case Regime::Simplex: return project_simplex(v);
    case Regime::NonNegative: return v.cwiseMax(0.0);
    case Regime::Unconstrained: return v;
  }
  return v;
}

// Natural residual |w - P(w - grad)|_inf; zero exactly at KKT points.
inline double kkt_residual(const Matrix& A, const Vector& b, const Vector& w, Regime regime) {
  const Vector g = 2.0 * (A * w - b);
  if (regime == Regime::Unconstrained) return g.cwiseAbs().maxCoeff();
  return (w - project(w - g, regime)).cwiseAbs().maxCoeff();
}

inline double quad_loss(const Matrix& A, const Vector& b, const Vector& w) { return w.dot(A * w) - 2.0 * b.dot(w); }

inline double power_iteration_lmax(const Matrix& A, int steps = 100) {
  Vector v = Vector::Ones(A.rows()) / std::sqrt(static_cast<double>(A.rows()));
  double lambda = 0.0;
  for (int s = 0; s < steps; ++s) {
    const Vector Av = A * v;
    const double norm = Av.norm();
    if (norm == 0.0) return 0.0;
    lambda = v.dot(Av);
    v = Av / norm;
  }
  return std::max(lambda, (A * v).norm());
}

// Solves the equality-constrained problem restricted to `support`; returns
// an empty vector if the result leaves the feasible set.
inline Vector polish(const Matrix& A, const Vector& b, const std::vector<Eigen::Index>& support, Regime regime) {
  const auto s = static_cast<Eigen::Index>(support.size());
  const Eigen::Index K = A.rows();
  if (s == 0) return Vector();
  Vector ws;
  if (regime == Regime::Simplex) {
    Matrix M = Matrix::Zero(s + 1, s + 1);
    Vector rhs(s + 1);
    for (Eigen::Index a = 0; a < s; ++a) {
      for (Eigen::Index c = 0; c < s; ++c) M(a, c) = 2.0 * A(support[static_cast<std::size_t>(a)], support[static_cast<std::size_t>(c)]);
      M(a, s) = 1.0;
      M(s, a) = 1.0;
      rhs[a] = 2.0 * b[support[static_cast<std::size_t>(a)]];
    }
    rhs[s] = 1.0;
    ws = M.completeOrthogonalDecomposition().solve(rhs).head(s);
  } else {
    Matrix M(s, s);
    Vector rhs(s);
    for (Eigen::Index a = 0; a < s; ++a) {
      for (Eigen::Index c = 0; c < s; ++c) M(a, c) = A(support[static_cast<std::size_t>(a)], support[static_cast<std::size_t>(c)]);
      rhs[a] = b[support[static_cast<std::size_t>(a)]];
    }
    ws = M.completeOrthogonalDecomposition().solve(rhs);
  }
  if (!ws.allFinite() || ws.minCoeff() < -1e-12) return Vector();
  Vector w = Vector::Zero(K);
  for (Eigen::Index a = 0; a < s; ++a) w[support[static_cast<std::size_t>(a)]] = std::max(ws[a], 0.0);
  if (regime == Regime::Simplex) {
    const double sum = w.sum();
    if (!(sum > 0.0)) return Vector();
    w /= sum;
  }
  return w;
}

inline WeightVector solve_unconstrained(const Matrix& A, const Vector& b, const SolverOptions& opt) {
  WeightVector out;
  out.regime = Regime::Unconstrained;
  const Eigen::Index K = A.rows();
  Matrix M = A;
  Eigen::LDLT<Matrix> ldlt(M);
  const double trace = A.trace();
  // rcond is only an estimate; the pivot ratio catches exact collinearity.
  const Vector d = ldlt.vectorD().cwiseAbs();
  const bool tiny_pivot = !(d.minCoeff() > 1e-12 * d.maxCoeff());
  if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-12) || tiny_pivot || trace <= 0.0) {
    out.singular = true;
    out.jitter = 1e-10 * (trace > 0.0 ? trace / static_cast<double>(K) : 1.0);
    M.diagonal().array() += out.jitter;
    ldlt.compute(M);
  }
  Vector w = ldlt.solve(b);
  for (int refine = 0; refine < 3; ++refine) {
    const Vector r = b - M * w;
    if (2.0 * r.cwiseAbs().maxCoeff() <= opt.tol) break;
    w += ldlt.solve(r);
  }
  out.weights = w;
  out.iterations = 1;
  out.kkt_residual = kkt_residual(M, b, w, Regime::Unconstrained);
  if (!(out.kkt_residual <= opt.tol) || !w.allFinite())
    throw ConvergenceError("unconstrained stacking: KKT residual " + std::to_string(out.kkt_residual) +
                               " above tolerance",
                           out.kkt_residual, 1);
  return out;
}

}  // namespace detail

// Minimizes the problem's weighted loss over the regime's feasible set with
// accelerated projected gradient (step 1/Lip, adaptive restart), starting
// from the uniform point on the simplex and from zero on the orthant. Every
// few iterations the current support is polished by solving its KKT system
// exactly; the polished point is kept only if it certifies the tolerance.
inline WeightVector solve_stacking(const StackingProblem& problem, Regime regime, const SolverOptions& opt = {}) {
  require(opt.tol > 0.0, "solve_stacking: tol must be positive");
  require(opt.max_iter >= 1, "solve_stacking: max_iter must be positive");
  const Eigen::Index K = problem.size();
  Matrix A = problem.normal_matrix();
  A = 0.5 * (A + A.transpose());
  const Vector b = problem.normal_vector();

  WeightVector out;
  out.regime = regime;
  if (regime == Regime::Unconstrained) {
    out = detail::solve_unconstrained(A, b, opt);
    out.loss = problem.loss(out.weights);
    return out;
  }

  Vector w = regime == Regime::Simplex ? Vector::Constant(K, 1.0 / static_cast<double>(K)) : Vector::Zero(K);
  const double lip = 2.0 * detail::power_iteration_lmax(A) * 1.01;

  auto finish = [&](Vector weights, int iters) {
    if (regime == Regime::Simplex) {
      // A vertex (single candidate) with strictly lower loss replaces the
      // iterate, so the stack is never worse than its best member.
      double best = problem.loss(weights);
      for (Eigen::Index k = 0; k < K; ++k) {
        Vector e = Vector::Zero(K);
        e[k] = 1.0;
        const double lk = problem.loss(e);
        if (lk < best) {
          best = lk;
          weights = e;
        }
      }
    }
    out.weights = std::move(weights);
    out.iterations = iters;
    out.kkt_residual = detail::kkt_residual(A, b, out.weights, regime);
    out.loss = problem.loss(out.weights);
    return out;
  };

  double res = detail::kkt_residual(A, b, w, regime);
  if (res <= opt.tol || lip <= 0.0) return finish(w, 0);

  auto try_polish = [&](const Vector& current) -> Vector {
    const double cur_loss = detail::quad_loss(A, b, current);
    const double scale = current.cwiseAbs().maxCoeff();
    for (double cut : {0.0, 1e-10 * scale, 1e-6 * scale}) {
      std::vector<Eigen::Index> support;
      for (Eigen::Index k = 0; k < K; ++k)
        if (current[k] > cut) support.push_back(k);
      Vector cand = detail::polish(A, b, support, regime);
      if (cand.size() == 0) continue;
      if (detail::kkt_residual(A, b, cand, regime) <= opt.tol &&
          detail::quad_loss(A, b, cand) <= cur_loss + 1e-12 * (1.0 + std::abs(cur_loss)))
        return cand;
    }
    return Vector();
  };

  Vector y = w;
  double t = 1.0;
  double f_w = detail::quad_loss(A, b, w);
  for (int it = 1; it <= opt.max_iter; ++it) {
    const Vector g = 2.0 * (A * y - b);
    Vector w_next = detail::project(y - g / lip, regime);
    double f_next = detail::quad_loss(A, b, w_next);
    if (f_next > f_w) {
      // Momentum overshoot: restart from a plain projected-gradient step.
      t = 1.0;
      w_next = detail::project(w - 2.0 * (A * w - b) / lip, regime);
      f_next = detail::quad_loss(A, b, w_next);
      y = w_next;
    } else {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = w_next + ((t - 1.0) / t_next) * (w_next - w);
      t = t_next;
    }
    w = std::move(w_next);
    f_w = f_next;

    res = detail::kkt_residual(A, b, w, regime);
    if (res <= opt.tol) return finish(w, it);
    if (it % 10 == 0) {
      Vector polished = try_polish(w);
      if (polished.size() > 0) return finish(polished, it);
    }
  }
  throw ConvergenceError("stacking solver (" + to_string(regime) + ") did not converge: KKT residual " +
                             std::to_string(res) + " after " + std::to_string(opt.max_iter) + " iterations",
                         res, opt.max_iter);
}

// tau_s(x) = sum_k w_k tau_k(x).
class StackedCateModel final : public CateModel {
 public:
  StackedCateModel(Vector weights, std::vector<CateModelPtr> candidates, std::string label = "causal_stack")
      : CateModel(std::move(label)), weights_(std::move(weights)), candidates_(std::move(candidates)) {
    require(weights_.size() == static_cast<Eigen::Index>(candidates_.size()),
            "stacked model: one weight per candidate required");
  }

  Vector predict(const Matrix& X) const override { return candidate_matrix(candidates_, X) * weights_; }

  const Vector& weights() const { return weights_; }
  const std::vector<CateModelPtr>& candidates() const { return candidates_; }

 private:
  Vector weights_;
  std::vector<CateModelPtr> candidates_;
};

}  // namespace cate_stack
