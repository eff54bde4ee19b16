#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cate_stack/common.hpp"
#include "cate_stack/tree.hpp"

namespace cate_stack {

enum class RegressorKind { Ridge, Lasso, CART, RandomForest, GradientBoosting, KNN, KernelRidge, ConstantMean };

inline std::string to_string(RegressorKind k) {
  switch (k) {
    case RegressorKind::Ridge: return "ridge";
    case RegressorKind::Lasso: return "lasso";
    case RegressorKind::CART: return "cart";
    case RegressorKind::RandomForest: return "random_forest";
    case RegressorKind::GradientBoosting: return "gradient_boosting";
    case RegressorKind::KNN: return "knn";
    case RegressorKind::KernelRidge: return "kernel_ridge";
    case RegressorKind::ConstantMean: return "constant_mean";
  }
  return "?";
}

inline RegressorKind parse_regressor_kind(const std::string& s) {
  for (auto k : {RegressorKind::Ridge, RegressorKind::Lasso, RegressorKind::CART, RegressorKind::RandomForest,
                 RegressorKind::GradientBoosting, RegressorKind::KNN, RegressorKind::KernelRidge,
                 RegressorKind::ConstantMean})
    if (to_string(k) == s) return k;
  throw ParameterError("unknown regressor kind '" + s + "'");
}

// Default hyperparameters per kind. These are also the only accepted keys.
inline const std::map<std::string, double>& regressor_defaults(RegressorKind kind) {
  static const std::map<RegressorKind, std::map<std::string, double>> table = {
      {RegressorKind::Ridge, {{"penalty", 0.0}}},
      // penalty < 0 means "choose by cross-validation over the path".
      {RegressorKind::Lasso,
       {{"penalty", -1.0}, {"n_lambdas", 50}, {"folds", 5}, {"lambda_min_ratio", 1e-4}, {"max_iter", 10000},
        {"tol", 1e-9}}},
      {RegressorKind::CART, {{"max_depth", 6}, {"min_leaf", 5}}},
      // mtry 0 means ceil(d/3); max_depth 0 means unlimited.
      {RegressorKind::RandomForest, {{"n_trees", 200}, {"mtry", 0}, {"min_leaf", 5}, {"max_depth", 0}}},
      {RegressorKind::GradientBoosting, {{"n_rounds", 100}, {"learning_rate", 0.1}, {"max_depth", 3}, {"min_leaf", 1}}},
      {RegressorKind::KNN, {{"k", 10}}},
      // bandwidth 0 means median pairwise distance of the training rows.
      {RegressorKind::KernelRidge, {{"bandwidth", 0.0}, {"penalty", 1.0}}},
      {RegressorKind::ConstantMean, {}},
  };
  return table.at(kind);
}

class RegressorSpec {
 public:
  RegressorSpec() : RegressorSpec(RegressorKind::ConstantMean) {}

  explicit RegressorSpec(RegressorKind kind, std::map<std::string, double> params = {}, std::uint64_t seed = 0)
      : kind_(kind), params_(std::move(params)), seed_(seed) {
    const auto& defaults = regressor_defaults(kind_);
    for (const auto& [key, value] : params_) {
      if (!defaults.count(key))
        throw ParameterError("regressor '" + to_string(kind_) + "' has no hyperparameter '" + key + "'");
      if (!std::isfinite(value)) throw ParameterError("hyperparameter '" + key + "' must be finite");
    }
  }

  RegressorKind kind() const { return kind_; }
  std::uint64_t seed() const { return seed_; }
  const std::map<std::string, double>& params() const { return params_; }

  double param(const std::string& key) const {
    auto it = params_.find(key);
    return it != params_.end() ? it->second : regressor_defaults(kind_).at(key);
  }

  RegressorSpec with_seed(std::uint64_t seed) const { return RegressorSpec(kind_, params_, seed); }

  friend bool operator==(const RegressorSpec&, const RegressorSpec&) = default;

 private:
  RegressorKind kind_;
  std::map<std::string, double> params_;
  std::uint64_t seed_;
};

inline void to_json(nlohmann::json& j, const RegressorSpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind())}, {"params", s.params()}, {"seed", s.seed()}};
}

inline void from_json(const nlohmann::json& j, RegressorSpec& s) {
  if (!j.is_object() || !j.contains("kind")) throw ParameterError("regressor spec needs a 'kind'");
  std::map<std::string, double> params;
  if (j.contains("params")) {
    for (const auto& [k, v] : j.at("params").items()) {
      if (!v.is_number()) throw ParameterError("regressor param '" + k + "' must be numeric");
      params[k] = v.get<double>();
    }
  }
  s = RegressorSpec(parse_regressor_kind(j.at("kind").get<std::string>()), params,
                    j.value("seed", std::uint64_t{0}));
}

// ---------------------------------------------------------------------------

class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual void fit(const Matrix& X, const Vector& y, const Vector& w) = 0;
  virtual Vector predict(const Matrix& X) const = 0;
};

using RegressorPtr = std::shared_ptr<const Regressor>;

namespace detail {

inline void check_fit_inputs(const Matrix& X, const Vector& y, const Vector& w) {
  if (X.rows() == 0) throw ParameterError("cannot fit a regressor on zero rows");
  if (y.size() != X.rows() || w.size() != X.rows())
    throw ParameterError("regressor fit: X, y and w must have equal length");
  if ((w.array() < 0.0).any() || !w.allFinite()) throw ParameterError("regressor fit: weights must be nonnegative");
  if (w.sum() <= 0.0) throw ParameterError("regressor fit: weights must not all be zero");
  if (!y.allFinite() || !X.allFinite()) throw ParameterError("regressor fit: non-finite input");
}

inline double weighted_mean(const Vector& v, const Vector& w) { return w.dot(v) / w.sum(); }

}  // namespace detail

class ConstantMeanRegressor final : public Regressor {
 public:
  void fit(const Matrix& X, const Vector& y, const Vector& w) override {
    detail::check_fit_inputs(X, y, w);
    mean_ = detail::weighted_mean(y, w);
  }
  Vector predict(const Matrix& X) const override { return Vector::Constant(X.rows(), mean_); }
  double value() const { return mean_; }

 private:
  double mean_ = 0.0;
};

// Weighted ridge regression with an unpenalized intercept.
class RidgeRegressor final : public Regressor {
 public:
  explicit RidgeRegressor(double penalty = 0.0) : penalty_(penalty) {
    require(penalty >= 0.0, "ridge penalty must be nonnegative");
  }

  void fit(const Matrix& X, const Vector& y, const Vector& w) override {
    detail::check_fit_inputs(X, y, w);
    const double W = w.sum();
    const Eigen::RowVectorXd xbar = (w.transpose() * X) / W;
    const double ybar = w.dot(y) / W;
    const Vector sw = w.cwiseSqrt();
    const Matrix Xs = sw.asDiagonal() * (X.rowwise() - xbar);
    const Vector ys = sw.cwiseProduct(y.array().matrix() - Vector::Constant(y.size(), ybar));
    if (X.cols() == 0) {
      coef_ = Vector(0);
    } else if (penalty_ > 0.0) {
      Matrix A = Xs.transpose() * Xs;
      A.diagonal().array() += penalty_;
      coef_ = A.ldlt().solve(Xs.transpose() * ys);
    } else {
      coef_ = Xs.completeOrthogonalDecomposition().solve(ys);
    }
    intercept_ = ybar - xbar.dot(coef_);
  }

  Vector predict(const Matrix& X) const override {
    return (X * coef_).array() + intercept_;
  }

  const Vector& coefficients() const { return coef_; }
  double intercept() const { return intercept_; }

 private:
  double penalty_;
  Vector coef_;
  double intercept_ = 0.0;
};

// Balanced fold labels in [0, folds) for n rows, shuffled by seed.
inline std::vector<int> kfold_assignment(Eigen::Index n, int folds, std::uint64_t seed) {
  require(folds >= 2, "need at least 2 folds");
  require(n >= folds, "need at least as many rows as folds");
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> fold(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k)
    fold[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = static_cast<int>((k * folds) / n);
  return fold;
}

// Weighted lasso by cyclic coordinate descent on standardized features.
// Objective: (1 / 2W) sum_i w_i (y_i - b - x_i beta)^2 + lambda |beta|_1.
// When no fixed penalty is given, lambda is picked by k-fold CV over a
// log-spaced path from lambda_max down to lambda_max * lambda_min_ratio.
class LassoRegressor final : public Regressor {
 public:
  struct Options {
    double penalty = -1.0;
    int n_lambdas = 50;
    int folds = 5;
    double lambda_min_ratio = 1e-4;
    int max_iter = 10000;
    double tol = 1e-9;
    std::uint64_t seed = 0;
  };

  explicit LassoRegressor(Options opt) : opt_(opt) {
    require(opt_.n_lambdas >= 1, "lasso: n_lambdas must be positive");
    require(opt_.lambda_min_ratio > 0.0 && opt_.lambda_min_ratio < 1.0, "lasso: lambda_min_ratio must be in (0,1)");
  }

  void fit(const Matrix& X, const Vector& y, const Vector& w) override {
    detail::check_fit_inputs(X, y, w);
    if (opt_.penalty >= 0.0) {
      lambda_ = opt_.penalty;
      fit_path(X, y, w, {lambda_});
      return;
    }
    const auto path = lambda_path(X, y, w);
    const Eigen::Index n = X.rows();
    const int folds = static_cast<int>(std::min<Eigen::Index>(opt_.folds, n));
    if (folds < 2 || path.size() == 1) {
      lambda_ = path.back();
      fit_path(X, y, w, path);
      return;
    }
    const auto fold = kfold_assignment(n, folds, opt_.seed);
    std::vector<double> err(path.size(), 0.0);
    for (int f = 0; f < folds; ++f) {
      std::vector<Eigen::Index> tr, te;
      for (Eigen::Index i = 0; i < n; ++i) (fold[static_cast<std::size_t>(i)] == f ? te : tr).push_back(i);
      const Matrix Xtr = select_rows(X, tr);
      const Vector ytr = select_entries(y, tr), wtr = select_entries(w, tr);
      if (wtr.sum() <= 0.0) continue;
      const Matrix Xte = select_rows(X, te);
      const Vector yte = select_entries(y, te), wte = select_entries(w, te);
      LassoRegressor sub(opt_);
      sub.fit_path(Xtr, ytr, wtr, path, [&](std::size_t k) {
        const Vector r = yte - sub.predict(Xte);
        err[k] += wte.dot(r.cwiseAbs2());
      });
    }
    const auto best = static_cast<std::size_t>(std::min_element(err.begin(), err.end()) - err.begin());
    lambda_ = path[best];
    fit_path(X, y, w, std::vector<double>(path.begin(), path.begin() + static_cast<std::ptrdiff_t>(best) + 1));
  }

  Vector predict(const Matrix& X) const override { return (X * coef_).array() + intercept_; }

  const Vector& coefficients() const { return coef_; }
  double intercept() const { return intercept_; }
  double lambda() const { return lambda_; }

 private:
  struct Standardized {
    Matrix Xs;
    Vector ys;
    Eigen::RowVectorXd xbar;
    Vector scale;
    double ybar = 0.0;
  };

  static Standardized standardize(const Matrix& X, const Vector& y, const Vector& w) {
    Standardized s;
    const double W = w.sum();
    s.xbar = (w.transpose() * X) / W;
    s.ybar = w.dot(y) / W;
    s.Xs = X.rowwise() - s.xbar;
    s.scale.resize(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const double var = w.dot(s.Xs.col(j).cwiseAbs2()) / W;
      s.scale[j] = var > 1e-24 ? std::sqrt(var) : 0.0;
      if (s.scale[j] > 0.0)
        s.Xs.col(j) /= s.scale[j];
      else
        s.Xs.col(j).setZero();
    }
    s.ys = y.array() - s.ybar;
    return s;
  }

  std::vector<double> lambda_path(const Matrix& X, const Vector& y, const Vector& w) const {
    const auto s = standardize(X, y, w);
    const double W = w.sum();
    double lmax = 0.0;
    for (Eigen::Index j = 0; j < X.cols(); ++j)
      lmax = std::max(lmax, std::abs(s.Xs.col(j).cwiseProduct(w).dot(s.ys)) / W);
    if (lmax <= 0.0) return {0.0};
    std::vector<double> path(static_cast<std::size_t>(opt_.n_lambdas));
    for (int k = 0; k < opt_.n_lambdas; ++k) {
      const double frac = opt_.n_lambdas == 1 ? 0.0 : static_cast<double>(k) / (opt_.n_lambdas - 1);
      path[static_cast<std::size_t>(k)] = lmax * std::pow(opt_.lambda_min_ratio, frac);
    }
    return path;
  }

  // Fits each lambda in turn with warm starts; the model state after the call
  // corresponds to the last lambda. `visit(k)` runs after lambda k is fitted.
  template <typename Visit = void (*)(std::size_t)>
  void fit_path(const Matrix& X, const Vector& y, const Vector& w, const std::vector<double>& path,
                Visit visit = [](std::size_t) {}) {
    const auto s = standardize(X, y, w);
    const double W = w.sum();
    const Eigen::Index d = X.cols();
    Vector beta = Vector::Zero(d);
    Vector r = s.ys;
    const Vector wn = w / W;
    Vector colnorm(d);
    for (Eigen::Index j = 0; j < d; ++j) colnorm[j] = wn.dot(s.Xs.col(j).cwiseAbs2());
    for (std::size_t k = 0; k < path.size(); ++k) {
      const double lam = path[k];
      for (int it = 0; it < opt_.max_iter; ++it) {
        double max_delta = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
          if (colnorm[j] <= 0.0) continue;
          const double rho = s.Xs.col(j).cwiseProduct(wn).dot(r) + colnorm[j] * beta[j];
          const double soft = std::copysign(std::max(std::abs(rho) - lam, 0.0), rho);
          const double nb = soft / colnorm[j];
          const double delta = nb - beta[j];
          if (delta != 0.0) {
            r -= delta * s.Xs.col(j);
            beta[j] = nb;
            max_delta = std::max(max_delta, std::abs(delta) * std::sqrt(colnorm[j]));
          }
        }
        if (max_delta < opt_.tol) break;
      }
      coef_.resize(d);
      for (Eigen::Index j = 0; j < d; ++j) coef_[j] = s.scale[j] > 0.0 ? beta[j] / s.scale[j] : 0.0;
      intercept_ = s.ybar - s.xbar.dot(coef_);
      lambda_ = lam;
      visit(k);
    }
  }

  Options opt_;
  Vector coef_;
  double intercept_ = 0.0;
  double lambda_ = 0.0;
};

class CartRegressor final : public Regressor {
 public:
  explicit CartRegressor(TreeParams params) : params_(params) {}

  void fit(const Matrix& X, const Vector& y, const Vector& w) override {
    detail::check_fit_inputs(X, y, w);
    tree_.fit(X, y, w, params_);
  }
  Vector predict(const Matrix& X) const override { return tree_.predict(X); }
  const RegressionTree& tree() const { return tree_; }

 private:
  TreeParams params_;
  RegressionTree tree_;
};

// Bagged trees on bootstrap resamples, sample weights multiplying bootstrap
// counts. Tree t is seeded by derive_seed(seed, t), so the forest is
// identical however it is scheduled.
class RandomForestRegressor final : public Regressor {
 public:
  RandomForestRegressor(int n_trees, int mtry, TreeParams tree_params, std::uint64_t seed)
      : n_trees_(n_trees), mtry_(mtry), params_(tree_params), seed_(seed) {
    require(n_trees >= 1, "random forest needs at least one tree");
  }

  void fit(const Matrix& X, const Vector& y, const Vector& w) override {
    detail::check_fit_inputs(X, y, w);
    const Eigen::Index n = X.rows();
    TreeParams p = params_;
    p.mtry = mtry_ > 0 ? mtry_ : static_cast<int>((X.cols() + 2) / 3);
    const auto order = presort_features(X);
    trees_.assign(static_cast<std::size_t>(n_trees_), {});
    Vector tree_w(n);
    for (int t = 0; t < n_trees_; ++t) {
      std::mt19937_64 rng(derive_seed(seed_, static_cast<std::uint64_t>(t)));
      std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
      tree_w.setZero();
      for (Eigen::Index k = 0; k < n; ++k) tree_w[pick(rng)] += 1.0;
      tree_w.array() *= w.array();
      if (tree_w.sum() <= 0.0) tree_w = w;
      trees_[static_cast<std::size_t>(t)].fit(X, y, tree_w, p, &rng, &order);
    }
  }

  Vector predict(const Matrix& X) const override { return tree_predictions(X).rowwise().mean(); }

  // Column t holds tree t's predictions.
  Matrix tree_predictions(const Matrix& X) const {
    Matrix out(X.rows(), static_cast<Eigen::Index>(trees_.size()));
    for (std::size_t t = 0; t < trees_.size(); ++t) out.col(static_cast<Eigen::Index>(t)) = trees_[t].predict(X);
    return out;
  }

  std::size_t size() const { return trees_.size(); }

 private:
  int n_trees_;
  int mtry_;
  TreeParams params_;
  std::uint64_t seed_;
  std::vector<RegressionTree> trees_;
};

// Least-squares gradient boosting: start at the weighted mean, then add
// learning_rate * tree fitted (weighted) to the current residuals.
class GradientBoostingRegressor final : public Regressor {
 public:
  GradientBoostingRegressor(int n_rounds, double learning_rate, TreeParams tree_params)
      : n_rounds_(n_rounds), eta_(learning_rate), params_(tree_params) {
    require(n_rounds >= 0, "boosting rounds must be nonnegative");
    require(learning_rate > 0.0, "learning rate must be positive");
  }

  void fit(const Matrix& X, const Vector& y, const Vector& w) override {
    detail::check_fit_inputs(X, y, w);
    base_ = detail::weighted_mean(y, w);
    const auto order = presort_features(X);
    Vector current = Vector::Constant(y.size(), base_);
    trees_.assign(static_cast<std::size_t>(n_rounds_), {});
    for (int m = 0; m < n_rounds_; ++m) {
      const Vector resid = y - current;
      auto& tree = trees_[static_cast<std::size_t>(m)];
      tree.fit(X, resid, w, params_, nullptr, &order);
      current += eta_ * tree.predict(X);
    }
  }

  Vector predict(const Matrix& X) const override { return predict_rounds(X, static_cast<int>(trees_.size())); }

  // Prediction using only the first `rounds` trees.
  Vector predict_rounds(const Matrix& X, int rounds) const {
    Vector out = Vector::Constant(X.rows(), base_);
    for (int m = 0; m < rounds && m < static_cast<int>(trees_.size()); ++m)
      out += eta_ * trees_[static_cast<std::size_t>(m)].predict(X);
    return out;
  }

  int rounds() const { return static_cast<int>(trees_.size()); }

 private:
  int n_rounds_;
  double eta_;
  TreeParams params_;
  double base_ = 0.0;
  std::vector<RegressionTree> trees_;
};

// Weighted k-nearest-neighbour average (Euclidean); distance ties go to the
// lower training index. Zero-weight rows are dropped at fit time.
class KnnRegressor final : public Regressor {
 public:
  explicit KnnRegressor(int k) : k_(k) { require(k >= 1, "knn: k must be at least 1"); }

  void fit(const Matrix& X, const Vector& y, const Vector& w) override {
    detail::check_fit_inputs(X, y, w);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      if (w[i] > 0.0) keep.push_back(i);
    X_ = select_rows(X, keep);
    y_ = select_entries(y, keep);
    w_ = select_entries(w, keep);
  }

  Vector predict(const Matrix& X) const override {
    const Eigen::Index n = X_.rows();
    const auto k = static_cast<std::size_t>(std::min<Eigen::Index>(k_, n));
    Vector out(X.rows());
    std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n));
    for (Eigen::Index q = 0; q < X.rows(); ++q) {
      for (Eigen::Index i = 0; i < n; ++i) dist[static_cast<std::size_t>(i)] = {(X_.row(i) - X.row(q)).squaredNorm(), i};
      std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
      double sw = 0.0, swy = 0.0;
      for (std::size_t m = 0; m < k; ++m) {
        const auto i = dist[m].second;
        sw += w_[i];
        swy += w_[i] * y_[i];
      }
      out[q] = swy / sw;
    }
    return out;
  }

 private:
  int k_;
  Matrix X_;
  Vector y_;
  Vector w_;
};

// Gaussian-kernel ridge regression on the weighted-mean-centred target:
// minimizes sum_i w_i (y_i - f(x_i))^2 + penalty * |f|_H^2.
class KernelRidgeRegressor final : public Regressor {
 public:
  KernelRidgeRegressor(double bandwidth, double penalty) : bandwidth_(bandwidth), penalty_(penalty) {
    require(bandwidth >= 0.0, "kernel ridge: bandwidth must be nonnegative");
    require(penalty > 0.0, "kernel ridge: penalty must be positive");
  }

  static double median_pairwise_distance(const Matrix& X) {
    const Eigen::Index n = X.rows();
    if (n < 2) return 1.0;
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) d.push_back((X.row(i) - X.row(j)).norm());
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    double med = *mid;
    if (d.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d.begin(), mid));
    return med > 0.0 ? med : 1.0;
  }

  void fit(const Matrix& X, const Vector& y, const Vector& w) override {
    detail::check_fit_inputs(X, y, w);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      if (w[i] > 0.0) keep.push_back(i);
    X_ = select_rows(X, keep);
    const Vector yk = select_entries(y, keep), wk = select_entries(w, keep);
    h_ = bandwidth_ > 0.0 ? bandwidth_ : median_pairwise_distance(X_);
    offset_ = detail::weighted_mean(yk, wk);
    // (W^1/2 K W^1/2 + penalty I) u = W^1/2 (y - offset); alpha = W^1/2 u.
    const Vector sw = wk.cwiseSqrt();
    Matrix A = kernel(X_, X_);
    A = sw.asDiagonal() * A * sw.asDiagonal();
    A.diagonal().array() += penalty_;
    const Vector rhs = sw.cwiseProduct((yk.array() - offset_).matrix());
    alpha_ = sw.cwiseProduct(A.llt().solve(rhs));
  }

  Vector predict(const Matrix& X) const override {
    return (kernel(X, X_) * alpha_).array() + offset_;
  }

  double bandwidth() const { return h_; }

 private:
  Matrix kernel(const Matrix& A, const Matrix& B) const {
    const Vector an = A.rowwise().squaredNorm();
    const Vector bn = B.rowwise().squaredNorm();
    Matrix K = -2.0 * A * B.transpose();
    K.colwise() += an;
    K.rowwise() += bn.transpose();
    const double scale = -1.0 / (2.0 * h_ * h_);
    return (K.array().max(0.0) * scale).exp().matrix();
  }

  double bandwidth_;
  double penalty_;
  double h_ = 1.0;
  double offset_ = 0.0;
  Matrix X_;
  Vector alpha_;
};

// ---------------------------------------------------------------------------

inline std::unique_ptr<Regressor> make_regressor(const RegressorSpec& spec) {
  auto as_int = [&](const char* key) { return static_cast<int>(std::lround(spec.param(key))); };
  switch (spec.kind()) {
    case RegressorKind::ConstantMean: return std::make_unique<ConstantMeanRegressor>();
    case RegressorKind::Ridge: return std::make_unique<RidgeRegressor>(spec.param("penalty"));
    case RegressorKind::Lasso: {
      LassoRegressor::Options o;
      o.penalty = spec.param("penalty");
      o.n_lambdas = as_int("n_lambdas");
      o.folds = as_int("folds");
      o.lambda_min_ratio = spec.param("lambda_min_ratio");
      o.max_iter = as_int("max_iter");
      o.tol = spec.param("tol");
      o.seed = spec.seed();
      return std::make_unique<LassoRegressor>(o);
    }
    case RegressorKind::CART:
      return std::make_unique<CartRegressor>(TreeParams{as_int("max_depth"), as_int("min_leaf"), 0});
    case RegressorKind::RandomForest:
      return std::make_unique<RandomForestRegressor>(as_int("n_trees"), as_int("mtry"),
                                                     TreeParams{as_int("max_depth"), as_int("min_leaf"), 0},
                                                     spec.seed());
    case RegressorKind::GradientBoosting:
      return std::make_unique<GradientBoostingRegressor>(as_int("n_rounds"), spec.param("learning_rate"),
                                                         TreeParams{as_int("max_depth"), as_int("min_leaf"), 0});
    case RegressorKind::KNN: return std::make_unique<KnnRegressor>(as_int("k"));
    case RegressorKind::KernelRidge:
      return std::make_unique<KernelRidgeRegressor>(spec.param("bandwidth"), spec.param("penalty"));
  }
  throw ParameterError("unhandled regressor kind");
}

inline RegressorPtr fit_regressor(const RegressorSpec& spec, const Matrix& X, const Vector& y, const Vector& w) {
  auto model = make_regressor(spec);
  model->fit(X, y, w);
  return RegressorPtr(std::move(model));
}

inline RegressorPtr fit_regressor(const RegressorSpec& spec, const Matrix& X, const Vector& y) {
  return fit_regressor(spec, X, y, Vector::Ones(y.size()));
}

// Mean over folds of the held-out mean squared error (unit weights).
inline double cross_val_mse(const RegressorSpec& spec, const Matrix& X, const Vector& y, int folds,
                            std::uint64_t seed) {
  if (folds < 2) throw ParameterError("cross_val_mse: folds must be at least 2");
  if (X.rows() < folds) throw ParameterError("cross_val_mse: more folds than rows");
  const auto fold = kfold_assignment(X.rows(), folds, seed);
  double total = 0.0;
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> tr, te;
    for (Eigen::Index i = 0; i < X.rows(); ++i) (fold[static_cast<std::size_t>(i)] == f ? te : tr).push_back(i);
    const auto model = fit_regressor(spec, select_rows(X, tr), select_entries(y, tr));
    const Vector r = select_entries(y, te) - model->predict(select_rows(X, te));
    total += r.squaredNorm() / static_cast<double>(r.size());
  }
  return total / folds;
}

}  // namespace cate_stack
