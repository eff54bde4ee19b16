#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "cate_stack/common.hpp"

namespace cate_stack {

struct TreeParams {
  int max_depth = 6;  // 0 = unlimited
  int min_leaf = 5;   // minimum rows (not weight) per child
  int mtry = 0;       // features tried per node; 0 = all
};

// Row indices sorted by each feature, ties broken by row index. Shared by
// every tree grown on the same design matrix.
using FeatureOrder = std::vector<std::vector<int>>;

inline FeatureOrder presort_features(const Matrix& X) {
  FeatureOrder order(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index f = 0; f < X.cols(); ++f) {
    auto& o = order[static_cast<std::size_t>(f)];
    o.resize(static_cast<std::size_t>(X.rows()));
    std::iota(o.begin(), o.end(), 0);
    std::stable_sort(o.begin(), o.end(), [&](int a, int b) { return X(a, f) < X(b, f); });
  }
  return order;
}

// Weighted least-squares regression tree (CART). Split search maximizes the
// weighted SSE reduction; ties go to the lowest feature index, then the
// smallest threshold. Rows with zero weight are ignored.
class RegressionTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };

  void fit(const Matrix& X, const Vector& y, const Vector& w, const TreeParams& params,
           std::mt19937_64* rng = nullptr, const FeatureOrder* presorted = nullptr) {
    params_ = params;
    nodes_.clear();
    X_ = &X;
    y_ = &y;
    w_ = &w;
    rng_ = rng;
    const auto d = static_cast<std::size_t>(X.cols());

    FeatureOrder local;
    if (!presorted) {
      local = presort_features(X);
      presorted = &local;
    }
    sorted_.assign(d, {});
    for (std::size_t f = 0; f < d; ++f) {
      auto& s = sorted_[f];
      s.clear();
      s.reserve((*presorted)[f].size());
      for (int i : (*presorted)[f])
        if (w[i] > 0.0) s.push_back(i);
    }
    if (d == 0) {
      // No features: a single leaf at the weighted mean.
      sorted_.assign(1, {});
      for (Eigen::Index i = 0; i < y.size(); ++i)
        if (w[i] > 0.0) sorted_[0].push_back(static_cast<int>(i));
    }
    if (sorted_[0].empty()) throw ParameterError("regression tree: no rows with positive weight");
    go_left_.assign(static_cast<std::size_t>(X.rows()), 0);
    buffer_.resize(sorted_[0].size());
    build(0, static_cast<int>(sorted_[0].size()), 0);

    sorted_.clear();
    sorted_.shrink_to_fit();
    go_left_.clear();
    buffer_.clear();
    X_ = nullptr;
    y_ = nullptr;
    w_ = nullptr;
    rng_ = nullptr;
  }

  template <typename Row>
  double predict_row(const Row& x) const {
    int node = 0;
    while (nodes_[static_cast<std::size_t>(node)].feature >= 0) {
      const auto& nd = nodes_[static_cast<std::size_t>(node)];
      node = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes_[static_cast<std::size_t>(node)].value;
  }

  Vector predict(const Matrix& X) const {
    Vector out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) out[i] = predict_row(X.row(i));
    return out;
  }

  const std::vector<Node>& nodes() const { return nodes_; }

  int depth() const { return depth_of(0); }

 private:
  int depth_of(int node) const {
    const auto& nd = nodes_[static_cast<std::size_t>(node)];
    if (nd.feature < 0) return 0;
    return 1 + std::max(depth_of(nd.left), depth_of(nd.right));
  }

  int build(int lo, int hi, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();

    const auto& rows = sorted_[0];
    double W = 0.0, S = 0.0, SS = 0.0;
    for (int k = lo; k < hi; ++k) {
      const int i = rows[static_cast<std::size_t>(k)];
      const double wi = (*w_)[i], yi = (*y_)[i];
      W += wi;
      S += wi * yi;
      SS += wi * yi * yi;
    }
    nodes_[static_cast<std::size_t>(id)].value = S / W;

    const int count = hi - lo;
    const double sst = SS - S * S / W;
    const bool depth_ok = params_.max_depth <= 0 || depth < params_.max_depth;
    if (!depth_ok || count < 2 * std::max(1, params_.min_leaf) || sst <= 1e-12 * SS || X_->cols() == 0)
      return id;

    const auto features = candidate_features();
    const int min_leaf = std::max(1, params_.min_leaf);
    const double parent_score = S * S / W;
    double best_gain = 0.0;
    int best_feature = -1, best_pos = -1;
    double best_threshold = 0.0;
    for (int f : features) {
      const auto& s = sorted_[static_cast<std::size_t>(f)];
      double WL = 0.0, SL = 0.0;
      for (int k = lo; k < hi - 1; ++k) {
        const int i = s[static_cast<std::size_t>(k)];
        WL += (*w_)[i];
        SL += (*w_)[i] * (*y_)[i];
        const int n_left = k - lo + 1;
        if (n_left < min_leaf) continue;
        if (hi - lo - n_left < min_leaf) break;
        const double a = (*X_)(i, f);
        const double b = (*X_)(s[static_cast<std::size_t>(k + 1)], f);
        if (!(a < b)) continue;
        const double WR = W - WL, SR = S - SL;
        if (WL <= 0.0 || WR <= 0.0) continue;
        const double gain = SL * SL / WL + SR * SR / WR - parent_score;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_pos = n_left;
          double mid = 0.5 * (a + b);
          if (!(mid < b)) mid = a;
          best_threshold = mid;
        }
      }
    }
    if (best_feature < 0 || best_gain <= 1e-12 * sst) return id;

    // Mark rows going left, then stable-partition every feature's segment.
    const auto& s_best = sorted_[static_cast<std::size_t>(best_feature)];
    for (int k = lo; k < hi; ++k) go_left_[static_cast<std::size_t>(s_best[static_cast<std::size_t>(k)])] = k - lo < best_pos;
    for (auto& s : sorted_) {
      int left_end = lo, right_end = 0;
      for (int k = lo; k < hi; ++k) {
        const int i = s[static_cast<std::size_t>(k)];
        if (go_left_[static_cast<std::size_t>(i)])
          s[static_cast<std::size_t>(left_end++)] = i;
        else
          buffer_[static_cast<std::size_t>(right_end++)] = i;
      }
      std::copy(buffer_.begin(), buffer_.begin() + right_end, s.begin() + left_end);
    }

    const int mid = lo + best_pos;
    const int left = build(lo, mid, depth + 1);
    const int right = build(mid, hi, depth + 1);
    auto& nd = nodes_[static_cast<std::size_t>(id)];
    nd.feature = best_feature;
    nd.threshold = best_threshold;
    nd.left = left;
    nd.right = right;
    return id;
  }

  std::vector<int> candidate_features() const {
    const int d = static_cast<int>(X_->cols());
    std::vector<int> all(static_cast<std::size_t>(d));
    std::iota(all.begin(), all.end(), 0);
    if (params_.mtry <= 0 || params_.mtry >= d || rng_ == nullptr) return all;
    for (int k = 0; k < params_.mtry; ++k) {
      std::uniform_int_distribution<int> pick(k, d - 1);
      std::swap(all[static_cast<std::size_t>(k)], all[static_cast<std::size_t>(pick(*rng_))]);
    }
    all.resize(static_cast<std::size_t>(params_.mtry));
    std::sort(all.begin(), all.end());
    return all;
  }

  TreeParams params_;
  std::vector<Node> nodes_;

  // Scratch state, valid only during fit().
  const Matrix* X_ = nullptr;
  const Vector* y_ = nullptr;
  const Vector* w_ = nullptr;
  std::mt19937_64* rng_ = nullptr;
  FeatureOrder sorted_;
  std::vector<char> go_left_;
  std::vector<int> buffer_;
};

}  // namespace cate_stack
