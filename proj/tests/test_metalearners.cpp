#include <catch_amalgamated.hpp>

#include <random>

#include "cate_stack/metalearners.hpp"
#include "oracles.hpp"

using namespace cate_stack;
using Catch::Approx;

namespace {

// n rows, d uniform(-1,1) covariates, alternating assignment (exactly n/2 treated).
ExperimentView make_view(Eigen::Index n, Eigen::Index d, std::uint64_t seed,
                         const std::function<double(const Eigen::RowVectorXd&, int)>& outcome) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ExperimentView v{Matrix(n, d), Vector(n), IntVector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) v.covariates(i, j) = u(rng);
    v.assignments[i] = static_cast<int>(i % 2);
    v.outcomes[i] = outcome(v.covariates.row(i), v.assignments[i]);
  }
  return v;
}

Matrix grid(int n, Eigen::Index d = 1) {
  Matrix X = Matrix::Zero(n, d);
  for (int i = 0; i < n; ++i) X(i, 0) = -0.95 + 1.9 * i / (n - 1.0);
  return X;
}

double max_abs(const Vector& v) { return v.cwiseAbs().maxCoeff(); }

// Ridge on [x, z, x*z]: a fully interacted linear model for S-learning.
class InteractedRidge final : public Regressor {
 public:
  void fit(const Matrix& X, const Vector& y, const Vector& w) override { inner_.fit(expand(X), y, w); }
  Vector predict(const Matrix& X) const override { return inner_.predict(expand(X)); }

 private:
  static Matrix expand(const Matrix& Xz) {
    const Eigen::Index d = Xz.cols() - 1;
    Matrix out(Xz.rows(), 2 * d + 1);
    out.leftCols(d + 1) = Xz;
    for (Eigen::Index j = 0; j < d; ++j) out.col(d + 1 + j) = Xz.col(j).cwiseProduct(Xz.col(d));
    return out;
  }
  RidgeRegressor inner_{0.0};
};

const RegressorSpec kMean(RegressorKind::ConstantMean);
const RegressorSpec kRidge(RegressorKind::Ridge);

}  // namespace

TEST_CASE("t-learner") {
  SECTION("Y = Z with constant-mean base gives 1") {
    const auto v = make_view(20, 2, 1, [](const auto&, int z) { return double(z); });
    CHECK(fit_t_learner(v, kMean)->predict(grid(5, 2)) == Vector::Ones(5));
  }
  SECTION("Y1 = x, Y0 = 0 with ridge recovers x") {
    const auto v = make_view(50, 1, 2, [](const auto& x, int z) { return z ? x[0] : 0.0; });
    const Matrix X = grid(11);
    CHECK(max_abs(fit_t_learner(v, kRidge)->predict(X) - X.col(0)) < 1e-6);
  }
  SECTION("identical outcomes in both arms give 0") {
    // Each covariate row appears once per arm with the same outcome.
    auto v = make_view(40, 2, 3, [](const auto& x, int) { return x[0] * x[1]; });
    for (Eigen::Index i = 1; i < 40; i += 2) {
      v.covariates.row(i) = v.covariates.row(i - 1);
      v.outcomes[i] = v.outcomes[i - 1];
    }
    for (auto kind : {RegressorKind::Ridge, RegressorKind::CART, RegressorKind::KNN})
      CHECK(max_abs(fit_t_learner(v, RegressorSpec(kind))->predict(grid(7, 2))) < 1e-12);
  }
  SECTION("empty arm") {
    auto v = make_view(10, 1, 4, [](const auto&, int) { return 1.0; });
    v.assignments.setZero();
    CHECK_THROWS_AS(fit_t_learner(v, kMean), ArmEmptyError);
    v.assignments.setOnes();
    CHECK_THROWS_AS(fit_t_learner(v, kMean), ArmEmptyError);
  }
  SECTION("separate control base") {
    const auto v = make_view(60, 1, 5, [](const auto& x, int z) { return z ? 1.0 + x[0] : 2.0 * x[0]; });
    const auto m = fit_t_learner(v, kRidge, "t", kMean);
    const auto& arm = dynamic_cast<const ArmDifferenceModel&>(*m);
    CHECK(dynamic_cast<const ConstantMeanRegressor*>(&arm.control_model()) != nullptr);
    CHECK(dynamic_cast<const RidgeRegressor*>(&arm.treated_model()) != nullptr);
  }
}

TEST_CASE("s-learner") {
  SECTION("base ignoring Z gives 0") {
    const auto v = make_view(30, 2, 6, [](const auto& x, int z) { return x[0] + 5.0 * z; });
    CHECK(fit_s_learner(v, kMean)->predict(grid(5, 2)) == Vector::Zero(5));
  }
  SECTION("ridge on Y = 3Z + x gives 3") {
    const auto v = make_view(50, 1, 7, [](const auto& x, int z) { return 3.0 * z + x[0]; });
    CHECK(max_abs(fit_s_learner(v, kRidge)->predict(grid(9)).array() - 3.0) < 1e-6);
  }
  SECTION("depth-2 CART on Y = Z * step(x > 0) recovers the step") {
    const auto v = make_view(200, 1, 8, [](const auto& x, int z) { return z && x[0] > 0.0 ? 1.0 : 0.0; });
    const auto m = fit_s_learner(v, RegressorSpec(RegressorKind::CART, {{"max_depth", 2}, {"min_leaf", 1}}));
    const Matrix X = grid(20);
    const Vector tau = m->predict(X);
    for (int i = 0; i < 20; ++i) CHECK(tau[i] == (X(i, 0) > 0.05 ? 1.0 : 0.0));
  }
}

TEST_CASE("s- and t-learners coincide with a fully interacted linear base") {
  const auto v = make_view(80, 1, 9, [](const auto& x, int z) {
    return 0.5 + 2.0 * x[0] + z * (1.0 - 3.0 * x[0]) + 0.3 * std::sin(7.0 * x[0]);
  });
  const auto t = fit_t_learner(v, kRidge);
  auto joint = std::make_shared<InteractedRidge>();
  joint->fit(augment(v.covariates, v.assignments), v.outcomes, Vector::Ones(v.rows()));
  const AugmentedDifferenceModel s(joint, "s");
  const Matrix X = grid(15);
  CHECK(max_abs(s.predict(X) - t->predict(X)) < 1e-8);
  // Oracle: per-arm normal equations.
  const auto treated = v.arm_indices(1), control = v.arm_indices(0);
  const Vector b1 = oracle::ridge_normal_equations(select_rows(v.covariates, treated),
                                                   select_entries(v.outcomes, treated), Vector::Ones(40), 0.0);
  const Vector b0 = oracle::ridge_normal_equations(select_rows(v.covariates, control),
                                                   select_entries(v.outcomes, control), Vector::Ones(40), 0.0);
  const Vector expected = (b1[0] - b0[0]) + (b1[1] - b0[1]) * X.col(0).array();
  CHECK(max_abs(t->predict(X) - expected) < 1e-8);
}

TEST_CASE("x-learner") {
  SECTION("constant effect with constant-mean base") {
    const auto v = make_view(30, 2, 10, [](const auto&, int z) { return 4.0 + 1.5 * z; });
    CHECK(max_abs(fit_x_learner(v, kMean, 0.3)->predict(grid(4, 2)).array() - 1.5) < 1e-12);
  }
  const auto v = make_view(120, 2, 11, [](const auto& x, int z) { return x[0] + z * (1.0 + x[1] * x[1]); });
  const Matrix X = grid(10, 2);
  SECTION("p = 0.5 averages the stage-2 models") {
    const auto m = fit_x_learner(v, kRidge, 0.5);
    const Vector avg = 0.5 * (m->treated_effect_model().predict(X) + m->control_effect_model().predict(X));
    CHECK(max_abs(m->predict(X) - avg) < 1e-12);
  }
  SECTION("p = 0.1 blend against independently refitted stages") {
    const auto m = fit_x_learner(v, kRidge, 0.1);
    const auto t1 = v.arm_indices(1), t0 = v.arm_indices(0);
    const Matrix X1 = select_rows(v.covariates, t1), X0 = select_rows(v.covariates, t0);
    const Vector y1 = select_entries(v.outcomes, t1), y0 = select_entries(v.outcomes, t0);
    RidgeRegressor mu1, mu0, g1, g0;
    mu1.fit(X1, y1, Vector::Ones(X1.rows()));
    mu0.fit(X0, y0, Vector::Ones(X0.rows()));
    g1.fit(X1, y1 - mu0.predict(X1), Vector::Ones(X1.rows()));
    g0.fit(X0, mu1.predict(X0) - y0, Vector::Ones(X0.rows()));
    const Vector expected = 0.9 * g1.predict(X) + 0.1 * g0.predict(X);
    CHECK(max_abs(m->predict(X) - expected) < 1e-10);
  }
  SECTION("swapping the arms at p = 0.5 negates the estimate") {
    ExperimentView swapped = v;
    swapped.assignments = (1 - v.assignments.array()).matrix();
    const Vector a = fit_x_learner(v, kRidge, 0.5)->predict(X);
    const Vector b = fit_x_learner(swapped, kRidge, 0.5)->predict(X);
    CHECK(max_abs(a + b) < 1e-8);
  }
  CHECK_THROWS_AS(fit_x_learner(v, kRidge, 0.0), ParameterError);
}

TEST_CASE("r-learner") {
  SECTION("exact outcome model gives constant targets") {
    // Outcome mean is the constant 2 exactly because sum(Z - 0.5) = 0.
    const auto v = make_view(40, 2, 12, [](const auto&, int z) { return 2.0 + 1.7 * (z - 0.5); });
    const auto m = fit_r_learner(v, kMean, kMean, 0.5);
    CHECK(max_abs(m->predict(grid(5, 2)).array() - 1.7) < 1e-12);
  }
  const auto v = make_view(100, 2, 13, [](const auto& x, int z) { return x[1] + z * (0.5 + x[0]); });
  SECTION("p = 0.5 weighted fit equals the unweighted fit on transformed targets") {
    const auto m = fit_r_learner(v, kRidge, kRidge, 0.5);
    const Vector resid = v.outcomes - m->outcome_model().predict(v.covariates);
    const Vector target = resid.cwiseQuotient((v.assignments.cast<double>().array() - 0.5).matrix());
    RidgeRegressor plain;
    plain.fit(v.covariates, target, Vector::Ones(v.rows()));
    const Matrix X = grid(8, 2);
    CHECK(max_abs(m->predict(X) - plain.predict(X)) < 1e-10);
  }
  SECTION("p outside (0,1) is rejected") {
    CHECK_THROWS_AS(fit_r_learner(v, kRidge, kRidge, 0.0), ParameterError);
    CHECK_THROWS_AS(fit_r_learner(v, kRidge, kRidge, 1.0), ParameterError);
  }
  SECTION("weighted objective is non-increasing across boosting rounds") {
    const double p = 0.3;
    const auto gbm = RegressorSpec(RegressorKind::GradientBoosting, {{"n_rounds", 40}});
    const auto m = fit_r_learner(v, kRidge, gbm, p);
    const auto& effect = dynamic_cast<const GradientBoostingRegressor&>(m->effect_model());
    const Vector resid = v.outcomes - m->outcome_model().predict(v.covariates);
    const Vector zc = v.assignments.cast<double>().array() - p;
    double prev = std::numeric_limits<double>::infinity();
    for (int r = 0; r <= effect.rounds(); ++r) {
      const double obj = (resid - zc.cwiseProduct(effect.predict_rounds(v.covariates, r))).squaredNorm();
      CHECK(obj <= prev + 1e-9);
      prev = obj;
    }
  }
}

TEST_CASE("lasso r-learner recovers a sparse linear effect") {
  std::mt19937_64 rng(14);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::bernoulli_distribution coin(0.5);
  auto v = make_view(2000, 10, 15, [](const auto&, int) { return 0.0; });
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    v.assignments[i] = coin(rng);
    const auto x = v.covariates.row(i);
    v.outcomes[i] = x[2] - 0.5 * x[3] + v.assignments[i] * 2.0 * x[0] + noise(rng);
  }
  const RegressorSpec lasso(RegressorKind::Lasso, {}, 16);
  const auto m = fit_r_learner(v, lasso, lasso, 0.5);
  const auto& effect = dynamic_cast<const LassoRegressor&>(m->effect_model());
  CHECK(std::abs(effect.coefficients()[0] - 2.0) < 0.1);
  // Weighted least squares restricted to the true support agrees.
  const Vector zc = v.assignments.cast<double>().array() - 0.5;
  const Vector target = (v.outcomes - m->outcome_model().predict(v.covariates)).cwiseQuotient(zc);
  const Vector ref = oracle::ridge_normal_equations(v.covariates.leftCols(1), target, zc.cwiseAbs2(), 0.0);
  CHECK(std::abs(effect.coefficients()[0] - ref[1]) < 0.1);
}

TEST_CASE("constant difference") {
  ExperimentView v{Matrix::Zero(4, 1), Vector(4), IntVector(4)};
  v.outcomes << 2, 1, 4, 1;
  v.assignments << 1, 0, 1, 0;
  CHECK(fit_constant_diff(v)->predict(grid(3)) == Vector::Constant(3, 2.0));
  v.outcomes << 5, 2, 3, 4;
  v.assignments << 1, 0, 0, 0;
  CHECK(fit_constant_diff(v)->predict(grid(1))[0] == 2.0);
  v.outcomes << 3, 3, 3, 3;
  v.assignments << 1, 0, 1, 0;
  CHECK(fit_constant_diff(v)->predict(grid(1))[0] == 0.0);
  v.assignments.setOnes();
  CHECK_THROWS_AS(fit_constant_diff(v), ArmEmptyError);
}

TEST_CASE("candidate library") {
  const auto v = make_view(200, 3, 17, [](const auto& x, int z) { return x[0] + z * (1.0 + x[1]); });
  SECTION("default roster yields nine models in order") {
    const auto roster = default_roster();
    const auto lib = fit_candidate_library(v, roster, 0.5, {std::nullopt, 3});
    REQUIRE(lib.size() == 9);
    for (std::size_t k = 0; k < 9; ++k) CHECK(lib[k]->label() == roster[k].label);
    const std::vector<std::string> expected = {"kernel_ridge_s_learner", "gbm_t_learner",  "rf_t_learner",
                                               "cart_s_learner",         "lasso_t_learner", "rf_x_learner",
                                               "gbm_r_learner",          "lasso_r_learner", "constant"};
    for (std::size_t k = 0; k < 9; ++k) CHECK(roster[k].label == expected[k]);
    // Each candidate refits identically on its own.
    const Matrix X = grid(6, 3);
    for (std::size_t k : {1u, 2u, 5u}) {
      const auto alone = fit_candidate_library(v, {roster[k]}, 0.5, {std::nullopt, 3});
      CHECK(alone[0]->predict(X) == lib[k]->predict(X));
    }
  }
  SECTION("single constant-difference spec") {
    CateAlgorithmSpec s;
    s.framework = Framework::ConstantDiff;
    s.label = "c";
    CHECK(fit_candidate_library(v, {s}, 0.5).size() == 1);
    // The base spec is ignored.
    CateAlgorithmSpec other = s;
    other.base = kRidge;
    CHECK(fit_candidate_library(v, {other}, 0.5)[0]->predict(grid(2, 3)) ==
          fit_candidate_library(v, {s}, 0.5)[0]->predict(grid(2, 3)));
  }
  SECTION("truncation clips predictions") {
    const auto big = make_view(20, 1, 18, [](const auto&, int z) { return 5.0 * z; });
    CateAlgorithmSpec s;
    s.label = "c";
    const auto lib = fit_candidate_library(big, {s}, 0.5, {1.0, 0});
    CHECK(lib[0]->predict(grid(3)) == Vector::Ones(3));
    CHECK(lib[0]->truncation_bound() == 1.0);
  }
  SECTION("truncated models never exceed the bound") {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> u(-50.0, 50.0);
    for (int trial = 0; trial < 200; ++trial) {
      const double bound = std::abs(u(rng)) / 10.0;
      auto inner = std::make_shared<FunctionCateModel>(
          [&](const Matrix& X) { return Vector(X.col(0) * 3.0); }, "f");
      const TruncatedCateModel t(inner, bound);
      Matrix X(10, 1);
      for (int i = 0; i < 10; ++i) X(i, 0) = u(rng);
      CHECK(max_abs(t.predict(X)) <= bound);
    }
  }
  SECTION("errors carry the candidate label") {
    auto empty = v;
    empty.assignments.setZero();
    auto roster = default_roster();
    try {
      fit_candidate_library(empty, {roster[1]}, 0.5);
      FAIL("expected ArmEmptyError");
    } catch (const ArmEmptyError& e) {
      CHECK(std::string(e.what()).find("gbm_t_learner") != std::string::npos);
    }
    CHECK_THROWS_AS(fit_candidate_library(v, {}, 0.5), ParameterError);
  }
}

TEST_CASE("algorithm specs round-trip through JSON") {
  for (const auto& s : default_roster()) {
    const nlohmann::json j = s;
    const auto back = j.get<CateAlgorithmSpec>();
    CHECK(back.framework == s.framework);
    CHECK(back.base == s.base);
    CHECK(back.second == s.second);
    CHECK(back.label == s.label);
    CHECK(back.seed == s.seed);
  }
  CHECK_THROWS_AS(nlohmann::json({{"framework", "y_learner"}}).get<CateAlgorithmSpec>(), ParameterError);
}
