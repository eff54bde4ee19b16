#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "cate_stack/dataset.hpp"
#include "test_util.hpp"

using namespace cate_stack;

namespace {

ExperimentDataset toy(Eigen::Index n, double p, Design design, std::uint64_t seed) {
  Matrix X = Matrix::Random(n, 2);
  Vector y = Vector::Random(n);
  return ExperimentDataset(X, y, assign_treatments(n, p, design, seed), p, design);
}

}  // namespace

TEST_CASE("round_half_even and treated_count") {
  CHECK(round_half_even(2.5) == 2);
  CHECK(round_half_even(3.5) == 4);
  CHECK(round_half_even(2.4) == 2);
  CHECK(round_half_even(-0.5) == 0);
  CHECK(treated_count(10, 0.1) == 1);
  CHECK(treated_count(5, 0.5) == 2);
  CHECK(treated_count(7, 0.5) == 4);
}

TEST_CASE("dataset invariants are enforced") {
  Matrix X = Matrix::Zero(3, 1);
  Vector y = Vector::Zero(3);
  IntVector z(3);
  z << 0, 1, 0;
  CHECK_NOTHROW(ExperimentDataset(X, y, z, 0.5, Design::Bernoulli));
  CHECK_THROWS_AS(ExperimentDataset(X, y, z, 0.0, Design::Bernoulli), ParameterError);
  CHECK_THROWS_AS(ExperimentDataset(X, y, z, 1.0, Design::Bernoulli), ParameterError);
  CHECK_THROWS_AS(ExperimentDataset(X, Vector::Zero(2), z, 0.5, Design::Bernoulli), ParameterError);
  IntVector bad(3);
  bad << 0, 2, 1;
  CHECK_THROWS_AS(ExperimentDataset(X, y, bad, 0.5, Design::Bernoulli), ParameterError);
  CHECK_THROWS_AS(ExperimentDataset(Matrix::Zero(1, 1), Vector::Zero(1), IntVector::Zero(1), 0.5, Design::Bernoulli),
                  ParameterError);
  // round(0.5 * 3) = 2 treated required under complete randomization.
  CHECK_THROWS_AS(ExperimentDataset(X, y, z, 0.5, Design::CompletelyRandomized), ParameterError);
  z << 1, 1, 0;
  CHECK_NOTHROW(ExperimentDataset(X, y, z, 0.5, Design::CompletelyRandomized));
}

TEST_CASE("completely randomized assignment has exactly round(p n) ones") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CHECK(assign_treatments(4, 0.5, Design::CompletelyRandomized, seed).sum() == 2);
    CHECK(assign_treatments(10, 0.1, Design::CompletelyRandomized, seed).sum() == 1);
    CHECK(assign_treatments(37, 0.3, Design::CompletelyRandomized, seed).sum() == 11);
  }
}

TEST_CASE("bernoulli assignment concentrates around p n") {
  const double sd = std::sqrt(10000 * 0.3 * 0.7);
  CHECK(std::abs(assign_treatments(10000, 0.3, Design::Bernoulli, 7).sum() - 3000.0) <= 3.0 * sd);
  int within = 0;
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const double s = assign_treatments(10000, 0.3, Design::Bernoulli, seed).sum();
    within += std::abs(s - 3000.0) <= 3.0 * sd;
    total += s;
  }
  // P(|Z| > 3) = 0.0027 per seed; allow a few exceedances out of 100.
  CHECK(within >= 97);
  // Mean of 100 sums has sd 4.58.
  CHECK(std::abs(total / 100.0 - 3000.0) <= 3.0 * sd / 10.0);
}

TEST_CASE("completely randomized marginals are uniform across units (chi-square)") {
  const int n = 20, seeds = 1000;
  std::vector<int> hits(n, 0);
  for (int s = 0; s < seeds; ++s) {
    const auto z = assign_treatments(n, 0.3, Design::CompletelyRandomized, static_cast<std::uint64_t>(s) + 1000);
    for (int i = 0; i < n; ++i) hits[i] += z[i];
  }
  const double expected = seeds * 0.3;
  double chi2 = 0.0;
  for (int h : hits) chi2 += (h - expected) * (h - expected) / expected;
  // 99.9% quantile of chi-square with 19 degrees of freedom.
  CHECK(chi2 < 43.82);
}

TEST_CASE("assignment rejects invalid inputs and is seed-deterministic") {
  CHECK_THROWS_AS(assign_treatments(1, 0.5, Design::Bernoulli, 0), ParameterError);
  CHECK_THROWS_AS(assign_treatments(10, 1.5, Design::Bernoulli, 0), ParameterError);
  CHECK(assign_treatments(50, 0.4, Design::Bernoulli, 3) == assign_treatments(50, 0.4, Design::Bernoulli, 3));
  CHECK(assign_treatments(50, 0.4, Design::Bernoulli, 3) != assign_treatments(50, 0.4, Design::Bernoulli, 4));
}

TEST_CASE("split sizes, disjointness and determinism") {
  const auto ds = toy(10, 0.5, Design::Bernoulli, 1);
  const auto sp = split(ds, 0.3, 5);
  CHECK(sp.avg_indices.size() == 3);
  CHECK(sp.train_indices.size() == 7);
  std::vector<Eigen::Index> all = sp.train_indices;
  all.insert(all.end(), sp.avg_indices.begin(), sp.avg_indices.end());
  std::sort(all.begin(), all.end());
  std::vector<Eigen::Index> expect(10);
  std::iota(expect.begin(), expect.end(), Eigen::Index{0});
  CHECK(all == expect);
  const auto again = split(ds, 0.3, 5);
  CHECK(again.avg_indices == sp.avg_indices);
  CHECK(again.train_indices == sp.train_indices);
  CHECK_THROWS_AS(split(ds, 0.01, 1), ParameterError);
  CHECK_THROWS_AS(split(ds, 0.99, 1), ParameterError);
  CHECK_THROWS_AS(split(ds, 0.0, 1), ParameterError);
}

TEST_CASE("stratified split for completely randomized data") {
  const auto ds = toy(100, 0.5, Design::CompletelyRandomized, 9);
  REQUIRE(ds.assignments().sum() == 50);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto sp = split(ds, 0.4, seed);
    REQUIRE(sp.avg_indices.size() == 40);
    const auto avg = ds.view(sp.avg_indices);
    CHECK(std::abs(avg.n_treated() - 20) <= 1);
  }
  const auto skewed = toy(90, 0.3, Design::CompletelyRandomized, 2);
  const auto sp = split(skewed, 1.0 / 3.0, 4);
  const auto avg = skewed.view(sp.avg_indices);
  CHECK(std::abs(static_cast<double>(avg.n_treated()) - 0.3 * avg.rows()) <= 1.0);
}

TEST_CASE("split property: partitions [n] for random sizes") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n = 4 + static_cast<Eigen::Index>(rng() % 200);
    const double alpha = 0.2 + 0.6 * static_cast<double>(rng() % 1000) / 1000.0;
    const auto design = trial % 2 ? Design::Bernoulli : Design::CompletelyRandomized;
    const auto ds = toy(n, 0.4, design, rng());
    const auto sp = split(ds, alpha, rng());
    std::set<Eigen::Index> seen(sp.train_indices.begin(), sp.train_indices.end());
    for (auto i : sp.avg_indices) CHECK(seen.insert(i).second);
    CHECK(static_cast<Eigen::Index>(seen.size()) == n);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == n - 1);
    CHECK(static_cast<long long>(sp.avg_indices.size()) == round_half_even(alpha * static_cast<double>(n)));
  }
}

TEST_CASE("potential outcome table: tau is y1 - y0") {
  Vector y1(3), y0(3);
  y1 << 1.5, -2.0, 0.1;
  y0 << 0.5, 1.0, 0.3;
  const PotentialOutcomeTable t(y1, y0);
  for (int i = 0; i < 3; ++i) CHECK(t.tau[i] == y1[i] - y0[i]);
}

TEST_CASE("load_csv parses a small file") {
  test_util::TempDir dir;
  const auto path = dir.write("d.csv", "x1,x2,y,z\n0.5,1,2.5,1\n-1,2,3,0\n3,4e-3,-1,1\n");
  const auto ds = load_csv(path, {});
  CHECK(ds.rows() == 3);
  CHECK(ds.dim() == 2);
  CHECK(ds.covariates()(2, 1) == 4e-3);
  CHECK(ds.outcomes()[2] == -1.0);
  CHECK(ds.assignments()[1] == 0);
  CHECK(ds.treat_prob() == Catch::Approx(2.0 / 3.0));
  CHECK(ds.covariate_names() == std::vector<std::string>{"x1", "x2"});
}

TEST_CASE("load_csv: column order is free") {
  test_util::TempDir dir;
  const auto path = dir.write("d.csv", "z,age,y\n1,30,2\n0,40,1\n");
  const auto ds = load_csv(path, {0.5, Design::Bernoulli});
  CHECK(ds.dim() == 1);
  CHECK(ds.covariates()(1, 0) == 40.0);
  CHECK(ds.treat_prob() == 0.5);
}

TEST_CASE("load_csv format errors name the row and column") {
  test_util::TempDir dir;
  auto message = [&](const std::string& content) {
    try {
      load_csv(dir.write("bad.csv", content), {});
    } catch (const FormatError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK_THAT(message("x1,y,z\n1,2,1\n1,2,2\n"), Catch::Matchers::ContainsSubstring("row 3") &&
                                                    Catch::Matchers::ContainsSubstring("'z'"));
  CHECK_THAT(message("x1,y,z\n1,abc,1\n2,2,0\n"), Catch::Matchers::ContainsSubstring("row 2") &&
                                                      Catch::Matchers::ContainsSubstring("'y'"));
  CHECK_THAT(message("x1,y\n1,2\n"), Catch::Matchers::ContainsSubstring("missing column 'z'"));
  CHECK_THAT(message("x1,z\n1,1\n"), Catch::Matchers::ContainsSubstring("missing column 'y'"));
  CHECK_THAT(message("x1,y,z\n1,2\n"), Catch::Matchers::ContainsSubstring("row 2"));
  CHECK_THAT(message("x1,x1,y,z\n1,1,2,1\n"), Catch::Matchers::ContainsSubstring("duplicate"));
  CHECK_THAT(message("x1,y,z\n1,2,1\n1,2,1\n"), Catch::Matchers::ContainsSubstring("strictly inside"));
  CHECK_THROWS_AS(load_csv(dir.path() + "/missing.csv", {}), FormatError);
}

TEST_CASE("write_csv then load_csv round-trips bit-exactly") {
  test_util::TempDir dir;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1e3);
  Matrix X(25, 3);
  Vector y(25);
  for (int i = 0; i < 25; ++i) {
    for (int j = 0; j < 3; ++j) X(i, j) = g(rng) * std::pow(10.0, j * 7 - 7);
    y[i] = g(rng) / 3.0;
  }
  const ExperimentDataset ds(X, y, assign_treatments(25, 0.4, Design::CompletelyRandomized, 1), 0.4,
                             Design::CompletelyRandomized, {"a", "b", "c"});
  const auto path = dir.path() + "/rt.csv";
  write_csv(ds, path);
  write_sidecar(dir.path() + "/rt.json", ds.treat_prob(), ds.design());
  const auto back = load_csv(path, load_sidecar(dir.path() + "/rt.json"));
  CHECK(back.covariates() == ds.covariates());
  CHECK(back.outcomes() == ds.outcomes());
  CHECK(back.assignments() == ds.assignments());
  CHECK(back.treat_prob() == ds.treat_prob());
  CHECK(back.design() == Design::CompletelyRandomized);
  CHECK(back.covariate_names() == ds.covariate_names());
}

TEST_CASE("sidecar parsing") {
  const auto info = parse_sidecar(nlohmann::json{{"p", 0.3}, {"design", "completely_randomized"}});
  CHECK(info.p == 0.3);
  CHECK(info.design == Design::CompletelyRandomized);
  CHECK_THROWS_AS(parse_sidecar(nlohmann::json{{"p", "x"}}), FormatError);
  CHECK_THROWS(parse_sidecar(nlohmann::json{{"design", "cluster"}}));
}
