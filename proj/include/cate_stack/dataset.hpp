#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cate_stack/common.hpp"

namespace cate_stack {

enum class Design { Bernoulli, CompletelyRandomized };

inline std::string to_string(Design d) {
  return d == Design::Bernoulli ? "bernoulli" : "completely_randomized";
}

inline Design parse_design(const std::string& s) {
  if (s == "bernoulli") return Design::Bernoulli;
  if (s == "completely_randomized") return Design::CompletelyRandomized;
  throw ParameterError("unknown design '" + s + "' (expected bernoulli|completely_randomized)");
}

// Nearest integer, ties to even.
inline long long round_half_even(double x) {
  const double fl = std::floor(x);
  const double diff = x - fl;
  double r;
  if (diff > 0.5)
    r = fl + 1.0;
  else if (diff < 0.5)
    r = fl;
  else
    r = std::fmod(fl, 2.0) == 0.0 ? fl : fl + 1.0;
  return static_cast<long long>(r);
}

// Number of treated units a completely randomized design of size n assigns.
inline Eigen::Index treated_count(Eigen::Index n, double p) {
  return static_cast<Eigen::Index>(round_half_even(p * static_cast<double>(n)));
}

// A bag of rows (training or averaging subset). Unlike ExperimentDataset it
// carries no design invariant.
struct ExperimentView {
  Matrix covariates;
  Vector outcomes;
  IntVector assignments;

  Eigen::Index rows() const { return covariates.rows(); }
  Eigen::Index n_treated() const { return assignments.sum(); }
  Eigen::Index n_control() const { return rows() - n_treated(); }

  std::vector<Eigen::Index> arm_indices(int arm) const {
    std::vector<Eigen::Index> out;
    for (Eigen::Index i = 0; i < assignments.size(); ++i)
      if (assignments[i] == arm) out.push_back(i);
    return out;
  }
};

class ExperimentDataset {
 public:
  ExperimentDataset(Matrix covariates, Vector outcomes, IntVector assignments,
                    double treat_prob, Design design,
                    std::vector<std::string> covariate_names = {})
      : covariates_(std::move(covariates)),
        outcomes_(std::move(outcomes)),
        assignments_(std::move(assignments)),
        treat_prob_(treat_prob),
        design_(design),
        names_(std::move(covariate_names)) {
    const auto n = covariates_.rows();
    require(n >= 2, "dataset needs at least 2 rows");
    require(outcomes_.size() == n && assignments_.size() == n,
            "covariates, outcomes and assignments must share row count");
    require(treat_prob_ > 0.0 && treat_prob_ < 1.0, "treat_prob must lie strictly inside (0,1)");
    for (Eigen::Index i = 0; i < n; ++i)
      require(assignments_[i] == 0 || assignments_[i] == 1, "assignment entries must be 0 or 1");
    if (design_ == Design::CompletelyRandomized) {
      require(assignments_.sum() == treated_count(n, treat_prob_),
              "completely randomized design requires exactly round(p*n) treated units");
    }
    if (names_.empty()) {
      for (Eigen::Index j = 0; j < covariates_.cols(); ++j) names_.push_back("x" + std::to_string(j + 1));
    }
    require(static_cast<Eigen::Index>(names_.size()) == covariates_.cols(),
            "covariate name count must match column count");
  }

  const Matrix& covariates() const { return covariates_; }
  const Vector& outcomes() const { return outcomes_; }
  const IntVector& assignments() const { return assignments_; }
  double treat_prob() const { return treat_prob_; }
  Design design() const { return design_; }
  const std::vector<std::string>& covariate_names() const { return names_; }
  Eigen::Index rows() const { return covariates_.rows(); }
  Eigen::Index dim() const { return covariates_.cols(); }

  ExperimentView view(const std::vector<Eigen::Index>& idx) const {
    return {select_rows(covariates_, idx), select_entries(outcomes_, idx),
            select_entries(assignments_, idx)};
  }

  ExperimentView full_view() const { return {covariates_, outcomes_, assignments_}; }

 private:
  Matrix covariates_;
  Vector outcomes_;
  IntVector assignments_;
  double treat_prob_;
  Design design_;
  std::vector<std::string> names_;
};

struct DataSplit {
  std::vector<Eigen::Index> train_indices;  // ascending
  std::vector<Eigen::Index> avg_indices;    // ascending
  double alpha = 0.0;
};

// Synthetic ground truth for each unit; tau is y1 - y0 as computed.
struct PotentialOutcomeTable {
  Vector y1;
  Vector y0;
  Vector tau;

  PotentialOutcomeTable() = default;
  PotentialOutcomeTable(Vector treated, Vector control)
      : y1(std::move(treated)), y0(std::move(control)), tau(y1 - y0) {
    require(y1.size() == y0.size(), "potential outcome vectors must have equal length");
  }
};

inline IntVector assign_treatments(Eigen::Index n, double p, Design design, std::uint64_t seed) {
  require(n >= 2, "assign_treatments: n must be at least 2");
  require(p > 0.0 && p < 1.0 && std::isfinite(p), "assign_treatments: p must lie in (0,1)");
  std::mt19937_64 rng(seed);
  IntVector z = IntVector::Zero(n);
  if (design == Design::Bernoulli) {
    std::bernoulli_distribution coin(p);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = coin(rng) ? 1 : 0;
  } else {
    const Eigen::Index k = treated_count(n, p);
    std::vector<int> pool(static_cast<std::size_t>(n), 0);
    std::fill(pool.begin(), pool.begin() + k, 1);
    std::shuffle(pool.begin(), pool.end(), rng);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = pool[static_cast<std::size_t>(i)];
  }
  return z;
}

// Train/averaging partition. Completely randomized datasets are split within
// treated and control strata so the averaging set's treated share tracks p.
inline DataSplit split(const ExperimentDataset& ds, double alpha, std::uint64_t seed) {
  require(alpha > 0.0 && alpha < 1.0, "split: alpha must lie in (0,1)");
  const Eigen::Index n = ds.rows();
  const auto n_avg = static_cast<Eigen::Index>(round_half_even(alpha * static_cast<double>(n)));
  if (n_avg <= 0 || n_avg >= n)
    throw ParameterError("split: alpha=" + std::to_string(alpha) + " leaves an empty training or averaging set");

  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> avg;
  if (ds.design() == Design::Bernoulli) {
    std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    std::shuffle(all.begin(), all.end(), rng);
    avg.assign(all.begin(), all.begin() + n_avg);
  } else {
    std::vector<Eigen::Index> treated, control;
    for (Eigen::Index i = 0; i < n; ++i) (ds.assignments()[i] ? treated : control).push_back(i);
    const auto n_t = static_cast<Eigen::Index>(treated.size());
    const auto n_c = static_cast<Eigen::Index>(control.size());
    Eigen::Index avg_t = treated_count(n_avg, ds.treat_prob());
    avg_t = std::clamp(avg_t, std::max<Eigen::Index>(0, n_avg - n_c), std::min(n_t, n_avg));
    std::shuffle(treated.begin(), treated.end(), rng);
    std::shuffle(control.begin(), control.end(), rng);
    avg.assign(treated.begin(), treated.begin() + avg_t);
    avg.insert(avg.end(), control.begin(), control.begin() + (n_avg - avg_t));
  }
  std::sort(avg.begin(), avg.end());

  DataSplit out;
  out.alpha = alpha;
  out.avg_indices = avg;
  std::vector<char> in_avg(static_cast<std::size_t>(n), 0);
  for (auto i : avg) in_avg[static_cast<std::size_t>(i)] = 1;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!in_avg[static_cast<std::size_t>(i)]) out.train_indices.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// CSV ingestion

struct DesignInfo {
  std::optional<double> p;  // absent: infer as mean(z)
  Design design = Design::Bernoulli;
};

inline DesignInfo parse_sidecar(const nlohmann::json& j) {
  DesignInfo info;
  if (j.contains("p")) {
    if (!j.at("p").is_number()) throw FormatError("sidecar: 'p' must be a number");
    info.p = j.at("p").get<double>();
  }
  if (j.contains("design")) {
    if (!j.at("design").is_string()) throw FormatError("sidecar: 'design' must be a string");
    info.design = parse_design(j.at("design").get<std::string>());
  }
  return info;
}

inline DesignInfo load_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open sidecar '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("sidecar '" + path + "': " + e.what());
  }
  return parse_sidecar(j);
}

inline void write_sidecar(const std::string& path, double p, Design design) {
  std::ofstream out(path);
  if (!out) throw ParameterError("cannot write '" + path + "'");
  out << nlohmann::json{{"p", p}, {"design", to_string(design)}}.dump(2) << "\n";
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

// Reads a CSV whose header contains `y`, `z` and any number of numeric
// covariate columns (in any order). Rows keep file order; line numbers in
// errors are 1-based file lines.
inline ExperimentDataset load_csv(const std::string& path, const DesignInfo& info) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty file");
  const auto header_views = detail::split_fields(line);
  std::vector<std::string> header(header_views.begin(), header_views.end());

  int y_col = -1, z_col = -1;
  std::vector<int> x_cols;
  std::vector<std::string> x_names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& h = header[c];
    if (h.empty()) throw FormatError(path + ": empty column name at column " + std::to_string(c + 1));
    if (std::count(header.begin(), header.end(), h) > 1)
      throw FormatError(path + ": duplicate column '" + h + "'");
    if (h == "y")
      y_col = static_cast<int>(c);
    else if (h == "z")
      z_col = static_cast<int>(c);
    else {
      x_cols.push_back(static_cast<int>(c));
      x_names.push_back(h);
    }
  }
  if (y_col < 0) throw FormatError(path + ": missing column 'y'");
  if (z_col < 0) throw FormatError(path + ": missing column 'z'");

  std::vector<double> xs, ys;
  std::vector<int> zs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != header.size())
      throw FormatError(path + ": row " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                        " fields, expected " + std::to_string(header.size()));
    auto cell = [&](int c) {
      auto v = detail::parse_double(fields[static_cast<std::size_t>(c)]);
      if (!v)
        throw FormatError(path + ": row " + std::to_string(line_no) + ", column '" +
                          header[static_cast<std::size_t>(c)] + "': non-numeric value '" +
                          std::string(fields[static_cast<std::size_t>(c)]) + "'");
      return *v;
    };
    for (int c : x_cols) xs.push_back(cell(c));
    ys.push_back(cell(y_col));
    const double z = cell(z_col);
    if (z != 0.0 && z != 1.0)
      throw FormatError(path + ": row " + std::to_string(line_no) + ", column 'z': assignment must be 0 or 1, got '" +
                        std::string(fields[static_cast<std::size_t>(z_col)]) + "'");
    zs.push_back(static_cast<int>(z));
  }

  const auto n = static_cast<Eigen::Index>(ys.size());
  const auto d = static_cast<Eigen::Index>(x_cols.size());
  Matrix X(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = xs[static_cast<std::size_t>(i * d + j)];
  Vector y = Eigen::Map<const Vector>(ys.data(), n);
  IntVector z = Eigen::Map<const IntVector>(zs.data(), n);

  double p = 0.0;
  if (info.p) {
    p = *info.p;
  } else {
    if (n == 0) throw FormatError(path + ": no data rows");
    p = static_cast<double>(z.sum()) / static_cast<double>(n);
  }
  try {
    return ExperimentDataset(std::move(X), std::move(y), std::move(z), p, info.design, std::move(x_names));
  } catch (const ParameterError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline void write_csv(const ExperimentDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParameterError("cannot write '" + path + "'");
  for (const auto& name : ds.covariate_names()) out << name << ",";
  out << "y,z\n";
  for (Eigen::Index i = 0; i < ds.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.dim(); ++j) out << detail::format_double(ds.covariates()(i, j)) << ",";
    out << detail::format_double(ds.outcomes()[i]) << "," << ds.assignments()[i] << "\n";
  }
  if (!out) throw ParameterError("write failed for '" + path + "'");
}

}  // namespace cate_stack
