#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cate_stack {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntVector = Eigen::VectorXi;

// Error hierarchy. ParameterError and FormatError are user/config errors,
// everything else is treated as an internal failure by the CLI.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ArmEmptyError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double kkt_residual, int iterations)
      : Error(what), kkt_residual_(kkt_residual), iterations_(iterations) {}

  double kkt_residual() const noexcept { return kkt_residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double kkt_residual_;
  int iterations_;
};

// Wraps an error raised inside a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what, bool user_error = false)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)), user_error_(user_error) {}

  const std::string& stage() const noexcept { return stage_; }
  // True when the underlying cause was a ParameterError or FormatError.
  bool user_error() const noexcept { return user_error_; }

 private:
  std::string stage_;
  bool user_error_;
};

// SplitMix64 finalizer; used to derive independent child seeds from a
// parent seed and a stream id so results never depend on call order.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) {
  return mix64(mix64(parent) ^ (stream * 0xd1342543de82ef95ULL + 1));
}

// FNV-1a, for stable label hashing and config digests.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ParameterError(msg);
}

// Rows of `m` selected by `idx`, in order.
template <typename Index>
Matrix select_rows(const Matrix& m, const std::vector<Index>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

template <typename Vec, typename Index>
Vec select_entries(const Vec& v, const std::vector<Index>& idx) {
  Vec out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = v[static_cast<Eigen::Index>(idx[i])];
  return out;
}

}  // namespace cate_stack
