#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace sd2ail {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Rejected input: wrong dimensions, out-of-range arguments.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf reached a place where it must never appear.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Seeded random source. Every stochastic routine takes one of these by
/// reference so that a run is reproducible from its seed alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return normal_(engine_); }
  std::uint64_t next() { return engine_(); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    // Column-major fill order is part of the reproducibility contract.
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal();
    return m;
  }
  Vector normal_vector(Eigen::Index n) { return normal_matrix(n, 1); }

  /// Independent child stream; advances this stream by one draw.
  Rng split() { return Rng(next()); }

  std::mt19937_64& engine() { return engine_; }

  friend std::ostream& operator<<(std::ostream& os, const Rng& r) {
    return os << r.engine_ << ' ' << r.uniform_ << ' ' << r.normal_;
  }
  friend std::istream& operator>>(std::istream& is, Rng& r) {
    return is >> r.engine_ >> r.uniform_ >> r.normal_;
  }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw NumericError("non-finite values in " + what);
}

}  // namespace sd2ail
