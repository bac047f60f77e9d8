#pragma once

// Shared helpers for the unit suites.

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include <unistd.h>

#include "sd2ail/common.hpp"
#include "sd2ail/diffusion.hpp"
#include "sd2ail/nn.hpp"

namespace sd2ail::support {

/// |a - n| / max(|a| + |n|, floor), the usual symmetric relative error.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
}

/// Central differences of `loss` with respect to every entry of every
/// block in `params`; returns the largest relative error against `grads`.
inline double max_gradient_error(std::vector<Matrix*> params, const nn::Gradients& grads,
                                 const std::function<double()>& loss, double h = 1e-6) {
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + h;
      const double up = loss();
      p.data()[i] = saved - h;
      const double down = loss();
      p.data()[i] = saved;
      worst = std::max(worst, relative_error(grads[k].data()[i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

/// Predicts eps = f(x_t, t) from a callback; used to build exact stubs.
class LambdaModel final : public diffusion::EpsilonModel {
 public:
  using Fn = std::function<Vector(const Vector&, int)>;
  LambdaModel(int dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}
  int data_dim() const override { return dim_; }
  using diffusion::EpsilonModel::predict;
  Matrix predict(const Matrix& noisy, std::span<const int> steps) const override {
    Matrix out(noisy.rows(), noisy.cols());
    for (Eigen::Index j = 0; j < noisy.cols(); ++j) out.col(j) = fn_(noisy.col(j), steps[j]);
    return out;
  }

 private:
  int dim_;
  Fn fn_;
};

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("sd2ail-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

}  // namespace sd2ail::support
