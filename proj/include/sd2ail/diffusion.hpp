#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "sd2ail/common.hpp"
#include "sd2ail/nn.hpp"

namespace sd2ail::diffusion {

/// Linear variance schedule and its derived products. Arrays are indexed by
/// the diffusion step t in 1..T; index 0 holds the t = 0 convention
/// (beta = 0, alpha = alpha_bar = 1, sigma = 0).
struct Schedule {
  int steps = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sigma;
};

/// beta linearly spaced from beta_start to beta_end inclusive.
/// Requires 0 < beta_start <= beta_end < 1 and steps >= 1.
Schedule build_schedule(int steps, double beta_start, double beta_end);

/// sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps.
Vector forward_noise(const Vector& x0, int t, const Vector& eps, const Schedule& sched);
Matrix forward_noise(const Matrix& x0, int t, const Matrix& eps, const Schedule& sched);

/// Anything that predicts the injected noise from a noised batch. Column j
/// of `noisy` was noised to step steps[j]. Implementations must be safe to
/// call concurrently through a const reference.
class EpsilonModel {
 public:
  virtual ~EpsilonModel() = default;
  virtual int data_dim() const = 0;
  virtual Matrix predict(const Matrix& noisy, std::span<const int> steps) const = 0;
  Matrix predict(const Matrix& noisy, int t) const;
};

/// Epsilon network: a DenseNet over [x_t ; e_t] where e_t is a learned
/// per-step embedding column.
class NoisePredictor final : public EpsilonModel {
 public:
  struct Tape {
    nn::DenseNet::Tape net;
    std::vector<int> steps;
  };

  NoisePredictor() = default;
  NoisePredictor(int data_dim, int steps, int embed_dim, const std::vector<int>& hidden,
                 nn::Activation activation, Rng& rng);

  int data_dim() const override { return data_dim_; }
  int steps() const { return static_cast<int>(embedding_.cols()); }
  int embed_dim() const { return static_cast<int>(embedding_.rows()); }

  using EpsilonModel::predict;
  Matrix predict(const Matrix& noisy, std::span<const int> steps) const override;
  Matrix predict(const Matrix& noisy, std::span<const int> steps, Tape& tape) const;

  /// Gradients of <upstream, prediction>, ordered like parameters().
  nn::Gradients backward(const Tape& tape, const Matrix& upstream) const;

  /// Network parameters followed by the embedding table.
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  nn::Gradients zero_gradients() const;

  nn::DenseNet& net() { return net_; }
  const nn::DenseNet& net() const { return net_; }
  Matrix& embedding() { return embedding_; }
  const Matrix& embedding() const { return embedding_; }

  void save(std::ostream& os) const;
  static NoisePredictor load(std::istream& is);

 private:
  Matrix assemble(const Matrix& noisy, std::span<const int> steps) const;

  int data_dim_ = 0;
  nn::DenseNet net_;
  Matrix embedding_;  // embed_dim x T, column t-1 embeds step t
};

/// ||eps - eps_model(forward_noise(x0, t, eps), t)||^2.
double diffusion_loss(const EpsilonModel& model, const Vector& x0, int t, const Vector& eps,
                      const Schedule& sched);

/// Loss value and parameter gradients for a single (x0, t, eps).
double diffusion_loss_gradient(const NoisePredictor& model, const Vector& x0, int t,
                               const Vector& eps, const Schedule& sched, nn::Gradients& grads);

/// Ancestral sampling: x^T ~ N(0, I), then
/// x^{t-1} = (x^t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t) + sigma_t z,
/// with no noise on the final step. Returns dim x n.
Matrix reverse_sample(const EpsilonModel& model, const Schedule& sched, Rng& noise, int n);

/// Affine map of data to per-dimension zero mean / unit variance.
struct Normalizer {
  Vector mean;
  Vector scale;

  /// Columns of `data` are samples. Per-dimension spread is floored at
  /// `min_scale` so constant coordinates do not blow up.
  static Normalizer fit(const Matrix& data, double min_scale = 1e-2);
  static Normalizer identity(int dim);

  Matrix normalize(const Matrix& x) const;
  Matrix denormalize(const Matrix& z) const;
  int dim() const { return static_cast<int>(mean.size()); }

  void save(std::ostream& os) const;
  static Normalizer load(std::istream& is);
};

void save_schedule(std::ostream& os, const Schedule& sched);
Schedule load_schedule(std::istream& is);

}  // namespace sd2ail::diffusion
