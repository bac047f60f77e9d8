#pragma once

// Batched diffusion kernels. The default versions split the sample axis
// into fixed-size chunks processed under OpenMP; chunk boundaries and the
// gradient reduction order do not depend on the thread count, so results
// are reproducible on any machine configuration. The `reference`
// namespace holds straightforward one-sample-at-a-time versions used by
// the tests and the benchmark as ground truth.

#include <span>
#include <vector>

#include "sd2ail/common.hpp"
#include "sd2ail/diffusion.hpp"
#include "sd2ail/nn.hpp"

namespace sd2ail::kernels {

inline constexpr Eigen::Index kChunkSamples = 64;

/// Noise layout shared by every loss kernel: column i * T + (t - 1) holds
/// the noise for sample i at step t.
inline Eigen::Index noise_column(Eigen::Index sample, int t, int steps) {
  return sample * steps + (t - 1);
}

/// losses(t - 1, i) = ||eps(i, t) - model(x_t(i), t)||^2 for every sample
/// column of `x0` (dim x n) and every step t = 1..T.
Matrix step_losses(const diffusion::EpsilonModel& model, const diffusion::Schedule& sched,
                   const Matrix& x0, const Matrix& noise);

/// Forward pass retained for a subsequent gradient computation.
struct LossPass {
  struct Chunk {
    Eigen::Index first_sample = 0;
    Eigen::Index sample_count = 0;
    diffusion::NoisePredictor::Tape tape;
    Matrix residual;  // eps - prediction, dim x (count * T)
  };
  int steps = 0;
  Matrix losses;  // T x n
  std::vector<Chunk> chunks;
};

LossPass step_losses_with_tape(const diffusion::NoisePredictor& model,
                               const diffusion::Schedule& sched, const Matrix& x0,
                               const Matrix& noise);

/// Parameter gradients of sum_{t,i} upstream(t-1, i) * losses(t-1, i).
nn::Gradients step_loss_gradients(const diffusion::NoisePredictor& model, const LossPass& pass,
                                  const Matrix& upstream);

/// Runs the reverse chain from x_T (dim x n). step_noise[k] is the noise
/// injected on the transition out of step t = T - k, for k = 0..T-2.
Matrix reverse_chain(const diffusion::EpsilonModel& model, const diffusion::Schedule& sched,
                     const Matrix& x_T, std::span<const Matrix> step_noise);

namespace reference {

Matrix step_losses(const diffusion::EpsilonModel& model, const diffusion::Schedule& sched,
                   const Matrix& x0, const Matrix& noise);

nn::Gradients step_loss_gradients(const diffusion::NoisePredictor& model,
                                  const diffusion::Schedule& sched, const Matrix& x0,
                                  const Matrix& noise, const Matrix& upstream);

Matrix reverse_chain(const diffusion::EpsilonModel& model, const diffusion::Schedule& sched,
                     const Matrix& x_T, std::span<const Matrix> step_noise);

}  // namespace reference

/// Number of OpenMP threads the parallel kernels will use.
int thread_count();

}  // namespace sd2ail::kernels
