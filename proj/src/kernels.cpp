#include "sd2ail/kernels.hpp"

#include <cmath>
#include <exception>

#include <omp.h>

namespace sd2ail::kernels {

namespace {

struct ChunkRange {
  Eigen::Index first;
  Eigen::Index count;
};

std::vector<ChunkRange> chunk_ranges(Eigen::Index n) {
  std::vector<ChunkRange> out;
  for (Eigen::Index first = 0; first < n; first += kChunkSamples)
    out.push_back({first, std::min(kChunkSamples, n - first)});
  return out;
}

// Runs body(k) for every chunk index in parallel; the first exception
// thrown by any iteration is rethrown after the region ends.
template <typename Body>
void parallel_for_chunks(std::size_t count, Body&& body) {
  std::exception_ptr error;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(count); ++k) {
    try {
      body(static_cast<std::size_t>(k));
    } catch (...) {
#pragma omp critical(sd2ail_kernel_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

void check_noise(const Matrix& x0, const Matrix& noise, int steps) {
  if (noise.rows() != x0.rows() || noise.cols() != x0.cols() * steps)
    throw ShapeError("noise must be dim x (n * T)");
  require_finite(x0, "diffusion input");
  require_finite(noise, "diffusion noise");
}

// Noised inputs for a chunk, laid out like the noise (sample-major, step-minor).
void build_chunk_inputs(const diffusion::Schedule& sched, const Matrix& x0, const Matrix& noise,
                        const ChunkRange& r, Matrix& noisy, Matrix& eps,
                        std::vector<int>& step_of) {
  const int T = sched.steps;
  const Eigen::Index cols = r.count * T;
  noisy.resize(x0.rows(), cols);
  eps = noise.middleCols(r.first * T, cols);
  step_of.resize(static_cast<std::size_t>(cols));
  for (Eigen::Index i = 0; i < r.count; ++i) {
    for (int t = 1; t <= T; ++t) {
      const Eigen::Index c = i * T + (t - 1);
      noisy.col(c) = std::sqrt(sched.alpha_bar[t]) * x0.col(r.first + i) +
                     std::sqrt(1.0 - sched.alpha_bar[t]) * eps.col(c);
      step_of[static_cast<std::size_t>(c)] = t;
    }
  }
}

void scatter_losses(const Matrix& residual, const ChunkRange& r, int T, Matrix& losses) {
  const Eigen::RowVectorXd sq = residual.colwise().squaredNorm();
  for (Eigen::Index i = 0; i < r.count; ++i)
    for (int t = 1; t <= T; ++t) losses(t - 1, r.first + i) = sq(i * T + (t - 1));
}

}  // namespace

int thread_count() { return omp_get_max_threads(); }

Matrix step_losses(const diffusion::EpsilonModel& model, const diffusion::Schedule& sched,
                   const Matrix& x0, const Matrix& noise) {
  const int T = sched.steps;
  check_noise(x0, noise, T);
  Matrix losses(T, x0.cols());
  const auto ranges = chunk_ranges(x0.cols());
  parallel_for_chunks(ranges.size(), [&](std::size_t k) {
    Matrix noisy, eps;
    std::vector<int> step_of;
    build_chunk_inputs(sched, x0, noise, ranges[k], noisy, eps, step_of);
    const Matrix residual = eps - model.predict(noisy, step_of);
    scatter_losses(residual, ranges[k], T, losses);
  });
  if (!losses.allFinite()) throw NumericError("non-finite diffusion loss");
  return losses;
}

LossPass step_losses_with_tape(const diffusion::NoisePredictor& model,
                               const diffusion::Schedule& sched, const Matrix& x0,
                               const Matrix& noise) {
  const int T = sched.steps;
  check_noise(x0, noise, T);
  LossPass pass;
  pass.steps = T;
  pass.losses.resize(T, x0.cols());
  const auto ranges = chunk_ranges(x0.cols());
  pass.chunks.resize(ranges.size());
  parallel_for_chunks(ranges.size(), [&](std::size_t k) {
    auto& chunk = pass.chunks[k];
    chunk.first_sample = ranges[k].first;
    chunk.sample_count = ranges[k].count;
    Matrix noisy, eps;
    std::vector<int> step_of;
    build_chunk_inputs(sched, x0, noise, ranges[k], noisy, eps, step_of);
    chunk.residual = eps - model.predict(noisy, step_of, chunk.tape);
    scatter_losses(chunk.residual, ranges[k], T, pass.losses);
  });
  if (!pass.losses.allFinite()) throw NumericError("non-finite diffusion loss");
  return pass;
}

nn::Gradients step_loss_gradients(const diffusion::NoisePredictor& model, const LossPass& pass,
                                  const Matrix& upstream) {
  if (upstream.rows() != pass.losses.rows() || upstream.cols() != pass.losses.cols())
    throw ShapeError("upstream must match the loss matrix");
  const int T = pass.steps;
  std::vector<nn::Gradients> partial(pass.chunks.size());
  parallel_for_chunks(pass.chunks.size(), [&](std::size_t k) {
    const auto& chunk = pass.chunks[k];
    // d loss / d prediction = -2 * residual, scaled per column.
    Matrix up = -2.0 * chunk.residual;
    for (Eigen::Index i = 0; i < chunk.sample_count; ++i)
      for (int t = 1; t <= T; ++t)
        up.col(i * T + (t - 1)) *= upstream(t - 1, chunk.first_sample + i);
    partial[k] = model.backward(chunk.tape, up);
  });
  nn::Gradients total = model.zero_gradients();
  for (const auto& g : partial) nn::accumulate(total, g);
  return total;
}

Matrix reverse_chain(const diffusion::EpsilonModel& model, const diffusion::Schedule& sched,
                     const Matrix& x_T, std::span<const Matrix> step_noise) {
  const int T = sched.steps;
  if (static_cast<int>(step_noise.size()) != T - 1)
    throw ShapeError("reverse_chain: need T - 1 noise matrices");
  for (const auto& z : step_noise)
    if (z.rows() != x_T.rows() || z.cols() != x_T.cols())
      throw ShapeError("reverse_chain: noise shape mismatch");
  Matrix out(x_T.rows(), x_T.cols());
  const auto ranges = chunk_ranges(x_T.cols());
  parallel_for_chunks(ranges.size(), [&](std::size_t k) {
    const auto& r = ranges[k];
    Matrix x = x_T.middleCols(r.first, r.count);
    for (int t = T; t >= 1; --t) {
      const Matrix eps_hat = model.predict(x, t);
      const double c = sched.beta[t] / std::sqrt(1.0 - sched.alpha_bar[t]);
      x = (x - c * eps_hat) / std::sqrt(sched.alpha[t]);
      if (t > 1) x += sched.sigma[t] * step_noise[T - t].middleCols(r.first, r.count);
    }
    out.middleCols(r.first, r.count) = x;
  });
  return out;
}

}  // namespace sd2ail::kernels
