#include <cmath>

#include "sd2ail/kernels.hpp"

namespace sd2ail::kernels::reference {

Matrix step_losses(const diffusion::EpsilonModel& model, const diffusion::Schedule& sched,
                   const Matrix& x0, const Matrix& noise) {
  const int T = sched.steps;
  Matrix losses(T, x0.cols());
  for (Eigen::Index i = 0; i < x0.cols(); ++i) {
    for (int t = 1; t <= T; ++t) {
      const Vector eps = noise.col(noise_column(i, t, T));
      losses(t - 1, i) = diffusion::diffusion_loss(model, x0.col(i), t, eps, sched);
    }
  }
  return losses;
}

nn::Gradients step_loss_gradients(const diffusion::NoisePredictor& model,
                                  const diffusion::Schedule& sched, const Matrix& x0,
                                  const Matrix& noise, const Matrix& upstream) {
  const int T = sched.steps;
  nn::Gradients total = model.zero_gradients();
  for (Eigen::Index i = 0; i < x0.cols(); ++i) {
    for (int t = 1; t <= T; ++t) {
      nn::Gradients g;
      diffusion::diffusion_loss_gradient(model, x0.col(i), t, noise.col(noise_column(i, t, T)),
                                         sched, g);
      nn::scale(g, upstream(t - 1, i));
      nn::accumulate(total, g);
    }
  }
  return total;
}

Matrix reverse_chain(const diffusion::EpsilonModel& model, const diffusion::Schedule& sched,
                     const Matrix& x_T, std::span<const Matrix> step_noise) {
  const int T = sched.steps;
  Matrix out(x_T.rows(), x_T.cols());
  for (Eigen::Index i = 0; i < x_T.cols(); ++i) {
    Vector x = x_T.col(i);
    for (int t = T; t >= 1; --t) {
      const Vector eps_hat = model.predict(Matrix(x), t).col(0);
      const double mean_scale = 1.0 / std::sqrt(sched.alpha[t]);
      const double noise_scale = sched.beta[t] / std::sqrt(1.0 - sched.alpha_bar[t]);
      for (Eigen::Index d = 0; d < x.size(); ++d) {
        double next = mean_scale * (x(d) - noise_scale * eps_hat(d));
        if (t > 1) next += sched.sigma[t] * step_noise[T - t](d, i);
        x(d) = next;
      }
    }
    out.col(i) = x;
  }
  return out;
}

}  // namespace sd2ail::kernels::reference
