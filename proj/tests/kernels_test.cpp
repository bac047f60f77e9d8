#include <omp.h>

#include <gtest/gtest.h>

#include "sd2ail/kernels.hpp"
#include "support.hpp"

using namespace sd2ail;

namespace {

struct Fixture {
  diffusion::Schedule sched = diffusion::build_schedule(10, 0.05, 0.45);
  diffusion::NoisePredictor model;
  Matrix x0, noise, upstream;
  std::vector<Matrix> chain;

  explicit Fixture(int n, nn::Activation act = nn::Activation::kTanh) {
    Rng rng(42);
    model = diffusion::NoisePredictor(5, 10, 4, {12, 12}, act, rng);
    x0 = rng.normal_matrix(5, n);
    noise = rng.normal_matrix(5, static_cast<Eigen::Index>(n) * 10);
    upstream = rng.normal_matrix(10, n);
    for (int k = 0; k < 9; ++k) chain.push_back(rng.normal_matrix(5, n));
  }
};

double max_diff(const nn::Gradients& a, const nn::Gradients& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, (a[k] - b[k]).cwiseAbs().maxCoeff());
  return m;
}

// Sample counts straddling the chunk size, including a ragged final chunk.
class KernelSizes : public ::testing::TestWithParam<int> {};

}  // namespace

TEST_P(KernelSizes, StepLossesMatchReference) {
  Fixture s(GetParam());
  const Matrix fast = kernels::step_losses(s.model, s.sched, s.x0, s.noise);
  const Matrix slow = kernels::reference::step_losses(s.model, s.sched, s.x0, s.noise);
  EXPECT_LT((fast - slow).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_P(KernelSizes, TapedLossesEqualPlainLosses) {
  Fixture s(GetParam());
  const auto pass = kernels::step_losses_with_tape(s.model, s.sched, s.x0, s.noise);
  EXPECT_EQ(pass.losses, kernels::step_losses(s.model, s.sched, s.x0, s.noise));
}

TEST_P(KernelSizes, GradientsMatchReference) {
  Fixture s(GetParam(), nn::Activation::kRelu);
  const auto pass = kernels::step_losses_with_tape(s.model, s.sched, s.x0, s.noise);
  const auto fast = kernels::step_loss_gradients(s.model, pass, s.upstream);
  const auto slow =
      kernels::reference::step_loss_gradients(s.model, s.sched, s.x0, s.noise, s.upstream);
  EXPECT_LT(max_diff(fast, slow), 1e-10);
}

TEST_P(KernelSizes, ReverseChainMatchesReference) {
  Fixture s(GetParam());
  const Matrix fast = kernels::reverse_chain(s.model, s.sched, s.x0, s.chain);
  const Matrix slow = kernels::reference::reverse_chain(s.model, s.sched, s.x0, s.chain);
  EXPECT_LT((fast - slow).cwiseAbs().maxCoeff(), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Chunking, KernelSizes, ::testing::Values(1, 63, 64, 65, 200));

TEST(Kernels, LossLayoutIsSampleMajorStepMinor) {
  Fixture s(3);
  const Matrix losses = kernels::step_losses(s.model, s.sched, s.x0, s.noise);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (int t = 1; t <= 10; ++t) {
      const Vector eps = s.noise.col(kernels::noise_column(i, t, 10));
      EXPECT_NEAR(losses(t - 1, i),
                  diffusion::diffusion_loss(s.model, s.x0.col(i), t, eps, s.sched), 1e-12);
    }
}

TEST(Kernels, GradientIsLinearInUpstream) {
  Fixture s(70);
  const auto pass = kernels::step_losses_with_tape(s.model, s.sched, s.x0, s.noise);
  const auto g1 = kernels::step_loss_gradients(s.model, pass, s.upstream);
  const auto g2 = kernels::step_loss_gradients(s.model, pass, 2.0 * s.upstream);
  for (std::size_t k = 0; k < g1.size(); ++k)
    EXPECT_LT((2.0 * g1[k] - g2[k]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Kernels, ResultsDoNotDependOnThreadCount) {
  Fixture s(300);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const Matrix l1 = kernels::step_losses(s.model, s.sched, s.x0, s.noise);
  const auto p1 = kernels::step_losses_with_tape(s.model, s.sched, s.x0, s.noise);
  const auto g1 = kernels::step_loss_gradients(s.model, p1, s.upstream);
  const Matrix r1 = kernels::reverse_chain(s.model, s.sched, s.x0, s.chain);
  for (int threads : {2, 3, 4}) {
    omp_set_num_threads(threads);
    EXPECT_EQ(kernels::step_losses(s.model, s.sched, s.x0, s.noise), l1);
    const auto p = kernels::step_losses_with_tape(s.model, s.sched, s.x0, s.noise);
    const auto g = kernels::step_loss_gradients(s.model, p, s.upstream);
    for (std::size_t k = 0; k < g.size(); ++k) EXPECT_EQ(g[k], g1[k]);
    EXPECT_EQ(kernels::reverse_chain(s.model, s.sched, s.x0, s.chain), r1);
  }
  omp_set_num_threads(saved);
}

TEST(Kernels, ShapeErrors) {
  Fixture s(4);
  EXPECT_THROW(kernels::step_losses(s.model, s.sched, s.x0, s.noise.leftCols(39)), ShapeError);
  const auto pass = kernels::step_losses_with_tape(s.model, s.sched, s.x0, s.noise);
  EXPECT_THROW(kernels::step_loss_gradients(s.model, pass, Matrix::Zero(10, 5)), ShapeError);
  std::vector<Matrix> short_chain(s.chain.begin(), s.chain.end() - 1);
  EXPECT_THROW(kernels::reverse_chain(s.model, s.sched, s.x0, short_chain), ShapeError);
}

TEST(Kernels, ErrorsInsideParallelRegionPropagate) {
  Fixture s(200);
  support::LambdaModel picky(5, [](const Vector& x, int) -> Vector {
    if (x(0) > 1e6) throw std::runtime_error("input out of range");
    return Vector::Zero(x.size());
  });
  Matrix bad = s.x0;
  bad(0, 150) = 1e9;
  EXPECT_NO_THROW(kernels::step_losses(picky, s.sched, s.x0, s.noise));
  EXPECT_THROW(kernels::step_losses(picky, s.sched, bad, s.noise), std::runtime_error);
  bad(0, 150) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(kernels::step_losses(s.model, s.sched, bad, s.noise), NumericError);
}
