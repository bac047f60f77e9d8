#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "sd2ail/sac.hpp"
#include "support.hpp"

using namespace sd2ail;

namespace {

sac::SacConfig small_config() {
  sac::SacConfig c;
  c.hidden = {16, 16};
  c.activation = nn::Activation::kTanh;
  return c;
}

}  // namespace

TEST(Policy, LogProbMatchesChangeOfVariablesOracle) {
  Rng rng(1);
  const Matrix mean = rng.normal_matrix(3, 20);
  const Matrix log_std = 0.5 * rng.normal_matrix(3, 20);
  const Matrix u = mean + (log_std.array().exp() * rng.normal_matrix(3, 20).array()).matrix();
  const Vector lp = sac::squashed_log_prob(u, mean, log_std);
  for (Eigen::Index j = 0; j < 20; ++j) {
    double want = 0.0;
    for (Eigen::Index d = 0; d < 3; ++d) {
      const double s = std::exp(log_std(d, j));
      const double z = (u(d, j) - mean(d, j)) / s;
      want += -0.5 * z * z - std::log(s) - 0.5 * std::log(2 * std::numbers::pi);
      want -= std::log(1.0 - std::pow(std::tanh(u(d, j)), 2));
    }
    EXPECT_NEAR(lp(j), want, 1e-8);
  }
}

TEST(Policy, LogProbStableForSaturatedActions) {
  Matrix u(1, 1), m(1, 1), s(1, 1);
  u << 30.0;
  m << 30.0;
  s << 0.0;
  const double lp = sac::squashed_log_prob(u, m, s)(0);
  EXPECT_TRUE(std::isfinite(lp));
  // log(1 - tanh(30)^2) ~ log(4) - 60.
  EXPECT_NEAR(lp, -0.5 * std::log(2 * std::numbers::pi) - (std::log(4.0) - 60.0), 1e-9);
}

TEST(Policy, ZeroMeanDeterministicActionIsZero) {
  Rng rng(2);
  sac::PolicyBundle b(4, 2, small_config(), rng);
  const int last = b.actor.layer_count() - 1;
  b.actor.weight(last).topRows(2).setZero();
  b.actor.bias(last).topRows(2).setZero();
  const Vector a = b.act(rng.normal_vector(4), sac::ActMode::kDeterministic, rng);
  EXPECT_EQ(a, Vector::Zero(2));
}

TEST(Policy, SampledActionsStayInBoundsAndLogStdInRange) {
  Rng rng(3);
  auto cfg = small_config();
  sac::PolicyBundle b(4, 2, cfg, rng);
  const int last = b.actor.layer_count() - 1;
  b.actor.bias(last).setConstant(50.0);  // saturate mean and log-std
  const auto s = b.sample(rng.normal_matrix(4, 100), rng);
  EXPECT_LE(s.actions.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_LE(s.log_std.maxCoeff(), cfg.log_std_max);
  EXPECT_GE(s.log_std.minCoeff(), cfg.log_std_min);
  EXPECT_TRUE(s.log_prob.allFinite());
}

TEST(Policy, SampleWithSuppliedNoiseIsReproducible) {
  Rng rng(4);
  sac::PolicyBundle b(3, 1, small_config(), rng);
  const Matrix states = rng.normal_matrix(3, 8);
  Rng a(9), c(9);
  const auto s1 = b.sample(states, a);
  const auto s2 = b.sample(states, c.normal_matrix(1, 8));
  EXPECT_EQ(s1.actions, s2.actions);
  EXPECT_LT((s1.pre_tanh - (s1.mean + (s1.log_std.array().exp() * s1.xi.array()).matrix()))
                .norm(), 1e-15);
}

TEST(Critic, TargetMatchesFormula) {
  Rng rng(5);
  sac::PolicyBundle b(3, 2, small_config(), rng);
  const Vector r = rng.normal_vector(6);
  const Matrix next = rng.normal_matrix(3, 6);
  const Matrix xi = rng.normal_matrix(2, 6);
  const Vector y = sac::critic_target(b, r, next, xi);
  const auto s = b.sample(next, xi);
  Matrix in(5, 6);
  in << next, s.actions;
  for (Eigen::Index j = 0; j < 6; ++j) {
    const double q = std::min(b.q1_target.forward(Vector(in.col(j)))(0),
                              b.q2_target.forward(Vector(in.col(j)))(0));
    EXPECT_NEAR(y(j), r(j) + 0.99 * (q - b.alpha() * s.log_prob(j)), 1e-12);
  }
}

TEST(Critic, SoftUpdateIsConvexCombination) {
  Rng rng(6);
  auto a = nn::DenseNet({2, 3, 1}, nn::Activation::kTanh, rng);
  auto b = nn::DenseNet({2, 3, 1}, nn::Activation::kTanh, rng);
  auto t = a;
  sac::soft_update(t, b, 0.25);
  EXPECT_LT((t.flat_parameters() - (0.25 * b.flat_parameters() + 0.75 * a.flat_parameters())).norm(),
            1e-15);
  sac::soft_update(t, b, 1.0);
  EXPECT_TRUE(t == b);
}

TEST(Actor, OutputGradientMatchesFiniteDifferences) {
  Rng rng(7);
  sac::PolicyBundle b(3, 2, small_config(), rng);
  const Matrix states = rng.normal_matrix(3, 5);
  const Matrix xi = rng.normal_matrix(2, 5);
  const double alpha = 0.3;
  nn::DenseNet::Tape tape;
  b.actor.forward(states, tape);
  const Matrix up = sac::actor_output_gradient(b, states, xi, alpha);
  const auto grads = b.actor.backward(tape, up);
  auto loss = [&] {
    double l = 0.0;
    sac::actor_output_gradient(b, states, xi, alpha, &l);
    return l;
  };
  EXPECT_LT(support::max_gradient_error(b.actor.parameters(), grads, loss), 1e-5);
}

TEST(Agent, BanditValueConvergesToGeometricSum) {
  // One state, constant reward 1, gamma 0.9: Q -> 1 / (1 - 0.9) = 10.
  sac::SacConfig cfg;
  cfg.hidden = {32, 32};
  cfg.gamma = 0.9;
  cfg.learn_alpha = false;
  cfg.initial_alpha = 1e-4;
  cfg.critic_lr = 1e-3;
  cfg.polyak = 0.02;
  Rng rng(8);
  sac::SacAgent agent(1, 1, cfg, rng);
  sac::Batch batch{Matrix::Zero(1, 32), Matrix::Zero(1, 32), Vector::Ones(32), Matrix::Zero(1, 32)};
  for (int i = 0; i < 6000; ++i) {
    batch.actions = rng.normal_matrix(1, 32).array().tanh().matrix();
    agent.update(batch, rng);
  }
  const Vector q = agent.bundle().min_q(Matrix::Zero(1, 16),
                                        Rng(9).normal_matrix(1, 16).array().tanh().matrix(), false);
  EXPECT_NEAR(q.mean(), 10.0, 0.5);
}

TEST(Agent, TemperatureMovesTowardTargetEntropy) {
  auto cfg = small_config();
  cfg.alpha_lr = 1e-2;
  Rng rng(10);
  sac::SacAgent agent(2, 1, cfg, rng);
  const double before = agent.bundle().log_alpha();
  sac::Batch batch{rng.normal_matrix(2, 16), rng.normal_matrix(1, 16).array().tanh().matrix(),
                   Vector::Zero(16), rng.normal_matrix(2, 16)};
  const auto rep = agent.update(batch, rng);
  // A fresh policy is near-Gaussian with entropy above -dim(A), so alpha shrinks.
  EXPECT_LT(rep.mean_log_prob + agent.bundle().target_entropy(), 0.0);
  EXPECT_LT(agent.bundle().log_alpha(), before);
}

TEST(Agent, FixedTemperatureStaysFixed) {
  auto cfg = small_config();
  cfg.learn_alpha = false;
  Rng rng(11);
  sac::SacAgent agent(2, 1, cfg, rng);
  sac::Batch batch{rng.normal_matrix(2, 8), Matrix::Zero(1, 8), Vector::Zero(8), rng.normal_matrix(2, 8)};
  agent.update(batch, rng);
  EXPECT_DOUBLE_EQ(agent.bundle().alpha(), cfg.initial_alpha);
}

TEST(Agent, RejectsBadBatches) {
  Rng rng(12);
  sac::SacAgent agent(2, 1, small_config(), rng);
  sac::Batch batch{Matrix::Zero(2, 4), Matrix::Zero(1, 4), Vector::Zero(3), Matrix::Zero(2, 4)};
  EXPECT_THROW(agent.update(batch, rng), ShapeError);
  batch.rewards = Vector::Constant(4, std::numeric_limits<double>::quiet_NaN());
  EXPECT_THROW(agent.update(batch, rng), NumericError);
}

TEST(Agent, SaveLoadContinuesIdentically) {
  Rng rng(13);
  sac::SacAgent a(2, 1, small_config(), rng);
  sac::Batch batch{rng.normal_matrix(2, 8), rng.normal_matrix(1, 8).array().tanh().matrix(),
                   rng.normal_vector(8), rng.normal_matrix(2, 8)};
  a.update(batch, rng);
  std::stringstream ss;
  a.save(ss);
  sac::SacAgent b = sac::SacAgent::load(ss);
  Rng r1(5), r2(5);
  a.update(batch, r1);
  b.update(batch, r2);
  EXPECT_TRUE(a.bundle().actor == b.bundle().actor);
  EXPECT_TRUE(a.bundle().q2_target == b.bundle().q2_target);
  EXPECT_EQ(a.bundle().log_alpha(), b.bundle().log_alpha());
}

TEST(ReplayBuffer, RingSemanticsAndUniformSampling) {
  sac::AgentReplayBuffer buf(1, 1, 4);
  for (int i = 0; i < 6; ++i)
    buf.push(Vector::Constant(1, i), Vector::Constant(1, -i), Vector::Constant(1, i + 1), i == 5);
  EXPECT_EQ(buf.size(), 4u);
  Rng rng(14);
  const auto s = buf.sample(4000, rng);
  std::vector<int> counts(6, 0);
  for (Eigen::Index j = 0; j < 4000; ++j) {
    const int v = static_cast<int>(s.states(0, j));
    ASSERT_GE(v, 2);
    EXPECT_EQ(s.actions(0, j), -v);
    EXPECT_EQ(s.next_states(0, j), v + 1);
    ++counts[static_cast<std::size_t>(v)];
  }
  for (int v = 2; v < 6; ++v) EXPECT_NEAR(counts[static_cast<std::size_t>(v)], 1000, 150);
  const Matrix pairs = sac::AgentReplayBuffer::pairs(s);
  EXPECT_EQ(pairs.rows(), 2);
  std::stringstream ss;
  buf.save(ss);
  const auto back = sac::AgentReplayBuffer::load(ss);
  Rng a(1), b(1);
  EXPECT_EQ(back.sample(10, a).states, buf.sample(10, b).states);
}
