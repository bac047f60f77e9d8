#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "sd2ail/envs.hpp"
#include "support.hpp"

using namespace sd2ail;
using envs::make_env;

TEST(Env, SpecsAreConsistent) {
  const auto pm = make_env("pointmass2d");
  EXPECT_EQ(pm.state_dim, 4);
  EXPECT_EQ(pm.action_dim, 2);
  EXPECT_EQ(pm.horizon, 200);
  const auto di = make_env("doubleintegrator1d");
  EXPECT_EQ(di.state_dim, 2);
  EXPECT_EQ(di.horizon, 100);
  EXPECT_THROW(make_env("cartpole"), ConfigError);
}

TEST(Env, StepMatchesHandComputation) {
  const auto spec = make_env("pointmass2d");
  Vector s(4), a(2);
  s << 0.2, -0.4, 1.0, 0.5;
  a << 0.5, -2.0;  // second component clips to -1
  const auto r = envs::step(spec, s, a, 0);
  Vector want(4);
  want << 0.2 + 0.05, -0.4 + 0.025, 1.0 + 0.025, 0.5 - 0.05;
  EXPECT_LT((r.next_state - want).norm(), 1e-15);
  EXPECT_DOUBLE_EQ(r.reward, -((0.04 + 0.16) + 0.1 * 1.25 + 0.01 * 1.25));
  EXPECT_FALSE(r.done);
  EXPECT_TRUE(envs::step(spec, s, a, 199).done);
}

TEST(Env, ExpertIsClippedPdLaw) {
  const auto spec = make_env("doubleintegrator1d");
  Vector s(2);
  s << 0.3, -0.1;
  EXPECT_DOUBLE_EQ(envs::scripted_expert(spec, s)(0), -1.2 * 0.3 + 1.8 * 0.1);
  s << 5.0, 0.0;
  EXPECT_DOUBLE_EQ(envs::scripted_expert(spec, s)(0), -1.0);
}

TEST(Env, RolloutCanBeResimulated) {
  for (const auto& name : envs::env_names()) {
    const auto spec = make_env(name);
    envs::RandomController ctl(spec, 3);
    const auto traj = envs::collect_trajectories(spec, ctl, 1, 5).front();
    ASSERT_EQ(static_cast<int>(traj.transitions.size()), spec.horizon);
    Vector state = traj.transitions.front().state;
    double sum = 0.0;
    for (int t = 0; t < spec.horizon; ++t) {
      const auto& tr = traj.transitions[static_cast<std::size_t>(t)];
      EXPECT_EQ(tr.state, state);
      const auto r = envs::step(spec, state, tr.action, t);
      EXPECT_EQ(r.next_state, tr.next_state);
      EXPECT_EQ(r.reward, tr.reward);
      EXPECT_EQ(r.done, t + 1 == spec.horizon);
      sum += r.reward;
      state = r.next_state;
    }
    EXPECT_NEAR(traj.episode_return, sum, 1e-9 * std::abs(sum));
  }
}

TEST(Env, InitialStatesStayInTheBox) {
  const auto spec = make_env("pointmass2d");
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Vector s = envs::sample_initial_state(spec, rng);
    EXPECT_LE(s.cwiseAbs().maxCoeff(), 0.5);
  }
}

TEST(Env, ExpertFarOutperformsRandom) {
  const auto spec = make_env("pointmass2d");
  envs::ScriptedExpert expert(spec);
  envs::RandomController random(spec, 99);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double e = envs::collect_trajectories(spec, expert, 1, seed).front().episode_return;
    const double r = envs::collect_trajectories(spec, random, 1, seed).front().episode_return;
    EXPECT_GE(e, -15.0) << seed;
    EXPECT_LE(r, -40.0) << seed;
  }
}

TEST(Env, ExpertDrivesStateTowardOrigin) {
  const auto spec = make_env("doubleintegrator1d");
  envs::ScriptedExpert expert(spec);
  for (const auto& traj : envs::collect_trajectories(spec, expert, 10, 4)) {
    EXPECT_LT(traj.transitions.back().next_state.norm(), traj.transitions.front().state.norm());
  }
}

TEST(Env, CollectIsDeterministic) {
  const auto spec = make_env("pointmass2d");
  envs::ScriptedExpert a(spec), b(spec);
  const auto x = envs::collect_trajectories(spec, a, 3, 11);
  const auto y = envs::collect_trajectories(spec, b, 3, 11);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(x[i].pairs(), y[i].pairs());
    EXPECT_EQ(x[i].episode_return, y[i].episode_return);
  }
  EXPECT_THROW(envs::collect_trajectories(spec, a, 0, 1), ConfigError);
}

TEST(Env, TrajectoryFileRoundTrip) {
  const auto spec = make_env("doubleintegrator1d");
  envs::ScriptedExpert ctl(spec);
  const auto trajs = envs::collect_trajectories(spec, ctl, 2, 7);
  std::stringstream ss;
  envs::write_trajectories(ss, spec, trajs);
  const auto back = envs::read_trajectories(ss);
  EXPECT_EQ(back.env_name, spec.name);
  EXPECT_EQ(back.state_dim, 2);
  EXPECT_EQ(back.horizon, 100);
  ASSERT_EQ(back.trajectories.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.trajectories[i].pairs(), trajs[i].pairs());
    EXPECT_EQ(back.trajectories[i].episode_return, trajs[i].episode_return);
    EXPECT_EQ(back.trajectories[i].transitions.back().next_state,
              trajs[i].transitions.back().next_state);
  }
}

TEST(Env, RejectsMalformedFiles) {
  std::stringstream bad("SD2AIL-TRAJ 1 pointmass2d 4 2 200 1\n1,2,3\n");
  EXPECT_ANY_THROW(envs::read_trajectories(bad));
  std::stringstream header("not a trajectory file\n");
  EXPECT_ANY_THROW(envs::read_trajectories(header));
}

TEST(Env, NonFiniteInputsThrow) {
  const auto spec = make_env("pointmass2d");
  Vector s = Vector::Zero(4), a = Vector::Zero(2);
  a(0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(envs::step(spec, s, a, 0), NumericError);
  a.setZero();
  s(1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(envs::step(spec, s, a, 0), NumericError);
  EXPECT_THROW(envs::step(spec, Vector::Zero(3), a, 0), ShapeError);
}
