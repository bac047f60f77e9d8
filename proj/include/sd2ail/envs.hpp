#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "sd2ail/common.hpp"

namespace sd2ail::envs {

/// A point mass in `dims` dimensions driven by a bounded force. State is
/// (position..., velocity...), action is the force.
struct EnvSpec {
  std::string name;
  int dims = 0;
  int state_dim = 0;
  int action_dim = 0;
  double action_low = -1.0;
  double action_high = 1.0;
  double dt = 0.05;
  int horizon = 0;
  double init_position_range = 0.0;  // positions ~ U[-r, r]
  double init_velocity_range = 0.0;  // velocities ~ U[-r, r]
  double expert_kp = 1.2;
  double expert_kd = 1.8;
};

/// "pointmass2d" or "doubleintegrator1d".
EnvSpec make_env(const std::string& name);
std::vector<std::string> env_names();

struct StepResult {
  Vector next_state;
  double reward = 0.0;
  bool done = false;
};

/// One Euler step: x' = x + v dt, v' = v + a dt, with
/// reward = -(|x|^2 + 0.1 |v|^2 + 0.01 |a|^2) on the pre-step state.
/// `t` is the zero-based index of this step within the episode.
StepResult step(const EnvSpec& spec, const Vector& state, const Vector& action, int t);

Vector sample_initial_state(const EnvSpec& spec, Rng& rng);
Vector clip_action(const EnvSpec& spec, const Vector& action);

class Controller {
 public:
  virtual ~Controller() = default;
  virtual Vector act(const Vector& state) = 0;
  virtual std::string id() const = 0;
};

/// Clipped PD law a = clip(-kp * pos - kd * vel).
class ScriptedExpert final : public Controller {
 public:
  explicit ScriptedExpert(EnvSpec spec) : spec_(std::move(spec)) {}
  Vector act(const Vector& state) override;
  std::string id() const override { return "scripted-pd"; }

 private:
  EnvSpec spec_;
};

Vector scripted_expert(const EnvSpec& spec, const Vector& state);

/// Uniform actions over the action box.
class RandomController final : public Controller {
 public:
  RandomController(EnvSpec spec, std::uint64_t seed) : spec_(std::move(spec)), rng_(seed) {}
  Vector act(const Vector& state) override;
  std::string id() const override { return "uniform-random"; }

 private:
  EnvSpec spec_;
  Rng rng_;
};

struct Transition {
  Vector state;
  Vector action;
  Vector next_state;
  double reward = 0.0;
  bool done = false;
};

struct Trajectory {
  std::vector<Transition> transitions;
  double episode_return = 0.0;
  std::string env_name;
  std::uint64_t seed = 0;
  std::string controller_id;

  /// (state ; action) columns.
  Matrix pairs() const;
};

Trajectory rollout(const EnvSpec& spec, Controller& controller, const Vector& initial_state);

/// n full-horizon episodes; initial states drawn from Rng(seed).
std::vector<Trajectory> collect_trajectories(const EnvSpec& spec, Controller& controller, int n,
                                             std::uint64_t seed);

struct TrajectoryFile {
  std::string env_name;
  int state_dim = 0;
  int action_dim = 0;
  int horizon = 0;
  std::vector<Trajectory> trajectories;
};

void write_trajectories(std::ostream& os, const EnvSpec& spec,
                        const std::vector<Trajectory>& trajectories);
void write_trajectories(const std::filesystem::path& path, const EnvSpec& spec,
                        const std::vector<Trajectory>& trajectories);
TrajectoryFile read_trajectories(std::istream& is);
TrajectoryFile read_trajectories(const std::filesystem::path& path);

}  // namespace sd2ail::envs
