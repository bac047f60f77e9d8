#pragma once

#include <iosfwd>
#include <limits>
#include <vector>

#include "sd2ail/common.hpp"
#include "sd2ail/nn.hpp"

namespace sd2ail::sac {

struct SacConfig {
  std::vector<int> hidden{64, 64};
  nn::Activation activation = nn::Activation::kRelu;
  double gamma = 0.99;
  double polyak = 0.005;  // target <- polyak * critic + (1 - polyak) * target
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  double initial_alpha = 0.2;
  bool learn_alpha = true;
  /// NaN selects the default, -action_dim.
  double target_entropy = std::numeric_limits<double>::quiet_NaN();
  double log_std_min = -5.0;
  double log_std_max = 2.0;
};

enum class ActMode { kStochastic, kDeterministic };

/// Squashed-Gaussian actions for a batch of states.
struct ActionSample {
  Matrix actions;   // tanh(pre_tanh), in [-1, 1]
  Vector log_prob;  // log pi(a | s), change-of-variables corrected
  Matrix pre_tanh;  // u = mean + std * xi
  Matrix mean;
  Matrix log_std;
  Matrix xi;        // standard-normal draws
};

/// log N(u; mean, exp(log_std)) - sum log(1 - tanh(u)^2), per column.
Vector squashed_log_prob(const Matrix& pre_tanh, const Matrix& mean, const Matrix& log_std);

/// Actor, twin critics, their targets and the entropy temperature.
class PolicyBundle {
 public:
  PolicyBundle() = default;
  PolicyBundle(int state_dim, int action_dim, const SacConfig& config, Rng& rng);

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  const SacConfig& config() const { return config_; }
  double alpha() const { return std::exp(log_alpha_); }
  double log_alpha() const { return log_alpha_; }
  double target_entropy() const;

  Vector act(const Vector& state, ActMode mode, Rng& rng) const;
  /// Draws xi from `rng` (column-major) and samples actions.
  ActionSample sample(const Matrix& states, Rng& rng) const;
  /// Same with caller-supplied noise.
  ActionSample sample(const Matrix& states, const Matrix& xi) const;

  /// min(Q1, Q2) on (state ; action) columns.
  Vector min_q(const Matrix& states, const Matrix& actions, bool target) const;
  /// Penultimate-layer features of the first critic.
  Matrix critic_features(const Matrix& states, const Matrix& actions) const;

  nn::DenseNet actor;
  nn::DenseNet q1, q2;
  nn::DenseNet q1_target, q2_target;

  void set_log_alpha(double v) { log_alpha_ = v; }

  void save(std::ostream& os) const;
  static PolicyBundle load(std::istream& is);

 private:
  void split_actor_output(const Matrix& out, Matrix& mean, Matrix& log_std) const;

  int state_dim_ = 0;
  int action_dim_ = 0;
  SacConfig config_;
  double log_alpha_ = 0.0;
};

/// Off-policy batch. Rewards are supplied by the caller (the surrogate).
struct Batch {
  Matrix states;
  Matrix actions;
  Vector rewards;
  Matrix next_states;
};

struct UpdateReport {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
  double mean_q = 0.0;
  double mean_target = 0.0;
  double mean_log_prob = 0.0;
};

/// y = r + gamma * (min(Q1', Q2')(s', a') - alpha * log pi(a' | s')), with
/// a' drawn using the given noise.
Vector critic_target(const PolicyBundle& bundle, const Vector& rewards, const Matrix& next_states,
                     const Matrix& next_xi);

/// target <- polyak * critic + (1 - polyak) * target, parameter-wise.
void soft_update(nn::DenseNet& target, const nn::DenseNet& source, double polyak);

class SacAgent {
 public:
  SacAgent() = default;
  SacAgent(int state_dim, int action_dim, const SacConfig& config, Rng& rng);

  PolicyBundle& bundle() { return bundle_; }
  const PolicyBundle& bundle() const { return bundle_; }

  /// Critic step, actor step, temperature step, soft target update.
  UpdateReport update(const Batch& batch, Rng& rng);

  void save(std::ostream& os) const;
  static SacAgent load(std::istream& is);

 private:
  PolicyBundle bundle_;
  nn::Adam actor_opt_, q1_opt_, q2_opt_, alpha_opt_;
};

/// Gradient of mean(alpha * log pi - min Q) with respect to the actor
/// output (mean rows then raw log-std rows), used by SacAgent::update and
/// checked against finite differences in the tests.
Matrix actor_output_gradient(const PolicyBundle& bundle, const Matrix& states,
                             const Matrix& xi, double alpha, double* loss = nullptr);

/// Uniform ring buffer of (s, a, s', done). True rewards are deliberately
/// not stored: training sees only what the discriminator scores.
class AgentReplayBuffer {
 public:
  AgentReplayBuffer() = default;
  AgentReplayBuffer(int state_dim, int action_dim, std::size_t capacity);

  void push(const Vector& state, const Vector& action, const Vector& next_state, bool done);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }

  struct Sample {
    Matrix states, actions, next_states;
    std::vector<std::size_t> indices;
  };
  Sample sample(std::size_t k, Rng& rng) const;
  /// (state ; action) columns of a sample.
  static Matrix pairs(const Sample& s);

  void save(std::ostream& os) const;
  static AgentReplayBuffer load(std::istream& is);

 private:
  int state_dim_ = 0, action_dim_ = 0;
  std::size_t capacity_ = 0, size_ = 0, head_ = 0;
  Matrix states_, actions_, next_states_;
  std::vector<char> done_;
};

}  // namespace sd2ail::sac
