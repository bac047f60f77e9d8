#pragma once

#include <iosfwd>
#include <vector>

#include "sd2ail/common.hpp"
#include "sd2ail/diffusion.hpp"
#include "sd2ail/nn.hpp"

namespace sd2ail::discriminator {

/// Confidence that each column of `normalized` is expert data:
///   D = clamp( (1/T) sum_t exp(-||eps_t - eps_model(x_t, t)||^2), delta, 1 - delta )
/// with `draws` fresh noise vectors per step (averaged) taken from `noise`
/// in sample-major, step-minor order.
Vector confidence(const diffusion::EpsilonModel& model, const diffusion::Schedule& sched,
                  const Matrix& normalized, Rng& noise, double clamp_delta, int draws = 1);

/// Confidence from a T x n matrix of per-step losses (before clamping, the
/// column-wise mean of exp(-loss)).
Vector confidence_from_losses(const Matrix& losses, double clamp_delta);

/// -log(1 - D).
double surrogate_reward(double confidence);

/// Mean of expert confidences; throws on an empty batch.
double dynamic_threshold(const Vector& expert_confidences);

/// Training inputs, all columns already normalised. Positive groups carry
/// importance weights; agent samples have implicit weight 1.
struct LabeledBatch {
  Matrix expert;
  Vector expert_weights;
  Matrix pseudo;
  Vector pseudo_weights;
  Matrix agent;
};

struct StepResult {
  double loss = 0.0;
  Vector expert_confidence;  // pre-update, clamped
  Vector pseudo_confidence;
  Vector agent_confidence;
};

struct FilterResult {
  Matrix accepted;                   // raw pairs, original order
  std::vector<Eigen::Index> kept;    // candidate column indices
  Vector confidence;                 // every candidate
};

class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(int state_dim, int action_dim, diffusion::NoisePredictor predictor,
                diffusion::Schedule sched, diffusion::Normalizer normalizer,
                double clamp_delta = 1e-6, int noise_draws = 1);

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  int pair_dim() const { return state_dim_ + action_dim_; }
  double clamp_delta() const { return clamp_delta_; }
  int noise_draws() const { return noise_draws_; }

  const diffusion::NoisePredictor& predictor() const { return predictor_; }
  diffusion::NoisePredictor& predictor() { return predictor_; }
  const diffusion::Schedule& schedule() const { return sched_; }
  const diffusion::Normalizer& normalizer() const { return normalizer_; }

  /// Raw (state ; action) columns.
  Vector confidence(const Matrix& pairs, Rng& noise) const;
  double confidence(const Vector& state, const Vector& action, Rng& noise) const;
  Vector confidence_normalized(const Matrix& normalized, Rng& noise) const;
  Vector surrogate_reward(const Matrix& pairs, Rng& noise) const;
  double dynamic_threshold(const Matrix& expert_pairs, Rng& noise) const;

  /// Keeps candidates whose confidence is strictly greater than tau.
  FilterResult filter_pseudo(const Matrix& candidates, double tau, Rng& noise) const;

  /// Reverse-diffusion samples mapped back to raw pair space (pair_dim x n).
  Matrix generate(int n, Rng& noise) const;

  /// Weighted three-group binary cross-entropy, each group mean-reduced,
  /// evaluated at the current parameters.
  double evaluate_loss(const LabeledBatch& batch, Rng& noise) const;
  /// Loss and its parameter gradients (ordered like predictor().parameters()).
  /// The confidences in `result` are those the loss was evaluated at.
  nn::Gradients loss_gradient(const LabeledBatch& batch, Rng& noise, StepResult& result) const;
  /// Same loss; applies one optimizer step.
  StepResult train_step(const LabeledBatch& batch, nn::Adam& optimizer, Rng& noise);

  nn::Adam make_optimizer(const nn::AdamConfig& config);

  void save(std::ostream& os) const;
  static Discriminator load(std::istream& is);

 private:
  struct Evaluation;
  Evaluation evaluate(const LabeledBatch& batch, Rng& noise, bool keep_tape) const;

  int state_dim_ = 0;
  int action_dim_ = 0;
  diffusion::NoisePredictor predictor_;
  diffusion::Schedule sched_;
  diffusion::Normalizer normalizer_;
  double clamp_delta_ = 1e-6;
  int noise_draws_ = 1;
};

/// Concatenates states (S x n) and actions (A x n) into pairs.
Matrix make_pairs(const Matrix& states, const Matrix& actions);

}  // namespace sd2ail::discriminator
