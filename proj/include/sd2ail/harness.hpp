#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sd2ail/common.hpp"
#include "sd2ail/config.hpp"
#include "sd2ail/discriminator.hpp"
#include "sd2ail/envs.hpp"
#include "sd2ail/nn.hpp"
#include "sd2ail/pedr.hpp"
#include "sd2ail/sac.hpp"

namespace sd2ail::harness {

/// One evaluation row of metrics.csv.
struct MetricsRow {
  std::int64_t step = 0;
  double mean_true_return = 0.0;
  double mean_surrogate_return = 0.0;
  double tau = 0.0;
  std::size_t pseudo_buffer_size = 0;
  double acceptance_rate = 0.0;  // of the latest generation event
  double disc_loss = 0.0;        // mean since the previous row
  double pcc = 0.0;              // over this row's episodes
  double fd = 0.0;               // pseudo vs expert, critic features
};

struct EvalEpisode {
  std::int64_t step = 0;
  int episode = 0;
  double true_return = 0.0;
  double surrogate_return = 0.0;
};

struct GenerationEvent {
  std::int64_t step = 0;
  int generated = 0;
  int accepted = 0;
  double acceptance_rate = 0.0;
  double tau = 0.0;
};

/// End-of-run numbers used by the reports and acceptance checks.
struct Summary {
  double expert_return = 0.0;  // scripted expert on the evaluation starts
  double random_return = 0.0;  // uniform-random policy on the same starts
  double final_return = 0.0;
  double best_return = 0.0;
  double final_score = 0.0;  // (R - random) / (expert - random)
  double best_score = 0.0;
  double pcc_all_episodes = 0.0;  // every evaluation episode, rescored by the final discriminator
  double fd_pseudo_expert = 0.0;
  double fd_random_expert = 0.0;
  double tau_min = 0.0;
  double tau_max = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::int64_t step, std::string phase, const std::string& what);
  std::int64_t step() const { return step_; }
  const std::string& phase() const { return phase_; }

 private:
  std::int64_t step_;
  std::string phase_;
};

/// Wraps a policy as an environment controller (deterministic actions).
class PolicyController final : public envs::Controller {
 public:
  explicit PolicyController(const sac::PolicyBundle& bundle) : bundle_(&bundle) {}
  Vector act(const Vector& state) override;
  std::string id() const override { return "sac-policy"; }

 private:
  const sac::PolicyBundle* bundle_;
  Rng unused_{0};
};

/// The training loop and all of its state. Construction validates the
/// config and reads the demonstrations but touches no output files.
class Trainer {
 public:
  explicit Trainer(RunConfig config);
  ~Trainer();

  const RunConfig& config() const { return config_; }
  std::int64_t step() const { return step_; }
  const envs::EnvSpec& spec() const { return spec_; }

  /// Environment steps until `total_steps`; writes metrics rows as they
  /// are produced when an output directory has been opened.
  void run();
  /// Performs exactly one environment step plus whatever updates fall on it.
  void advance();

  /// Creates the output directory, snapshots the config and writes the
  /// initial checkpoints and CSV headers.
  void open_outputs();
  /// Final checkpoints, pseudo-buffer snapshot, summary and resume state.
  void close_outputs();

  /// Restores the full loop state from `<output_dir>/state`.
  void load_state(const std::filesystem::path& dir);
  void save_state(const std::filesystem::path& dir) const;

  const std::vector<MetricsRow>& metrics() const { return metrics_; }
  const std::vector<EvalEpisode>& episodes() const { return episodes_; }
  const std::vector<GenerationEvent>& generations() const { return generations_; }
  Summary summarize();

  const discriminator::Discriminator& discriminator() const { return disc_; }
  const sac::SacAgent& agent() const { return agent_; }
  const pedr::ReplayCoordinator& coordinator() const { return coordinator_; }
  const Matrix& expert_pairs() const { return expert_pairs_; }
  double tau() const { return tau_; }

 private:
  void discriminator_phase();
  void generation_phase();
  void policy_phase();
  void evaluation_phase();
  void append_outputs(const MetricsRow& row, std::size_t first_episode);
  Matrix pseudo_sample_for_fd() const;

  RunConfig config_;
  envs::EnvSpec spec_;
  Matrix expert_pairs_;
  std::vector<Matrix> expert_trajectories_;
  std::vector<Vector> eval_starts_;

  discriminator::Discriminator disc_;
  nn::Adam disc_opt_;
  sac::SacAgent agent_;
  pedr::ReplayCoordinator coordinator_;
  sac::AgentReplayBuffer replay_;

  Rng env_rng_, policy_rng_, disc_rng_, sample_rng_, gen_rng_, reward_rng_, sac_rng_, eval_rng_;

  std::int64_t step_ = 0;
  Vector state_;
  int episode_t_ = 0;
  double tau_ = std::numeric_limits<double>::quiet_NaN();
  double loss_sum_ = 0.0;
  std::int64_t loss_count_ = 0;

  std::vector<MetricsRow> metrics_;
  std::vector<EvalEpisode> episodes_;
  std::vector<Matrix> episode_pairs_;  // per evaluation episode, for offline rescoring
  std::vector<GenerationEvent> generations_;
  bool outputs_open_ = false;
};

struct RunResult {
  std::vector<MetricsRow> metrics;
  std::vector<EvalEpisode> episodes;
  std::vector<GenerationEvent> generations;
  Summary summary;
};

/// Validates, trains and writes every artifact under config.output_dir.
/// Nothing is created on disk if validation or demonstration loading fails.
RunResult run_training(const RunConfig& config);

/// Continues a run from its saved state up to `total_steps`.
RunResult resume_training(const std::filesystem::path& output_dir, std::int64_t total_steps);

/// Mean deterministic-policy return over `episodes` starts drawn from Rng(seed).
double evaluate_policy(const envs::EnvSpec& spec, envs::Controller& controller, int episodes,
                       std::uint64_t seed);

/// Fréchet distance between critic penultimate features of two pair sets
/// (columns are (state ; action)).
double evaluate_fd_to_expert(const sac::PolicyBundle& bundle, const Matrix& expert_pairs,
                             const Matrix& comparison_pairs);

double compute_pcc(const std::vector<double>& x, const std::vector<double>& y);

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const MetricsRow& row);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);
std::vector<EvalEpisode> read_eval_episodes(const std::filesystem::path& path);

}  // namespace sd2ail::harness
