#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace sd2ail {

struct DiffusionSettings {
  int steps = 10;
  double beta_start = 0.05;
  double beta_end = 0.45;
  std::vector<int> hidden{64, 64};
  int embed_dim = 8;
  std::string activation = "relu";
  double learning_rate = 1e-3;
  double clamp_delta = 1e-6;
  int noise_draws = 1;
};

struct DiscriminatorSettings {
  int expert_batch = 64;  // k
  int agent_batch = 256;
  int every = 4;  // env steps between discriminator updates
  bool tau_full_dataset = false;
};

struct PedrSettings {
  bool enabled = true;  // false: uniform sampling (zeta = 0)
  double zeta = 0.6;
  double eta_start = 0.4;
};

struct PseudoSettings {
  bool enabled = true;
  double ratio = 7.0;
  int every = 1000;
  int count = 256;
  std::size_t capacity = 50000;
};

struct SacSettings {
  std::vector<int> hidden{64, 64};
  std::string activation = "relu";
  double gamma = 0.99;
  double polyak = 0.005;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  double initial_alpha = 0.01;
  bool learn_alpha = true;
  int batch_size = 128;
  int every = 1;
  std::size_t buffer_capacity = 200000;
};

struct EvalSettings {
  int every = 5000;
  int episodes = 10;
  std::uint64_t seed = 424242;
  int fd_samples = 1000;
};

/// Every knob of a training run. Serialised as JSON; unknown keys are
/// rejected so typos do not silently fall back to defaults.
struct RunConfig {
  std::string env = "pointmass2d";
  std::string demos;
  int expert_trajectories = 1;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::int64_t total_steps = 150000;
  std::int64_t warmup_steps = 1000;
  std::int64_t checkpoint_every = 0;  // resume-state snapshots; 0 = end of run only
  DiffusionSettings diffusion;
  DiscriminatorSettings discriminator;
  PedrSettings pedr;
  PseudoSettings pseudo;
  SacSettings sac;
  EvalSettings eval;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& c);

/// SD2AIL_OUTPUT_DIR and SD2AIL_SEED, when set, override the file values.
void apply_environment_overrides(RunConfig& c);

}  // namespace sd2ail
