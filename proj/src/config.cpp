#include "sd2ail/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "sd2ail/common.hpp"
#include "sd2ail/envs.hpp"
#include "sd2ail/io.hpp"

namespace sd2ail {

namespace {

using nlohmann::json;

void require(bool ok, const std::string& field, const std::string& rule) {
  if (!ok) throw ConfigError("config field '" + field + "' " + rule);
}

void check_hidden(const std::vector<int>& h, const std::string& field) {
  require(!h.empty(), field, "needs at least one hidden layer");
  for (int v : h) require(v > 0, field, "entries must be positive");
}

// Reads j[key] into out when present; remembers which keys were consumed.
template <typename T>
void take(const json& j, const char* key, T& out, std::set<std::string>& seen) {
  seen.insert(key);
  if (auto it = j.find(key); it != j.end()) {
    try {
      it->get_to(out);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config field '") + key + "' has the wrong type");
    }
  }
}

void reject_unknown(const json& j, const std::set<std::string>& seen, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!seen.count(it.key()))
      throw ConfigError("unknown config field '" + where + (where.empty() ? "" : ".") + it.key() + "'");
}

}  // namespace

void RunConfig::validate() const {
  envs::make_env(env);
  require(expert_trajectories >= 1, "expert_trajectories", "must be >= 1");
  require(total_steps >= 0, "total_steps", "must be >= 0");
  require(warmup_steps >= 1, "warmup_steps", "must be >= 1");
  require(!output_dir.empty(), "output_dir", "must not be empty");
  require(checkpoint_every >= 0, "checkpoint_every", "must be >= 0");

  const auto& d = diffusion;
  require(d.steps >= 1, "diffusion.steps", "must be >= 1");
  require(d.beta_start > 0.0 && d.beta_start <= d.beta_end && d.beta_end < 1.0,
          "diffusion.beta_start/beta_end", "must satisfy 0 < start <= end < 1");
  check_hidden(d.hidden, "diffusion.hidden");
  require(d.embed_dim >= 0, "diffusion.embed_dim", "must be >= 0");
  require(d.activation == "tanh" || d.activation == "relu", "diffusion.activation", "must be tanh or relu");
  require(d.learning_rate > 0.0, "diffusion.learning_rate", "must be > 0");
  require(d.clamp_delta > 0.0 && d.clamp_delta < 0.5, "diffusion.clamp_delta", "must lie in (0, 0.5)");
  require(d.noise_draws >= 1, "diffusion.noise_draws", "must be >= 1");

  require(discriminator.expert_batch >= 1, "discriminator.expert_batch", "must be >= 1");
  require(discriminator.agent_batch >= 1, "discriminator.agent_batch", "must be >= 1");
  require(discriminator.every >= 1, "discriminator.every", "must be >= 1");

  require(pedr.zeta >= 0.0, "pedr.zeta", "must be >= 0");
  require(pedr.eta_start > 0.0 && pedr.eta_start <= 1.0, "pedr.eta_start", "must lie in (0, 1]");

  require(pseudo.ratio >= 0.0, "pseudo.ratio", "must be >= 0");
  require(pseudo.every >= 1, "pseudo.every", "must be >= 1");
  require(pseudo.count >= 1, "pseudo.count", "must be >= 1");
  require(pseudo.capacity >= 1, "pseudo.capacity", "must be >= 1");

  check_hidden(sac.hidden, "sac.hidden");
  require(sac.activation == "tanh" || sac.activation == "relu", "sac.activation", "must be tanh or relu");
  require(sac.gamma >= 0.0 && sac.gamma < 1.0, "sac.gamma", "must lie in [0, 1)");
  require(sac.polyak > 0.0 && sac.polyak <= 1.0, "sac.polyak", "must lie in (0, 1]");
  require(sac.actor_lr > 0.0 && sac.critic_lr > 0.0 && sac.alpha_lr > 0.0, "sac.*_lr", "must be > 0");
  require(sac.initial_alpha > 0.0, "sac.initial_alpha", "must be > 0");
  require(sac.batch_size >= 1, "sac.batch_size", "must be >= 1");
  require(sac.every >= 1, "sac.every", "must be >= 1");
  require(sac.buffer_capacity >= 1, "sac.buffer_capacity", "must be >= 1");

  require(eval.every >= 1, "eval.every", "must be >= 1");
  require(eval.episodes >= 2, "eval.episodes", "must be >= 2");
  require(eval.fd_samples >= 2, "eval.fd_samples", "must be >= 2");
}

json to_json(const RunConfig& c) {
  return json{
      {"env", c.env},
      {"demos", c.demos},
      {"expert_trajectories", c.expert_trajectories},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"total_steps", c.total_steps},
      {"warmup_steps", c.warmup_steps},
      {"checkpoint_every", c.checkpoint_every},
      {"diffusion",
       {{"steps", c.diffusion.steps},
        {"beta_start", c.diffusion.beta_start},
        {"beta_end", c.diffusion.beta_end},
        {"hidden", c.diffusion.hidden},
        {"embed_dim", c.diffusion.embed_dim},
        {"activation", c.diffusion.activation},
        {"learning_rate", c.diffusion.learning_rate},
        {"clamp_delta", c.diffusion.clamp_delta},
        {"noise_draws", c.diffusion.noise_draws}}},
      {"discriminator",
       {{"expert_batch", c.discriminator.expert_batch},
        {"agent_batch", c.discriminator.agent_batch},
        {"every", c.discriminator.every},
        {"tau_full_dataset", c.discriminator.tau_full_dataset}}},
      {"pedr", {{"enabled", c.pedr.enabled}, {"zeta", c.pedr.zeta}, {"eta_start", c.pedr.eta_start}}},
      {"pseudo",
       {{"enabled", c.pseudo.enabled},
        {"ratio", c.pseudo.ratio},
        {"every", c.pseudo.every},
        {"count", c.pseudo.count},
        {"capacity", c.pseudo.capacity}}},
      {"sac",
       {{"hidden", c.sac.hidden},
        {"activation", c.sac.activation},
        {"gamma", c.sac.gamma},
        {"polyak", c.sac.polyak},
        {"actor_lr", c.sac.actor_lr},
        {"critic_lr", c.sac.critic_lr},
        {"alpha_lr", c.sac.alpha_lr},
        {"initial_alpha", c.sac.initial_alpha},
        {"learn_alpha", c.sac.learn_alpha},
        {"batch_size", c.sac.batch_size},
        {"every", c.sac.every},
        {"buffer_capacity", c.sac.buffer_capacity}}},
      {"eval",
       {{"every", c.eval.every},
        {"episodes", c.eval.episodes},
        {"seed", c.eval.seed},
        {"fd_samples", c.eval.fd_samples}}},
  };
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  std::set<std::string> seen;
  take(j, "env", c.env, seen);
  take(j, "demos", c.demos, seen);
  take(j, "expert_trajectories", c.expert_trajectories, seen);
  take(j, "seed", c.seed, seen);
  take(j, "output_dir", c.output_dir, seen);
  take(j, "total_steps", c.total_steps, seen);
  take(j, "warmup_steps", c.warmup_steps, seen);
  take(j, "checkpoint_every", c.checkpoint_every, seen);
  auto section = [&](const char* name, auto&& fill) {
    seen.insert(name);
    if (auto it = j.find(name); it != j.end()) {
      std::set<std::string> inner;
      fill(*it, inner);
      reject_unknown(*it, inner, name);
    }
  };
  section("diffusion", [&](const json& s, std::set<std::string>& k) {
    take(s, "steps", c.diffusion.steps, k);
    take(s, "beta_start", c.diffusion.beta_start, k);
    take(s, "beta_end", c.diffusion.beta_end, k);
    take(s, "hidden", c.diffusion.hidden, k);
    take(s, "embed_dim", c.diffusion.embed_dim, k);
    take(s, "activation", c.diffusion.activation, k);
    take(s, "learning_rate", c.diffusion.learning_rate, k);
    take(s, "clamp_delta", c.diffusion.clamp_delta, k);
    take(s, "noise_draws", c.diffusion.noise_draws, k);
  });
  section("discriminator", [&](const json& s, std::set<std::string>& k) {
    take(s, "expert_batch", c.discriminator.expert_batch, k);
    take(s, "agent_batch", c.discriminator.agent_batch, k);
    take(s, "every", c.discriminator.every, k);
    take(s, "tau_full_dataset", c.discriminator.tau_full_dataset, k);
  });
  section("pedr", [&](const json& s, std::set<std::string>& k) {
    take(s, "enabled", c.pedr.enabled, k);
    take(s, "zeta", c.pedr.zeta, k);
    take(s, "eta_start", c.pedr.eta_start, k);
  });
  section("pseudo", [&](const json& s, std::set<std::string>& k) {
    take(s, "enabled", c.pseudo.enabled, k);
    take(s, "ratio", c.pseudo.ratio, k);
    take(s, "every", c.pseudo.every, k);
    take(s, "count", c.pseudo.count, k);
    take(s, "capacity", c.pseudo.capacity, k);
  });
  section("sac", [&](const json& s, std::set<std::string>& k) {
    take(s, "hidden", c.sac.hidden, k);
    take(s, "activation", c.sac.activation, k);
    take(s, "gamma", c.sac.gamma, k);
    take(s, "polyak", c.sac.polyak, k);
    take(s, "actor_lr", c.sac.actor_lr, k);
    take(s, "critic_lr", c.sac.critic_lr, k);
    take(s, "alpha_lr", c.sac.alpha_lr, k);
    take(s, "initial_alpha", c.sac.initial_alpha, k);
    take(s, "learn_alpha", c.sac.learn_alpha, k);
    take(s, "batch_size", c.sac.batch_size, k);
    take(s, "every", c.sac.every, k);
    take(s, "buffer_capacity", c.sac.buffer_capacity, k);
  });
  section("eval", [&](const json& s, std::set<std::string>& k) {
    take(s, "every", c.eval.every, k);
    take(s, "episodes", c.eval.episodes, k);
    take(s, "seed", c.eval.seed, k);
    take(s, "fd_samples", c.eval.fd_samples, k);
  });
  reject_unknown(j, seen, "");
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const RunConfig& c) {
  io::write_atomically(path, [&](std::ostream& os) { os << to_json(c).dump(2) << '\n'; });
}

void apply_environment_overrides(RunConfig& c) {
  if (const char* dir = std::getenv("SD2AIL_OUTPUT_DIR"); dir && *dir) c.output_dir = dir;
  if (const char* seed = std::getenv("SD2AIL_SEED"); seed && *seed) {
    try {
      c.seed = std::stoull(seed);
    } catch (const std::exception&) {
      throw ConfigError("SD2AIL_SEED is not an unsigned integer");
    }
  }
}

}  // namespace sd2ail
