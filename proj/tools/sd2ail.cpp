// Command-line front end: gen-demos, train, eval, metrics, sample-pseudo.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sd2ail/config.hpp"
#include "sd2ail/discriminator.hpp"
#include "sd2ail/envs.hpp"
#include "sd2ail/harness.hpp"
#include "sd2ail/io.hpp"
#include "sd2ail/metrics.hpp"
#include "sd2ail/sac.hpp"

namespace fs = std::filesystem;
using namespace sd2ail;

namespace {

constexpr const char* kScriptedHeader = "sd2ail-scripted";

// Scripted-expert "checkpoint": enough to replay the demonstrations.
struct ScriptedCheckpoint {
  std::string env;
  std::uint64_t seed = 0;
  int episodes = 0;
};

void write_scripted(const fs::path& path, const envs::EnvSpec& spec, std::uint64_t seed, int n) {
  io::write_atomically(path, [&](std::ostream& os) {
    os << kScriptedHeader << " 1\nenv " << spec.name << "\nkp " << io::format_double(spec.expert_kp)
       << "\nkd " << io::format_double(spec.expert_kd) << "\nseed " << seed << "\nepisodes " << n
       << '\n';
  });
}

ScriptedCheckpoint read_scripted(std::istream& is) {
  ScriptedCheckpoint c;
  std::string kp, kd;
  io::expect_token(is, "1");
  io::expect_token(is, "env");
  is >> c.env;
  io::expect_token(is, "kp");
  is >> kp;
  io::expect_token(is, "kd");
  is >> kd;
  io::expect_token(is, "seed");
  is >> c.seed;
  io::expect_token(is, "episodes");
  is >> c.episodes;
  if (!is) throw std::runtime_error("truncated scripted-expert checkpoint");
  const envs::EnvSpec spec = envs::make_env(c.env);
  if (io::parse_double(kp) != spec.expert_kp || io::parse_double(kd) != spec.expert_kd)
    throw std::runtime_error("scripted-expert gains differ from the built-in controller");
  return c;
}

std::ifstream open_existing(const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("file not found: " + path.string());
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return is;
}

std::string env_for_dims(int state_dim, int action_dim) {
  for (const auto& name : envs::env_names()) {
    auto spec = envs::make_env(name);
    if (spec.state_dim == state_dim && spec.action_dim == action_dim) return name;
  }
  throw std::runtime_error("no environment with these dimensions");
}

void print_summary(const harness::Summary& s) {
  nlohmann::json j{{"expert_return", s.expert_return},     {"random_return", s.random_return},
                   {"final_return", s.final_return},       {"best_return", s.best_return},
                   {"final_score", s.final_score},         {"best_score", s.best_score},
                   {"pcc_all_episodes", s.pcc_all_episodes},
                   {"fd_pseudo_expert", s.fd_pseudo_expert}, {"fd_random_expert", s.fd_random_expert},
                   {"tau_min", s.tau_min},                 {"tau_max", s.tau_max}};
  std::cout << j.dump(2) << '\n';
}

// --- subcommands ---------------------------------------------------------

struct GenDemosArgs {
  std::string env = "pointmass2d";
  int n = 1;
  std::uint64_t seed = 0;
  std::string out;
  std::string checkpoint;
};

int gen_demos(const GenDemosArgs& a) {
  const envs::EnvSpec spec = envs::make_env(a.env);
  if (a.n < 1) throw ConfigError("--n must be >= 1");
  const fs::path out = a.out.empty() ? fs::path(a.env + "_n" + std::to_string(a.n) + "_s" +
                                                std::to_string(a.seed) + ".traj")
                                     : fs::path(a.out);
  fs::path ckpt = a.checkpoint.empty() ? fs::path(out).replace_extension(".expert.ckpt")
                                       : fs::path(a.checkpoint);
  envs::ScriptedExpert expert(spec);
  auto trajs = envs::collect_trajectories(spec, expert, a.n, a.seed);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  envs::write_trajectories(out, spec, trajs);
  try {
    write_scripted(ckpt, spec, a.seed, a.n);
  } catch (...) {
    fs::remove(out);
    throw;
  }
  double total = 0.0;
  for (const auto& t : trajs) total += t.episode_return;
  std::cout << "wrote " << trajs.size() << " trajectories to " << out.string()
            << "\nexpert checkpoint " << ckpt.string() << "\nmean_return "
            << io::format_double(total / a.n) << '\n';
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string resume;
  std::string output_dir;
  std::string demos;
  std::int64_t total_steps = -1;
  std::int64_t seed = -1;
};

int train(const TrainArgs& a) {
  harness::RunResult result;
  if (!a.resume.empty()) {
    if (!fs::exists(fs::path(a.resume) / "state" / "loop.txt"))
      throw std::runtime_error("no resumable state under " + a.resume);
    result = harness::resume_training(a.resume, a.total_steps);
  } else {
    if (a.config.empty()) throw ConfigError("train needs --config or --resume");
    RunConfig c = load_config(a.config);
    apply_environment_overrides(c);
    if (!a.output_dir.empty()) c.output_dir = a.output_dir;
    if (!a.demos.empty()) c.demos = a.demos;
    if (a.total_steps >= 0) c.total_steps = a.total_steps;
    if (a.seed >= 0) c.seed = static_cast<std::uint64_t>(a.seed);
    result = harness::run_training(c);
  }
  std::cout << "evaluations " << result.metrics.size() << '\n';
  if (!result.metrics.empty()) print_summary(result.summary);
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string env;
  int episodes = -1;
  std::int64_t seed = -1;
};

int eval(const EvalArgs& a) {
  std::ifstream is = open_existing(a.checkpoint);
  std::string header;
  is >> header;
  double mean = 0.0;
  if (header == kScriptedHeader) {
    ScriptedCheckpoint c = read_scripted(is);
    const envs::EnvSpec spec = envs::make_env(a.env.empty() ? c.env : a.env);
    envs::ScriptedExpert expert(spec);
    mean = harness::evaluate_policy(spec, expert, a.episodes > 0 ? a.episodes : c.episodes,
                                    a.seed >= 0 ? static_cast<std::uint64_t>(a.seed) : c.seed);
  } else {
    is.seekg(0);
    sac::PolicyBundle bundle = sac::PolicyBundle::load(is);
    const envs::EnvSpec spec =
        envs::make_env(a.env.empty() ? env_for_dims(bundle.state_dim(), bundle.action_dim()) : a.env);
    if (spec.state_dim != bundle.state_dim() || spec.action_dim != bundle.action_dim())
      throw ShapeError("checkpoint dimensions do not match environment " + spec.name);
    harness::PolicyController controller(bundle);
    mean = harness::evaluate_policy(spec, controller, a.episodes > 0 ? a.episodes : 10,
                                    a.seed >= 0 ? static_cast<std::uint64_t>(a.seed) : 424242);
  }
  std::cout << "mean_return " << io::format_double(mean) << '\n';
  return 0;
}

struct MetricsArgs {
  std::string run;
  std::string out;
  int samples = 1000;
};

void write_pca_sets(const fs::path& path, const metrics::Pca& p,
                    const std::vector<std::pair<std::string, Eigen::Index>>& sets) {
  io::write_atomically(path, [&](std::ostream& os) {
    os << "set,pc1,pc2\n";
    Eigen::Index row = 0;
    for (const auto& [label, count] : sets)
      for (Eigen::Index i = 0; i < count; ++i, ++row)
        os << label << ',' << io::format_double(p.projected(row, 0)) << ','
           << io::format_double(p.projected(row, 1)) << '\n';
  });
}

int metrics_cmd(const MetricsArgs& a) {
  const fs::path run(a.run);
  const fs::path out = a.out.empty() ? run : fs::path(a.out);
  RunConfig config = load_config(run / "config.json");
  auto episodes = harness::read_eval_episodes(run / "eval_episodes.csv");
  std::ifstream policy_is = open_existing(run / "checkpoints" / "policy.ckpt");
  sac::PolicyBundle bundle = sac::PolicyBundle::load(policy_is);
  std::ifstream pseudo_is = open_existing(run / "pseudo_buffer.csv");
  pedr::PriorityBuffer pseudo = pedr::PriorityBuffer::load(pseudo_is);
  auto demos = envs::read_trajectories(fs::path(config.demos));
  const envs::EnvSpec spec = envs::make_env(config.env);

  std::vector<double> truth, surrogate;
  for (const auto& e : episodes) {
    truth.push_back(e.true_return);
    surrogate.push_back(e.surrogate_return);
  }
  const int pair_dim = spec.state_dim + spec.action_dim;
  Matrix expert(pair_dim, 0);
  for (int i = 0; i < config.expert_trajectories; ++i) {
    Matrix p = demos.trajectories.at(i).pairs();
    expert.conservativeResize(Eigen::NoChange, expert.cols() + p.cols());
    expert.rightCols(p.cols()) = p;
  }
  Matrix pseudo_pairs = pseudo.contents();
  pseudo_pairs = pseudo_pairs.rightCols(std::min<Eigen::Index>(pseudo_pairs.cols(), a.samples)).eval();
  envs::RandomController random(spec, config.eval.seed + 1);
  Matrix random_pairs(pair_dim, 0);
  for (const auto& t : envs::collect_trajectories(spec, random, config.eval.episodes, config.eval.seed)) {
    Matrix p = t.pairs();
    random_pairs.conservativeResize(Eigen::NoChange, random_pairs.cols() + p.cols());
    random_pairs.rightCols(p.cols()) = p;
  }

  auto guarded = [](auto f) -> nlohmann::json {
    try {
      return f();
    } catch (const std::exception& e) {
      return std::string("undefined: ") + e.what();
    }
  };
  nlohmann::json report{
      {"episodes", episodes.size()},
      {"pcc_logged", guarded([&] { return harness::compute_pcc(surrogate, truth); })},
      {"fd_pseudo_expert",
       guarded([&] { return harness::evaluate_fd_to_expert(bundle, expert, pseudo_pairs); })},
      {"fd_random_expert",
       guarded([&] { return harness::evaluate_fd_to_expert(bundle, expert, random_pairs); })},
  };

  Matrix all(pair_dim, expert.cols() + pseudo_pairs.cols() + random_pairs.cols());
  all << expert, pseudo_pairs, random_pairs;
  metrics::Pca p = metrics::pca(all.transpose(), 2);
  fs::create_directories(out);
  write_pca_sets(out / "pca.csv", p,
                 {{"expert", expert.cols()}, {"pseudo", pseudo_pairs.cols()},
                  {"random", random_pairs.cols()}});
  io::write_atomically(out / "metrics_report.json",
                       [&](std::ostream& os) { os << report.dump(2) << '\n'; });
  std::cout << report.dump(2) << '\n';
  return 0;
}

struct SampleArgs {
  std::string checkpoint;
  std::string demos;
  std::string out;
  int n = 256;
  double tau = std::numeric_limits<double>::quiet_NaN();
  int expert_trajectories = 1;
  std::uint64_t seed = 0;
};

int sample_pseudo(const SampleArgs& a) {
  if (a.out.empty()) throw ConfigError("--out is required");
  if (a.n < 1) throw ConfigError("--n must be >= 1");
  std::ifstream is = open_existing(a.checkpoint);
  auto disc = discriminator::Discriminator::load(is);
  Rng rng(a.seed);
  double tau = a.tau;
  if (std::isnan(tau)) {
    if (a.demos.empty()) throw ConfigError("give --tau or --demos to compute the threshold");
    auto demos = envs::read_trajectories(fs::path(a.demos));
    Matrix expert(disc.pair_dim(), 0);
    for (int i = 0; i < a.expert_trajectories; ++i) {
      Matrix p = demos.trajectories.at(i).pairs();
      expert.conservativeResize(Eigen::NoChange, expert.cols() + p.cols());
      expert.rightCols(p.cols()) = p;
    }
    tau = disc.dynamic_threshold(expert, rng);
  }
  Matrix candidates = disc.generate(a.n, rng);
  auto f = disc.filter_pseudo(candidates, tau, rng);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  io::write_atomically(out, [&](std::ostream& os) {
    for (int i = 0; i < disc.state_dim(); ++i) os << 's' << i << ',';
    for (int i = 0; i < disc.action_dim(); ++i) os << 'a' << i << ',';
    os << "confidence\n";
    for (std::size_t k = 0; k < f.kept.size(); ++k) {
      const Eigen::Index j = f.kept[k];
      for (Eigen::Index r = 0; r < candidates.rows(); ++r)
        os << io::format_double(candidates(r, j)) << ',';
      os << io::format_double(f.confidence(j)) << '\n';
    }
  });
  std::cout << "tau " << io::format_double(tau) << "\naccepted " << f.kept.size() << " of " << a.n
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-discriminator adversarial imitation learning"};
  app.require_subcommand(1);

  GenDemosArgs gd;
  auto* gen = app.add_subcommand("gen-demos", "Roll out the scripted expert and save trajectories");
  gen->add_option("--env", gd.env)->check(CLI::IsMember(envs::env_names()));
  gen->add_option("--n", gd.n, "Number of trajectories");
  gen->add_option("--seed", gd.seed);
  gen->add_option("--out", gd.out, "Trajectory file");
  gen->add_option("--checkpoint", gd.checkpoint, "Scripted-expert checkpoint path");

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "Run the imitation training loop");
  trn->add_option("--config", tr.config, "JSON run configuration");
  trn->add_option("--resume", tr.resume, "Continue the run stored in this directory");
  trn->add_option("--output-dir", tr.output_dir);
  trn->add_option("--demos", tr.demos);
  trn->add_option("--total-steps", tr.total_steps);
  trn->add_option("--seed", tr.seed);

  EvalArgs ev;
  auto* evl = app.add_subcommand("eval", "Roll out a checkpoint and print its mean return");
  evl->add_option("--checkpoint", ev.checkpoint)->required();
  evl->add_option("--env", ev.env);
  evl->add_option("--episodes", ev.episodes);
  evl->add_option("--seed", ev.seed);

  MetricsArgs me;
  auto* met = app.add_subcommand("metrics", "PCC, FD and PCA exports for a finished run");
  met->add_option("--run", me.run)->required();
  met->add_option("--out", me.out);
  met->add_option("--samples", me.samples);

  SampleArgs sp;
  auto* smp = app.add_subcommand("sample-pseudo", "Dump threshold-filtered generations");
  smp->add_option("--checkpoint", sp.checkpoint)->required();
  smp->add_option("--demos", sp.demos);
  smp->add_option("--expert-trajectories", sp.expert_trajectories);
  smp->add_option("--tau", sp.tau);
  smp->add_option("--n", sp.n);
  smp->add_option("--seed", sp.seed);
  smp->add_option("--out", sp.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return gen_demos(gd);
    if (*trn) return train(tr);
    if (*evl) return eval(ev);
    if (*met) return metrics_cmd(me);
    if (*smp) return sample_pseudo(sp);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
