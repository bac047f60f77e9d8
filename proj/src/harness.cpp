#include "sd2ail/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "sd2ail/diffusion.hpp"
#include "sd2ail/io.hpp"
#include "sd2ail/metrics.hpp"

namespace sd2ail::harness {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nn::Activation parse_activation(const std::string& name) {
  return name == "relu" ? nn::Activation::kRelu : nn::Activation::kTanh;
}

sac::SacConfig sac_config(const SacSettings& s) {
  sac::SacConfig c;
  c.hidden = s.hidden;
  c.activation = parse_activation(s.activation);
  c.gamma = s.gamma;
  c.polyak = s.polyak;
  c.actor_lr = s.actor_lr;
  c.critic_lr = s.critic_lr;
  c.alpha_lr = s.alpha_lr;
  c.initial_alpha = s.initial_alpha;
  c.learn_alpha = s.learn_alpha;
  return c;
}

Matrix hcat(const std::vector<Matrix>& parts, Eigen::Index rows) {
  Eigen::Index cols = 0;
  for (const auto& p : parts) cols += p.cols();
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p;
    at += p.cols();
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double pcc_or_nan(const std::vector<double>& x, const std::vector<double>& y) {
  try {
    return compute_pcc(x, y);
  } catch (const std::exception&) {
    return kNaN;
  }
}

template <typename F>
void in_phase(std::int64_t step, const char* phase, F&& f) {
  try {
    f();
  } catch (const TrainingError&) {
    throw;
  } catch (const std::exception& e) {
    throw TrainingError(step, phase, e.what());
  }
}

template <typename T>
void save_to(const fs::path& path, const T& obj) {
  io::write_atomically(path, [&](std::ostream& os) { obj.save(os); });
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return is;
}

void write_episode_header(std::ostream& os) { os << "step,episode,true_return,surrogate_return\n"; }
void write_episode_row(std::ostream& os, const EvalEpisode& e) {
  os << e.step << ',' << e.episode << ',' << io::format_double(e.true_return) << ','
     << io::format_double(e.surrogate_return) << '\n';
}
void write_generation_header(std::ostream& os) {
  os << "step,generated,accepted,acceptance_rate,tau\n";
}
void write_generation_row(std::ostream& os, const GenerationEvent& g) {
  os << g.step << ',' << g.generated << ',' << g.accepted << ','
     << io::format_double(g.acceptance_rate) << ',' << io::format_double(g.tau) << '\n';
}

// Data lines of a CSV with a known header, split on commas.
std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::size_t columns) {
  std::ifstream is = open_in(path);
  std::string line;
  std::getline(is, line);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto fields = io::split(line, ',');
    if (fields.size() != columns)
      throw std::runtime_error(path.string() + ": expected " + std::to_string(columns) +
                               " columns, got " + std::to_string(fields.size()));
    rows.push_back(std::move(fields));
  }
  return rows;
}

std::vector<GenerationEvent> read_generations(const fs::path& path) {
  std::vector<GenerationEvent> out;
  for (const auto& f : read_csv(path, 5))
    out.push_back({std::stoll(f[0]), std::stoi(f[1]), std::stoi(f[2]), io::parse_double(f[3]),
                   io::parse_double(f[4])});
  return out;
}

template <typename Row, typename Header, typename Writer>
void write_csv(const fs::path& path, const std::vector<Row>& rows, Header header, Writer writer) {
  io::write_atomically(path, [&](std::ostream& os) {
    header(os);
    for (const auto& r : rows) writer(os, r);
  });
}

template <typename Row, typename Writer>
void append_csv(const fs::path& path, const Row& row, Writer writer) {
  std::ofstream os(path, std::ios::app);
  if (!os) throw std::runtime_error("cannot append to " + path.string());
  writer(os, row);
}

}  // namespace

TrainingError::TrainingError(std::int64_t step, std::string phase, const std::string& what)
    : std::runtime_error("step " + std::to_string(step) + ", phase " + phase + ": " + what),
      step_(step),
      phase_(std::move(phase)) {}

Vector PolicyController::act(const Vector& state) {
  return bundle_->act(state, sac::ActMode::kDeterministic, unused_);
}

Trainer::Trainer(RunConfig config) : config_(std::move(config)) {
  config_.validate();
  spec_ = envs::make_env(config_.env);
  if (config_.demos.empty()) throw ConfigError("config field 'demos' must name a trajectory file");
  if (!fs::exists(config_.demos))
    throw ConfigError("demonstration file not found: " + config_.demos);
  envs::TrajectoryFile demos = envs::read_trajectories(fs::path(config_.demos));
  if (demos.env_name != spec_.name)
    throw ConfigError("demonstrations are for '" + demos.env_name + "', config asks for '" +
                      spec_.name + "'");
  if (static_cast<int>(demos.trajectories.size()) < config_.expert_trajectories)
    throw ConfigError("demonstration file holds " + std::to_string(demos.trajectories.size()) +
                      " trajectories, config asks for " +
                      std::to_string(config_.expert_trajectories));

  const int pair_dim = spec_.state_dim + spec_.action_dim;
  for (int i = 0; i < config_.expert_trajectories; ++i)
    expert_trajectories_.push_back(demos.trajectories[i].pairs());
  expert_pairs_ = hcat(expert_trajectories_, pair_dim);

  Rng master(config_.seed);
  Rng init = master.split();
  env_rng_ = master.split();
  policy_rng_ = master.split();
  disc_rng_ = master.split();
  sample_rng_ = master.split();
  gen_rng_ = master.split();
  reward_rng_ = master.split();
  sac_rng_ = master.split();
  eval_rng_ = Rng(config_.eval.seed ^ 0x9e3779b97f4a7c15ULL);

  const auto& d = config_.diffusion;
  diffusion::NoisePredictor predictor(pair_dim, d.steps, d.embed_dim, d.hidden,
                                      parse_activation(d.activation), init);
  disc_ = discriminator::Discriminator(spec_.state_dim, spec_.action_dim, std::move(predictor),
                                       diffusion::build_schedule(d.steps, d.beta_start, d.beta_end),
                                       diffusion::Normalizer::fit(expert_pairs_), d.clamp_delta,
                                       d.noise_draws);
  nn::AdamConfig adam;
  adam.learning_rate = d.learning_rate;
  disc_opt_ = disc_.make_optimizer(adam);
  agent_ = sac::SacAgent(spec_.state_dim, spec_.action_dim, sac_config(config_.sac), init);

  const double zeta = config_.pedr.enabled ? config_.pedr.zeta : 0.0;
  std::vector<pedr::PriorityBuffer> experts;
  for (const Matrix& traj : expert_trajectories_) {
    pedr::PriorityBuffer b(pair_dim, static_cast<std::size_t>(traj.cols()), zeta);
    for (Eigen::Index j = 0; j < traj.cols(); ++j) b.push(traj.col(j));
    experts.push_back(std::move(b));
  }
  pedr::AnnealSchedule anneal{config_.pedr.eta_start,
                              static_cast<std::uint64_t>(std::max<std::int64_t>(
                                  1, config_.total_steps - config_.warmup_steps))};
  coordinator_ = pedr::ReplayCoordinator(
      std::move(experts), pedr::PriorityBuffer(pair_dim, config_.pseudo.capacity, zeta),
      config_.pseudo.enabled ? config_.pseudo.ratio : 0.0, anneal);
  const auto capacity = std::clamp<std::size_t>(static_cast<std::size_t>(config_.total_steps), 1,
                                                config_.sac.buffer_capacity);
  replay_ = sac::AgentReplayBuffer(spec_.state_dim, spec_.action_dim, capacity);
  state_ = envs::sample_initial_state(spec_, env_rng_);
}

Trainer::~Trainer() = default;

void Trainer::run() {
  while (step_ < config_.total_steps) advance();
}

void Trainer::advance() {
  Vector action;
  in_phase(step_, "collect", [&] {
    if (step_ < config_.warmup_steps) {
      action.resize(spec_.action_dim);
      for (int i = 0; i < spec_.action_dim; ++i)
        action(i) = policy_rng_.uniform(spec_.action_low, spec_.action_high);
    } else {
      action = agent_.bundle().act(state_, sac::ActMode::kStochastic, policy_rng_);
    }
    action = envs::clip_action(spec_, action);
    envs::StepResult r = envs::step(spec_, state_, action, episode_t_);
    // r.reward is deliberately dropped: training sees (s, a, s') only.
    replay_.push(state_, action, r.next_state, r.done);
    if (r.done) {
      state_ = envs::sample_initial_state(spec_, env_rng_);
      episode_t_ = 0;
    } else {
      state_ = r.next_state;
      ++episode_t_;
    }
  });
  ++step_;

  const std::int64_t since = step_ - config_.warmup_steps;
  if (since > 0) {
    if (since % config_.discriminator.every == 0)
      in_phase(step_, "discriminator", [&] { discriminator_phase(); });
    if (config_.pseudo.enabled && since % config_.pseudo.every == 0 && !std::isnan(tau_))
      in_phase(step_, "pseudo-generation", [&] { generation_phase(); });
    if (since % config_.sac.every == 0) in_phase(step_, "policy", [&] { policy_phase(); });
  }
  if (step_ % config_.eval.every == 0) in_phase(step_, "evaluation", [&] { evaluation_phase(); });
  if (outputs_open_ && config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0 &&
      step_ < config_.total_steps)
    in_phase(step_, "checkpoint", [&] { save_state(fs::path(config_.output_dir) / "state"); });
}

void Trainer::discriminator_phase() {
  const auto anneal_step = static_cast<std::uint64_t>(step_ - config_.warmup_steps - 1);
  pedr::CompositeSample cs = coordinator_.sample(
      static_cast<std::size_t>(config_.discriminator.expert_batch), anneal_step, sample_rng_);
  auto agent = replay_.sample(static_cast<std::size_t>(config_.discriminator.agent_batch),
                              sample_rng_);
  const auto& norm = disc_.normalizer();
  discriminator::LabeledBatch batch{norm.normalize(cs.expert), cs.expert_weights,
                                    norm.normalize(cs.pseudo), cs.pseudo_weights,
                                    norm.normalize(sac::AgentReplayBuffer::pairs(agent))};
  discriminator::StepResult res = disc_.train_step(batch, disc_opt_, disc_rng_);
  // Priorities and the threshold use the confidences computed for this
  // step's loss, i.e. before the parameter update.
  coordinator_.update_priorities(cs, res.expert_confidence, res.pseudo_confidence);
  tau_ = config_.discriminator.tau_full_dataset
             ? disc_.dynamic_threshold(expert_pairs_, disc_rng_)
             : discriminator::dynamic_threshold(res.expert_confidence);
  loss_sum_ += res.loss;
  ++loss_count_;
}

void Trainer::generation_phase() {
  const int n = config_.pseudo.count;
  Matrix candidates = disc_.generate(n, gen_rng_);
  discriminator::FilterResult f = disc_.filter_pseudo(candidates, tau_, gen_rng_);
  for (Eigen::Index j = 0; j < f.accepted.cols(); ++j)
    coordinator_.pseudo_buffer().push(f.accepted.col(j));
  const int kept = static_cast<int>(f.kept.size());
  GenerationEvent g{step_, n, kept, static_cast<double>(kept) / n, tau_};
  generations_.push_back(g);
  if (outputs_open_)
    append_csv(fs::path(config_.output_dir) / "generations.csv", g, write_generation_row);
}

void Trainer::policy_phase() {
  auto s = replay_.sample(static_cast<std::size_t>(config_.sac.batch_size), sample_rng_);
  sac::Batch batch{s.states, s.actions,
                   disc_.surrogate_reward(sac::AgentReplayBuffer::pairs(s), reward_rng_),
                   s.next_states};
  agent_.update(batch, sac_rng_);
}

Matrix Trainer::pseudo_sample_for_fd() const {
  Matrix all = coordinator_.pseudo_buffer().contents();
  const Eigen::Index keep = std::min<Eigen::Index>(all.cols(), config_.eval.fd_samples);
  return all.rightCols(keep);
}

void Trainer::evaluation_phase() {
  PolicyController controller(agent_.bundle());
  auto trajs = envs::collect_trajectories(spec_, controller, config_.eval.episodes,
                                          config_.eval.seed);
  const std::size_t first = episodes_.size();
  std::vector<double> truth, surrogate;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    Matrix pairs = trajs[i].pairs();
    const double sr = disc_.surrogate_reward(pairs, eval_rng_).sum();
    episodes_.push_back({step_, static_cast<int>(i), trajs[i].episode_return, sr});
    episode_pairs_.push_back(std::move(pairs));
    truth.push_back(trajs[i].episode_return);
    surrogate.push_back(sr);
  }

  MetricsRow row;
  row.step = step_;
  row.mean_true_return = mean_of(truth);
  row.mean_surrogate_return = mean_of(surrogate);
  row.tau = tau_;
  row.pseudo_buffer_size = coordinator_.pseudo_buffer().size();
  row.acceptance_rate = generations_.empty() ? kNaN : generations_.back().acceptance_rate;
  row.disc_loss = loss_count_ ? loss_sum_ / static_cast<double>(loss_count_) : kNaN;
  loss_sum_ = 0.0;
  loss_count_ = 0;
  row.pcc = pcc_or_nan(surrogate, truth);
  row.fd = kNaN;
  Matrix pseudo = pseudo_sample_for_fd();
  const int features = config_.sac.hidden.back();
  if (pseudo.cols() > features && expert_pairs_.cols() > features) {
    try {
      row.fd = evaluate_fd_to_expert(agent_.bundle(), expert_pairs_, pseudo);
    } catch (const std::exception&) {
      row.fd = kNaN;
    }
  }
  metrics_.push_back(row);
  if (outputs_open_) append_outputs(row, first);
}

void Trainer::append_outputs(const MetricsRow& row, std::size_t first_episode) {
  const fs::path dir(config_.output_dir);
  append_csv(dir / "metrics.csv", row, write_metrics_row);
  for (std::size_t i = first_episode; i < episodes_.size(); ++i)
    append_csv(dir / "eval_episodes.csv", episodes_[i], write_episode_row);
}

void Trainer::open_outputs() {
  const fs::path dir(config_.output_dir);
  fs::create_directories(dir / "checkpoints");
  save_config(dir / "config.json", config_);
  if (step_ == 0) {
    save_to(dir / "checkpoints" / "policy_init.ckpt", agent_.bundle());
    save_to(dir / "checkpoints" / "discriminator_init.ckpt", disc_);
  }
  // Rewritten from memory so a resumed run drops rows logged after its snapshot.
  write_csv(dir / "metrics.csv", metrics_, write_metrics_header, write_metrics_row);
  write_csv(dir / "eval_episodes.csv", episodes_, write_episode_header, write_episode_row);
  write_csv(dir / "generations.csv", generations_, write_generation_header, write_generation_row);
  outputs_open_ = true;
}

void Trainer::close_outputs() {
  const fs::path dir(config_.output_dir);
  if (step_ > 0) {
    save_to(dir / "checkpoints" / "policy.ckpt", agent_.bundle());
    save_to(dir / "checkpoints" / "discriminator.ckpt", disc_);
    save_to(dir / "pseudo_buffer.csv", coordinator_.pseudo_buffer());
    const Summary s = summarize();
    nlohmann::json j{{"step", step_},
                     {"expert_return", s.expert_return},
                     {"random_return", s.random_return},
                     {"final_return", s.final_return},
                     {"best_return", s.best_return},
                     {"final_score", s.final_score},
                     {"best_score", s.best_score},
                     {"pcc_all_episodes", s.pcc_all_episodes},
                     {"fd_pseudo_expert", s.fd_pseudo_expert},
                     {"fd_random_expert", s.fd_random_expert},
                     {"tau_min", s.tau_min},
                     {"tau_max", s.tau_max}};
    io::write_atomically(dir / "summary.json",
                         [&](std::ostream& os) { os << j.dump(2) << '\n'; });
  }
  save_state(dir / "state");
}

Summary Trainer::summarize() {
  Summary s;
  const int episodes = config_.eval.episodes;
  const std::uint64_t seed = config_.eval.seed;
  envs::ScriptedExpert expert(spec_);
  s.expert_return = evaluate_policy(spec_, expert, episodes, seed);
  envs::RandomController random(spec_, seed + 1);
  auto random_trajs = envs::collect_trajectories(spec_, random, episodes, seed);
  std::vector<double> random_returns;
  std::vector<Matrix> random_pairs;
  for (const auto& t : random_trajs) {
    random_returns.push_back(t.episode_return);
    random_pairs.push_back(t.pairs());
  }
  s.random_return = mean_of(random_returns);

  const double span = s.expert_return - s.random_return;
  s.final_return = metrics_.empty() ? kNaN : metrics_.back().mean_true_return;
  s.best_return = kNaN;
  for (const auto& m : metrics_)
    if (std::isnan(s.best_return) || m.mean_true_return > s.best_return)
      s.best_return = m.mean_true_return;
  s.final_score = (s.final_return - s.random_return) / span;
  s.best_score = (s.best_return - s.random_return) / span;

  Rng score_rng(seed + 2);
  std::vector<double> truth, surrogate;
  for (std::size_t i = 0; i < episodes_.size(); ++i) {
    truth.push_back(episodes_[i].true_return);
    surrogate.push_back(disc_.surrogate_reward(episode_pairs_[i], score_rng).sum());
  }
  s.pcc_all_episodes = pcc_or_nan(surrogate, truth);

  // Fresh generations from the final discriminator, filtered by the current
  // threshold, stand in for the pseudo-expert set.
  s.fd_pseudo_expert = kNaN;
  s.fd_random_expert = kNaN;
  const int features = config_.sac.hidden.back();
  const int pair_dim = spec_.state_dim + spec_.action_dim;
  if (expert_pairs_.cols() > features) {
    Rng gen(seed + 3);
    std::vector<Matrix> accepted;
    Eigen::Index have = 0;
    for (int round = 0; round < 20 && have < config_.eval.fd_samples; ++round) {
      Matrix c = disc_.generate(config_.eval.fd_samples, gen);
      Matrix a = std::isnan(tau_) ? c : disc_.filter_pseudo(c, tau_, gen).accepted;
      have += a.cols();
      accepted.push_back(std::move(a));
    }
    Matrix pseudo = hcat(accepted, pair_dim);
    pseudo = pseudo.leftCols(std::min<Eigen::Index>(pseudo.cols(), config_.eval.fd_samples)).eval();
    try {
      if (pseudo.cols() > features)
        s.fd_pseudo_expert = evaluate_fd_to_expert(agent_.bundle(), expert_pairs_, pseudo);
      s.fd_random_expert =
          evaluate_fd_to_expert(agent_.bundle(), expert_pairs_, hcat(random_pairs, pair_dim));
    } catch (const std::exception&) {
    }
  }

  s.tau_min = kNaN;
  s.tau_max = kNaN;
  auto track = [&](double t) {
    if (std::isnan(t)) return;
    s.tau_min = std::isnan(s.tau_min) ? t : std::min(s.tau_min, t);
    s.tau_max = std::isnan(s.tau_max) ? t : std::max(s.tau_max, t);
  };
  for (const auto& m : metrics_) track(m.tau);
  for (const auto& g : generations_) track(g.tau);
  return s;
}

void Trainer::save_state(const fs::path& dir) const {
  fs::create_directories(dir);
  save_to(dir / "discriminator.ckpt", disc_);
  save_to(dir / "discriminator_optimizer.txt", disc_opt_);
  save_to(dir / "agent.ckpt", agent_);
  save_to(dir / "agent_replay.txt", replay_);
  for (std::size_t i = 0; i < coordinator_.expert_buffer_count(); ++i)
    save_to(dir / ("expert_buffer_" + std::to_string(i) + ".csv"), coordinator_.expert_buffer(i));
  save_to(dir / "pseudo_buffer.csv", coordinator_.pseudo_buffer());
  write_csv(dir / "metrics.csv", metrics_, write_metrics_header, write_metrics_row);
  write_csv(dir / "eval_episodes.csv", episodes_, write_episode_header, write_episode_row);
  write_csv(dir / "generations.csv", generations_, write_generation_header, write_generation_row);
  io::write_atomically(dir / "episode_pairs.txt", [&](std::ostream& os) {
    os << episode_pairs_.size() << '\n';
    for (const auto& m : episode_pairs_) io::write_matrix(os, m);
  });
  io::write_atomically(dir / "loop.txt", [&](std::ostream& os) {
    os << "sd2ail-loop 1\n"
       << "step " << step_ << "\nepisode_t " << episode_t_ << "\ntau " << io::format_double(tau_)
       << "\nloss_sum " << io::format_double(loss_sum_) << "\nloss_count " << loss_count_
       << "\nrotation " << coordinator_.rotation() << "\nstate ";
    io::write_matrix(os, state_);
    for (const Rng* r : {&env_rng_, &policy_rng_, &disc_rng_, &sample_rng_, &gen_rng_,
                         &reward_rng_, &sac_rng_, &eval_rng_})
      os << "\nrng " << *r;
    os << '\n';
  });
}

void Trainer::load_state(const fs::path& dir) {
  auto load = [&](const std::string& name, auto loader) {
    std::ifstream is = open_in(dir / name);
    return loader(is);
  };
  disc_ = load("discriminator.ckpt", discriminator::Discriminator::load);
  disc_opt_ = load("discriminator_optimizer.txt", nn::Adam::load);
  agent_ = load("agent.ckpt", sac::SacAgent::load);
  replay_ = load("agent_replay.txt", sac::AgentReplayBuffer::load);
  for (std::size_t i = 0; i < coordinator_.expert_buffer_count(); ++i)
    coordinator_.expert_buffer(i) =
        load("expert_buffer_" + std::to_string(i) + ".csv", pedr::PriorityBuffer::load);
  coordinator_.pseudo_buffer() = load("pseudo_buffer.csv", pedr::PriorityBuffer::load);
  metrics_ = read_metrics(dir / "metrics.csv");
  episodes_ = read_eval_episodes(dir / "eval_episodes.csv");
  generations_ = read_generations(dir / "generations.csv");
  {
    std::ifstream is = open_in(dir / "episode_pairs.txt");
    std::size_t n = 0;
    is >> n;
    episode_pairs_.clear();
    for (std::size_t i = 0; i < n; ++i) episode_pairs_.push_back(io::read_matrix(is));
  }
  std::ifstream is = open_in(dir / "loop.txt");
  io::expect_token(is, "sd2ail-loop");
  io::expect_token(is, "1");
  std::string text;
  std::size_t rotation = 0;
  io::expect_token(is, "step");
  is >> step_;
  io::expect_token(is, "episode_t");
  is >> episode_t_;
  io::expect_token(is, "tau");
  is >> text;
  tau_ = io::parse_double(text);
  io::expect_token(is, "loss_sum");
  is >> text;
  loss_sum_ = io::parse_double(text);
  io::expect_token(is, "loss_count");
  is >> loss_count_;
  io::expect_token(is, "rotation");
  is >> rotation;
  coordinator_.set_rotation(rotation);
  io::expect_token(is, "state");
  state_ = io::read_matrix(is);
  for (Rng* r : {&env_rng_, &policy_rng_, &disc_rng_, &sample_rng_, &gen_rng_, &reward_rng_,
                 &sac_rng_, &eval_rng_}) {
    io::expect_token(is, "rng");
    is >> *r;
  }
  if (!is) throw std::runtime_error("truncated loop state in " + dir.string());
}

namespace {

RunResult finish(Trainer& trainer) {
  trainer.run();
  trainer.close_outputs();
  return {trainer.metrics(), trainer.episodes(), trainer.generations(), trainer.summarize()};
}

}  // namespace

RunResult run_training(const RunConfig& config) {
  Trainer trainer(config);
  trainer.open_outputs();
  return finish(trainer);
}

RunResult resume_training(const fs::path& output_dir, std::int64_t total_steps) {
  RunConfig config = load_config(output_dir / "config.json");
  config.output_dir = output_dir.string();
  if (total_steps >= 0) config.total_steps = total_steps;
  Trainer trainer(config);
  trainer.load_state(output_dir / "state");
  trainer.open_outputs();
  return finish(trainer);
}

double evaluate_policy(const envs::EnvSpec& spec, envs::Controller& controller, int episodes,
                       std::uint64_t seed) {
  auto trajs = envs::collect_trajectories(spec, controller, episodes, seed);
  std::vector<double> returns;
  for (const auto& t : trajs) returns.push_back(t.episode_return);
  return mean_of(returns);
}

double evaluate_fd_to_expert(const sac::PolicyBundle& bundle, const Matrix& expert_pairs,
                             const Matrix& comparison_pairs) {
  const int s = bundle.state_dim();
  const int a = bundle.action_dim();
  if (expert_pairs.rows() != s + a || comparison_pairs.rows() != s + a)
    throw ShapeError("pair sets must have state_dim + action_dim rows");
  auto features = [&](const Matrix& p) -> Matrix {
    return bundle.critic_features(p.topRows(s), p.bottomRows(a)).transpose();
  };
  Matrix fa = features(expert_pairs);
  Matrix fb = features(comparison_pairs);
  auto constant = [](const Matrix& f) {
    return ((f.rowwise() - f.row(0)).cwiseAbs().maxCoeff() == 0.0);
  };
  if (constant(fa) && constant(fb))
    throw NumericError("critic features are constant on both sets");
  return metrics::frechet_distance(fa, fb);
}

double compute_pcc(const std::vector<double>& x, const std::vector<double>& y) {
  return metrics::pearson(x, y);
}

void write_metrics_header(std::ostream& os) {
  os << "step,mean_true_return,mean_surrogate_return,tau,pseudo_buffer_size,acceptance_rate,"
        "disc_loss,pcc,fd\n";
}

void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  os << r.step << ',' << io::format_double(r.mean_true_return) << ','
     << io::format_double(r.mean_surrogate_return) << ',' << io::format_double(r.tau) << ','
     << r.pseudo_buffer_size << ',' << io::format_double(r.acceptance_rate) << ','
     << io::format_double(r.disc_loss) << ',' << io::format_double(r.pcc) << ','
     << io::format_double(r.fd) << '\n';
}

std::vector<MetricsRow> read_metrics(const fs::path& path) {
  std::vector<MetricsRow> out;
  for (const auto& f : read_csv(path, 9)) {
    MetricsRow r;
    r.step = std::stoll(f[0]);
    r.mean_true_return = io::parse_double(f[1]);
    r.mean_surrogate_return = io::parse_double(f[2]);
    r.tau = io::parse_double(f[3]);
    r.pseudo_buffer_size = std::stoull(f[4]);
    r.acceptance_rate = io::parse_double(f[5]);
    r.disc_loss = io::parse_double(f[6]);
    r.pcc = io::parse_double(f[7]);
    r.fd = io::parse_double(f[8]);
    out.push_back(r);
  }
  return out;
}

std::vector<EvalEpisode> read_eval_episodes(const fs::path& path) {
  std::vector<EvalEpisode> out;
  for (const auto& f : read_csv(path, 4))
    out.push_back({std::stoll(f[0]), std::stoi(f[1]), io::parse_double(f[2]),
                   io::parse_double(f[3])});
  return out;
}

}  // namespace sd2ail::harness
