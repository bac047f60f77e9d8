#include "sd2ail/envs.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "sd2ail/io.hpp"

namespace sd2ail::envs {

EnvSpec make_env(const std::string& name) {
  EnvSpec s;
  s.name = name;
  if (name == "pointmass2d") {
    s.dims = 2;
    s.horizon = 200;
  } else if (name == "doubleintegrator1d") {
    s.dims = 1;
    s.horizon = 100;
  } else {
    throw ConfigError("unknown environment '" + name + "'");
  }
  s.state_dim = 2 * s.dims;
  s.action_dim = s.dims;
  s.dt = 0.05;
  s.init_position_range = 0.5;
  s.init_velocity_range = 0.5;
  return s;
}

std::vector<std::string> env_names() { return {"pointmass2d", "doubleintegrator1d"}; }

Vector clip_action(const EnvSpec& spec, const Vector& action) {
  if (action.size() != spec.action_dim) throw ShapeError("action dimension mismatch");
  return action.cwiseMax(spec.action_low).cwiseMin(spec.action_high);
}

StepResult step(const EnvSpec& spec, const Vector& state, const Vector& action, int t) {
  if (state.size() != spec.state_dim) throw ShapeError("state dimension mismatch");
  if (!state.allFinite()) throw NumericError("non-finite environment state");
  const Vector a = clip_action(spec, action);
  if (!a.allFinite()) throw NumericError("non-finite action");
  const auto pos = state.head(spec.dims);
  const auto vel = state.tail(spec.dims);
  StepResult r;
  r.next_state.resize(spec.state_dim);
  r.next_state.head(spec.dims) = pos + vel * spec.dt;
  r.next_state.tail(spec.dims) = vel + a * spec.dt;
  r.reward = -(pos.squaredNorm() + 0.1 * vel.squaredNorm() + 0.01 * a.squaredNorm());
  r.done = t + 1 >= spec.horizon;
  if (!r.next_state.allFinite()) throw NumericError("non-finite environment state");
  return r;
}

Vector sample_initial_state(const EnvSpec& spec, Rng& rng) {
  Vector s(spec.state_dim);
  for (int d = 0; d < spec.dims; ++d)
    s(d) = rng.uniform(-spec.init_position_range, spec.init_position_range);
  for (int d = 0; d < spec.dims; ++d)
    s(spec.dims + d) = rng.uniform(-spec.init_velocity_range, spec.init_velocity_range);
  return s;
}

Vector scripted_expert(const EnvSpec& spec, const Vector& state) {
  if (state.size() != spec.state_dim) throw ShapeError("state dimension mismatch");
  const Vector raw = -spec.expert_kp * state.head(spec.dims) - spec.expert_kd * state.tail(spec.dims);
  return clip_action(spec, raw);
}

Vector ScriptedExpert::act(const Vector& state) { return scripted_expert(spec_, state); }

Vector RandomController::act(const Vector&) {
  Vector a(spec_.action_dim);
  for (int d = 0; d < spec_.action_dim; ++d) a(d) = rng_.uniform(spec_.action_low, spec_.action_high);
  return a;
}

Matrix Trajectory::pairs() const {
  if (transitions.empty()) return {};
  const auto s = transitions.front().state.size();
  const auto a = transitions.front().action.size();
  Matrix out(s + a, static_cast<Eigen::Index>(transitions.size()));
  for (std::size_t i = 0; i < transitions.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)).head(s) = transitions[i].state;
    out.col(static_cast<Eigen::Index>(i)).tail(a) = transitions[i].action;
  }
  return out;
}

Trajectory rollout(const EnvSpec& spec, Controller& controller, const Vector& initial_state) {
  Trajectory traj;
  traj.env_name = spec.name;
  traj.controller_id = controller.id();
  Vector state = initial_state;
  for (int t = 0; t < spec.horizon; ++t) {
    Vector action = controller.act(state);
    if (!action.allFinite()) throw NumericError("controller emitted a non-finite action");
    action = clip_action(spec, action);
    StepResult r = step(spec, state, action, t);
    traj.episode_return += r.reward;
    traj.transitions.push_back({state, action, r.next_state, r.reward, r.done});
    state = std::move(r.next_state);
    if (r.done) break;
  }
  return traj;
}

std::vector<Trajectory> collect_trajectories(const EnvSpec& spec, Controller& controller, int n,
                                             std::uint64_t seed) {
  if (n < 1) throw ConfigError("trajectory count must be >= 1");
  Rng rng(seed);
  std::vector<Trajectory> out;
  for (int i = 0; i < n; ++i) {
    Trajectory t = rollout(spec, controller, sample_initial_state(spec, rng));
    t.seed = seed;
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

void write_vector(std::ostream& os, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) os << io::format_double(v(i)) << ',';
}

}  // namespace

void write_trajectories(std::ostream& os, const EnvSpec& spec,
                        const std::vector<Trajectory>& trajectories) {
  os << "SD2AIL-TRAJ 1 " << spec.name << ' ' << spec.state_dim << ' ' << spec.action_dim << ' '
     << spec.horizon << ' ' << trajectories.size() << '\n';
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& t = trajectories[i];
    os << "# trajectory " << i << " seed " << t.seed << " controller " << t.controller_id
       << " return " << io::format_double(t.episode_return) << " length " << t.transitions.size()
       << '\n';
    for (const auto& tr : t.transitions) {
      write_vector(os, tr.state);
      write_vector(os, tr.action);
      write_vector(os, tr.next_state);
      os << io::format_double(tr.reward) << ',' << (tr.done ? 1 : 0) << '\n';
    }
  }
}

void write_trajectories(const std::filesystem::path& path, const EnvSpec& spec,
                        const std::vector<Trajectory>& trajectories) {
  io::write_atomically(path, [&](std::ostream& os) { write_trajectories(os, spec, trajectories); });
}

TrajectoryFile read_trajectories(std::istream& is) {
  TrajectoryFile f;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty trajectory file");
  std::istringstream header(line);
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  header >> magic >> version >> f.env_name >> f.state_dim >> f.action_dim >> f.horizon >> count;
  if (!header || magic != "SD2AIL-TRAJ" || version != 1)
    throw std::runtime_error("not an SD2AIL trajectory file (v1)");
  if (f.state_dim <= 0 || f.action_dim <= 0 || f.horizon <= 0)
    throw std::runtime_error("trajectory header has non-positive dimensions");
  const std::size_t columns = 2 * static_cast<std::size_t>(f.state_dim) + f.action_dim + 2;
  std::vector<std::size_t> declared_length;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream meta(line.substr(1));
      std::string key;
      std::size_t index = 0;
      Trajectory t;
      t.env_name = f.env_name;
      meta >> key >> index;
      if (key != "trajectory") throw std::runtime_error("malformed trajectory metadata line");
      std::string value;
      std::size_t expected_length = 0;
      while (meta >> key >> value) {
        if (key == "seed") t.seed = std::stoull(value);
        else if (key == "controller") t.controller_id = value;
        else if (key == "return") t.episode_return = io::parse_double(value);
        else if (key == "length") expected_length = std::stoull(value);
      }
      f.trajectories.push_back(std::move(t));
      declared_length.push_back(expected_length);
      continue;
    }
    if (f.trajectories.empty()) throw std::runtime_error("transition record before any trajectory");
    const auto fields = io::split(line, ',');
    if (fields.size() != columns)
      throw std::runtime_error("trajectory record has " + std::to_string(fields.size()) +
                               " columns, expected " + std::to_string(columns));
    Transition tr;
    tr.state.resize(f.state_dim);
    tr.action.resize(f.action_dim);
    tr.next_state.resize(f.state_dim);
    std::size_t k = 0;
    for (int d = 0; d < f.state_dim; ++d) tr.state(d) = io::parse_double(fields[k++]);
    for (int d = 0; d < f.action_dim; ++d) tr.action(d) = io::parse_double(fields[k++]);
    for (int d = 0; d < f.state_dim; ++d) tr.next_state(d) = io::parse_double(fields[k++]);
    tr.reward = io::parse_double(fields[k++]);
    tr.done = fields[k] == "1";
    auto& traj = f.trajectories.back();
    if (!traj.transitions.empty() && traj.transitions.back().next_state != tr.state)
      throw std::runtime_error("trajectory records are not contiguous");
    if (static_cast<int>(traj.transitions.size()) >= f.horizon)
      throw std::runtime_error("trajectory longer than the horizon");
    traj.transitions.push_back(std::move(tr));
  }
  if (f.trajectories.size() != count)
    throw std::runtime_error("trajectory count does not match the header");
  for (std::size_t i = 0; i < f.trajectories.size(); ++i) {
    const auto n = f.trajectories[i].transitions.size();
    if (n == 0) throw std::runtime_error("trajectory without transitions");
    if (declared_length[i] != 0 && declared_length[i] != n)
      throw std::runtime_error("trajectory length does not match its metadata");
  }
  return f;
}

TrajectoryFile read_trajectories(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open trajectory file " + path.string());
  return read_trajectories(is);
}

}  // namespace sd2ail::envs
