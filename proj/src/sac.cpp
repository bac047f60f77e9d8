#include "sd2ail/sac.hpp"

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>

#include "sd2ail/io.hpp"

namespace sd2ail::sac {

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// log(1 - tanh(u)^2) without cancellation.
double log_one_minus_tanh_sq(double u) {
  return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u));
}

Matrix stack(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

std::vector<int> critic_sizes(int s, int a, const std::vector<int>& hidden) {
  std::vector<int> sizes{s + a};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  return sizes;
}

}  // namespace

Vector squashed_log_prob(const Matrix& pre_tanh, const Matrix& mean, const Matrix& log_std) {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Vector lp = Vector::Zero(pre_tanh.cols());
  for (Eigen::Index j = 0; j < pre_tanh.cols(); ++j) {
    double s = 0.0;
    for (Eigen::Index d = 0; d < pre_tanh.rows(); ++d) {
      const double z = (pre_tanh(d, j) - mean(d, j)) / std::exp(log_std(d, j));
      s += -0.5 * z * z - log_std(d, j) - half_log_2pi - log_one_minus_tanh_sq(pre_tanh(d, j));
    }
    lp(j) = s;
  }
  return lp;
}

PolicyBundle::PolicyBundle(int state_dim, int action_dim, const SacConfig& config, Rng& rng)
    : state_dim_(state_dim), action_dim_(action_dim), config_(config) {
  if (state_dim <= 0 || action_dim <= 0) throw ShapeError("policy dimensions must be positive");
  if (!(config.initial_alpha > 0.0)) throw ConfigError("entropy temperature must be positive");
  if (!(config.gamma >= 0.0 && config.gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (!(config.polyak > 0.0 && config.polyak <= 1.0)) throw ConfigError("polyak must lie in (0, 1]");
  if (!(config.log_std_min < config.log_std_max)) throw ConfigError("log-std bounds are inverted");
  std::vector<int> actor_sizes{state_dim};
  actor_sizes.insert(actor_sizes.end(), config.hidden.begin(), config.hidden.end());
  actor_sizes.push_back(2 * action_dim);
  actor = nn::DenseNet(actor_sizes, config.activation, rng);
  q1 = nn::DenseNet(critic_sizes(state_dim, action_dim, config.hidden), config.activation, rng);
  q2 = nn::DenseNet(critic_sizes(state_dim, action_dim, config.hidden), config.activation, rng);
  q1_target = q1;
  q2_target = q2;
  log_alpha_ = std::log(config.initial_alpha);
}

double PolicyBundle::target_entropy() const {
  return std::isnan(config_.target_entropy) ? -static_cast<double>(action_dim_)
                                            : config_.target_entropy;
}

void PolicyBundle::split_actor_output(const Matrix& out, Matrix& mean, Matrix& log_std) const {
  mean = out.topRows(action_dim_);
  const double lo = config_.log_std_min, hi = config_.log_std_max;
  log_std = (lo + 0.5 * (hi - lo) * (out.bottomRows(action_dim_).array().tanh() + 1.0)).matrix();
}

ActionSample PolicyBundle::sample(const Matrix& states, const Matrix& xi) const {
  if (xi.rows() != action_dim_ || xi.cols() != states.cols())
    throw ShapeError("policy noise must be action_dim x batch");
  ActionSample s;
  split_actor_output(actor.forward(states), s.mean, s.log_std);
  s.xi = xi;
  s.pre_tanh = s.mean + (s.log_std.array().exp() * xi.array()).matrix();
  s.actions = s.pre_tanh.array().tanh().matrix();
  s.log_prob = squashed_log_prob(s.pre_tanh, s.mean, s.log_std);
  return s;
}

ActionSample PolicyBundle::sample(const Matrix& states, Rng& rng) const {
  return sample(states, rng.normal_matrix(action_dim_, states.cols()));
}

Vector PolicyBundle::act(const Vector& state, ActMode mode, Rng& rng) const {
  if (state.size() != state_dim_) throw ShapeError("policy: state dimension mismatch");
  if (mode == ActMode::kDeterministic) {
    Matrix mean, log_std;
    split_actor_output(actor.forward(Matrix(state)), mean, log_std);
    return mean.col(0).array().tanh().matrix();
  }
  return sample(Matrix(state), rng).actions.col(0);
}

Vector PolicyBundle::min_q(const Matrix& states, const Matrix& actions, bool target) const {
  const Matrix in = stack(states, actions);
  const Matrix a = (target ? q1_target : q1).forward(in);
  const Matrix b = (target ? q2_target : q2).forward(in);
  return a.cwiseMin(b).row(0).transpose();
}

Matrix PolicyBundle::critic_features(const Matrix& states, const Matrix& actions) const {
  return q1.features(stack(states, actions));
}

void PolicyBundle::save(std::ostream& os) const {
  os << "sd2ail-policy 1\n";
  os << "dims " << state_dim_ << ' ' << action_dim_ << '\n';
  os << "hidden " << config_.hidden.size();
  for (int h : config_.hidden) os << ' ' << h;
  os << "\nactivation " << nn::to_string(config_.activation) << '\n';
  os << "scalars " << io::format_double(config_.gamma) << ' ' << io::format_double(config_.polyak)
     << ' ' << io::format_double(config_.actor_lr) << ' ' << io::format_double(config_.critic_lr)
     << ' ' << io::format_double(config_.alpha_lr) << ' '
     << io::format_double(config_.initial_alpha) << ' ' << (config_.learn_alpha ? 1 : 0) << ' '
     << io::format_double(config_.target_entropy) << ' ' << io::format_double(config_.log_std_min)
     << ' ' << io::format_double(config_.log_std_max) << '\n';
  os << "log_alpha " << io::format_double(log_alpha_) << '\n';
  actor.save(os);
  q1.save(os);
  q2.save(os);
  q1_target.save(os);
  q2_target.save(os);
}

PolicyBundle PolicyBundle::load(std::istream& is) {
  io::expect_token(is, "sd2ail-policy");
  int version = 0;
  is >> version;
  if (version != 1) throw std::runtime_error("unsupported policy version");
  PolicyBundle b;
  io::expect_token(is, "dims");
  is >> b.state_dim_ >> b.action_dim_;
  io::expect_token(is, "hidden");
  std::size_t n = 0;
  is >> n;
  b.config_.hidden.resize(n);
  for (auto& h : b.config_.hidden) is >> h;
  io::expect_token(is, "activation");
  std::string act;
  is >> act;
  b.config_.activation = nn::activation_from_string(act);
  io::expect_token(is, "scalars");
  std::string v[10];
  for (auto& x : v) is >> x;
  int learn = 0;
  b.config_.gamma = io::parse_double(v[0]);
  b.config_.polyak = io::parse_double(v[1]);
  b.config_.actor_lr = io::parse_double(v[2]);
  b.config_.critic_lr = io::parse_double(v[3]);
  b.config_.alpha_lr = io::parse_double(v[4]);
  b.config_.initial_alpha = io::parse_double(v[5]);
  learn = std::stoi(v[6]);
  b.config_.learn_alpha = learn != 0;
  b.config_.target_entropy = io::parse_double(v[7]);
  b.config_.log_std_min = io::parse_double(v[8]);
  b.config_.log_std_max = io::parse_double(v[9]);
  io::expect_token(is, "log_alpha");
  std::string la;
  is >> la;
  if (!is) throw std::runtime_error("malformed policy header");
  b.log_alpha_ = io::parse_double(la);
  b.actor = nn::DenseNet::load(is);
  b.q1 = nn::DenseNet::load(is);
  b.q2 = nn::DenseNet::load(is);
  b.q1_target = nn::DenseNet::load(is);
  b.q2_target = nn::DenseNet::load(is);
  return b;
}

Vector critic_target(const PolicyBundle& bundle, const Vector& rewards, const Matrix& next_states,
                     const Matrix& next_xi) {
  if (rewards.size() != next_states.cols()) throw ShapeError("one reward per transition required");
  const ActionSample next = bundle.sample(next_states, next_xi);
  const Vector q = bundle.min_q(next_states, next.actions, /*target=*/true);
  const double gamma = bundle.config().gamma;
  return rewards + gamma * (q - bundle.alpha() * next.log_prob);
}

void soft_update(nn::DenseNet& target, const nn::DenseNet& source, double polyak) {
  auto dst = target.parameters();
  const auto src = source.parameters();
  if (dst.size() != src.size()) throw ShapeError("soft_update: network shapes differ");
  for (std::size_t k = 0; k < dst.size(); ++k) {
    if (polyak == 1.0)
      *dst[k] = *src[k];
    else
      *dst[k] = polyak * *src[k] + (1.0 - polyak) * *dst[k];
  }
}

namespace {

// d(min Q)/d action per column, and min Q itself.
Matrix min_q_action_gradient(const PolicyBundle& b, const Matrix& states, const Matrix& actions,
                             Vector& q_min) {
  const Matrix in = stack(states, actions);
  nn::DenseNet::Tape t1, t2;
  const Matrix v1 = b.q1.forward(in, t1);
  const Matrix v2 = b.q2.forward(in, t2);
  const Matrix ones = Matrix::Ones(1, in.cols());
  Matrix g1, g2;
  b.q1.backward(t1, ones, &g1);
  b.q2.backward(t2, ones, &g2);
  const Eigen::Index a = actions.rows();
  Matrix grad(a, in.cols());
  q_min.resize(in.cols());
  for (Eigen::Index j = 0; j < in.cols(); ++j) {
    const bool first = v1(0, j) <= v2(0, j);
    q_min(j) = first ? v1(0, j) : v2(0, j);
    grad.col(j) = (first ? g1 : g2).col(j).tail(a);
  }
  return grad;
}

Matrix actor_output_gradient_from(const PolicyBundle& b, const Matrix& states,
                                  const Matrix& actor_out, const Matrix& xi, double alpha,
                                  double* loss, Vector* log_prob) {
  const Eigen::Index A = b.action_dim();
  const double lo = b.config().log_std_min, hi = b.config().log_std_max;
  const Matrix mean = actor_out.topRows(A);
  const Matrix raw = actor_out.bottomRows(A);
  const Matrix log_std = (lo + 0.5 * (hi - lo) * (raw.array().tanh() + 1.0)).matrix();
  const Matrix std_dev = log_std.array().exp().matrix();
  const Matrix u = mean + std_dev.cwiseProduct(xi);
  const Matrix act = u.array().tanh().matrix();
  const Vector lp = squashed_log_prob(u, mean, log_std);
  Vector q;
  const Matrix dq_da = min_q_action_gradient(b, states, act, q);
  const double inv_b = 1.0 / static_cast<double>(states.cols());

  Matrix grad(2 * A, states.cols());
  for (Eigen::Index j = 0; j < states.cols(); ++j) {
    for (Eigen::Index d = 0; d < A; ++d) {
      const double a = act(d, j);
      const double g_mean = inv_b * (alpha * 2.0 * a - dq_da(d, j) * (1.0 - a * a));
      const double g_log_std = g_mean * std_dev(d, j) * xi(d, j) - alpha * inv_b;
      const double th = std::tanh(raw(d, j));
      grad(d, j) = g_mean;
      grad(A + d, j) = g_log_std * 0.5 * (hi - lo) * (1.0 - th * th);
    }
  }
  if (loss) *loss = (alpha * lp - q).mean();
  if (log_prob) *log_prob = lp;
  return grad;
}

}  // namespace

Matrix actor_output_gradient(const PolicyBundle& bundle, const Matrix& states, const Matrix& xi,
                             double alpha, double* loss) {
  return actor_output_gradient_from(bundle, states, bundle.actor.forward(states), xi, alpha, loss,
                                    nullptr);
}

SacAgent::SacAgent(int state_dim, int action_dim, const SacConfig& config, Rng& rng)
    : bundle_(state_dim, action_dim, config, rng) {
  auto pa = bundle_.actor.parameters();
  auto p1 = bundle_.q1.parameters();
  auto p2 = bundle_.q2.parameters();
  actor_opt_ = nn::Adam({config.actor_lr}, pa);
  q1_opt_ = nn::Adam({config.critic_lr}, p1);
  q2_opt_ = nn::Adam({config.critic_lr}, p2);
  Matrix la(1, 1);
  Matrix* pla[1] = {&la};
  alpha_opt_ = nn::Adam({config.alpha_lr}, pla);
}

UpdateReport SacAgent::update(const Batch& batch, Rng& rng) {
  const Eigen::Index B = batch.states.cols();
  if (B == 0) throw ShapeError("SAC update needs a non-empty batch");
  if (batch.actions.cols() != B || batch.next_states.cols() != B || batch.rewards.size() != B)
    throw ShapeError("SAC batch components disagree on the batch size");
  if (!batch.rewards.allFinite()) throw NumericError("non-finite reward in SAC batch");
  auto& b = bundle_;
  UpdateReport rep;

  // Critics.
  const Vector y = critic_target(b, batch.rewards, batch.next_states,
                                 rng.normal_matrix(b.action_dim(), B));
  const Matrix in = stack(batch.states, batch.actions);
  double critic_loss = 0.0, mean_q = 0.0;
  for (auto [net, opt] : {std::pair{&b.q1, &q1_opt_}, std::pair{&b.q2, &q2_opt_}}) {
    nn::DenseNet::Tape tape;
    const Matrix q = net->forward(in, tape);
    const Eigen::RowVectorXd diff = q.row(0) - y.transpose();
    critic_loss += diff.squaredNorm() / static_cast<double>(B);
    mean_q += q.mean() / 2.0;
    const Matrix upstream = (2.0 / static_cast<double>(B)) * diff;
    const nn::Gradients g = net->backward(tape, upstream);
    auto params = net->parameters();
    opt->step(params, g);
  }
  if (!std::isfinite(critic_loss))
    throw NumericError("non-finite critic loss (mean target " + std::to_string(y.mean()) + ")");
  rep.critic_loss = critic_loss;
  rep.mean_q = mean_q;
  rep.mean_target = y.mean();

  // Actor.
  const double alpha = b.alpha();
  const Matrix xi = rng.normal_matrix(b.action_dim(), B);
  nn::DenseNet::Tape tape;
  const Matrix out = b.actor.forward(batch.states, tape);
  double actor_loss = 0.0;
  Vector log_prob;
  const Matrix upstream = actor_output_gradient_from(b, batch.states, out, xi, alpha, &actor_loss,
                                                     &log_prob);
  if (!std::isfinite(actor_loss)) throw NumericError("non-finite actor loss");
  {
    const nn::Gradients g = b.actor.backward(tape, upstream);
    auto params = b.actor.parameters();
    actor_opt_.step(params, g);
  }
  rep.actor_loss = actor_loss;
  rep.mean_log_prob = log_prob.mean();

  // Temperature, in log space.
  const double entropy_gap = log_prob.mean() + b.target_entropy();
  rep.alpha_loss = -b.log_alpha() * entropy_gap;
  if (b.config().learn_alpha) {
    Matrix la(1, 1);
    la(0, 0) = b.log_alpha();
    Matrix* params[1] = {&la};
    const Matrix grads[1] = {Matrix::Constant(1, 1, -entropy_gap)};
    alpha_opt_.step(params, grads);
    b.set_log_alpha(la(0, 0));
  }
  rep.alpha = b.alpha();

  soft_update(b.q1_target, b.q1, b.config().polyak);
  soft_update(b.q2_target, b.q2, b.config().polyak);
  return rep;
}

void SacAgent::save(std::ostream& os) const {
  bundle_.save(os);
  actor_opt_.save(os);
  q1_opt_.save(os);
  q2_opt_.save(os);
  alpha_opt_.save(os);
}

SacAgent SacAgent::load(std::istream& is) {
  SacAgent a;
  a.bundle_ = PolicyBundle::load(is);
  a.actor_opt_ = nn::Adam::load(is);
  a.q1_opt_ = nn::Adam::load(is);
  a.q2_opt_ = nn::Adam::load(is);
  a.alpha_opt_ = nn::Adam::load(is);
  return a;
}

AgentReplayBuffer::AgentReplayBuffer(int state_dim, int action_dim, std::size_t capacity)
    : state_dim_(state_dim),
      action_dim_(action_dim),
      capacity_(capacity),
      states_(Matrix::Zero(state_dim, static_cast<Eigen::Index>(capacity))),
      actions_(Matrix::Zero(action_dim, static_cast<Eigen::Index>(capacity))),
      next_states_(Matrix::Zero(state_dim, static_cast<Eigen::Index>(capacity))),
      done_(capacity, 0) {
  if (capacity == 0) throw ConfigError("agent buffer capacity must be positive");
}

void AgentReplayBuffer::push(const Vector& state, const Vector& action, const Vector& next_state,
                             bool done) {
  if (state.size() != state_dim_ || next_state.size() != state_dim_ || action.size() != action_dim_)
    throw ShapeError("agent buffer: transition dimension mismatch");
  const auto c = static_cast<Eigen::Index>(head_);
  states_.col(c) = state;
  actions_.col(c) = action;
  next_states_.col(c) = next_state;
  done_[head_] = done ? 1 : 0;
  head_ = (head_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

AgentReplayBuffer::Sample AgentReplayBuffer::sample(std::size_t k, Rng& rng) const {
  if (size_ == 0) throw ShapeError("cannot sample an empty agent buffer");
  Sample s;
  const auto n = static_cast<Eigen::Index>(k);
  s.states.resize(state_dim_, n);
  s.actions.resize(action_dim_, n);
  s.next_states.resize(state_dim_, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const std::size_t i = rng.index(size_);
    s.indices.push_back(i);
    const auto c = static_cast<Eigen::Index>(i);
    s.states.col(j) = states_.col(c);
    s.actions.col(j) = actions_.col(c);
    s.next_states.col(j) = next_states_.col(c);
  }
  return s;
}

Matrix AgentReplayBuffer::pairs(const Sample& s) { return stack(s.states, s.actions); }

void AgentReplayBuffer::save(std::ostream& os) const {
  os << "sd2ail-agent-buffer 1 " << state_dim_ << ' ' << action_dim_ << ' ' << capacity_ << ' '
     << size_ << ' ' << head_ << '\n';
  io::write_matrix(os, states_.leftCols(static_cast<Eigen::Index>(size_)));
  io::write_matrix(os, actions_.leftCols(static_cast<Eigen::Index>(size_)));
  io::write_matrix(os, next_states_.leftCols(static_cast<Eigen::Index>(size_)));
  for (std::size_t i = 0; i < size_; ++i) os << int(done_[i]) << (i + 1 < size_ ? ' ' : '\n');
  if (size_ == 0) os << '\n';
}

AgentReplayBuffer AgentReplayBuffer::load(std::istream& is) {
  io::expect_token(is, "sd2ail-agent-buffer");
  int version = 0, sd = 0, ad = 0;
  std::size_t cap = 0, size = 0, head = 0;
  is >> version >> sd >> ad >> cap >> size >> head;
  if (!is || version != 1 || size > cap) throw std::runtime_error("malformed agent buffer header");
  AgentReplayBuffer b(sd, ad, cap);
  const auto n = static_cast<Eigen::Index>(size);
  b.states_.leftCols(n) = io::read_matrix(is);
  b.actions_.leftCols(n) = io::read_matrix(is);
  b.next_states_.leftCols(n) = io::read_matrix(is);
  for (std::size_t i = 0; i < size; ++i) {
    int d = 0;
    is >> d;
    b.done_[i] = static_cast<char>(d);
  }
  b.size_ = size;
  b.head_ = head;
  return b;
}

}  // namespace sd2ail::sac
