#include "sd2ail/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "sd2ail/io.hpp"
#include "sd2ail/kernels.hpp"

namespace sd2ail::discriminator {

namespace {

// Each sample repeated `draws` times, consecutively.
Matrix replicate(const Matrix& x, int draws) {
  if (draws == 1) return x;
  Matrix out(x.rows(), x.cols() * draws);
  for (Eigen::Index i = 0; i < x.cols(); ++i)
    for (int m = 0; m < draws; ++m) out.col(i * draws + m) = x.col(i);
  return out;
}

// Unclamped D per original sample from T x (n * draws) losses.
Vector raw_confidence(const Matrix& losses, int draws) {
  const Eigen::RowVectorXd per_column = (-losses.array()).exp().matrix().colwise().mean();
  const Eigen::Index n = losses.cols() / draws;
  Vector d(n);
  for (Eigen::Index i = 0; i < n; ++i) d(i) = per_column.segment(i * draws, draws).mean();
  return d;
}

double clamp(double d, double delta) { return std::clamp(d, delta, 1.0 - delta); }

void check_clamp(double delta) {
  if (!(delta > 0.0 && delta < 0.5)) throw ConfigError("clamp_delta must lie in (0, 0.5)");
}

}  // namespace

Vector confidence_from_losses(const Matrix& losses, double clamp_delta) {
  Vector d = raw_confidence(losses, 1);
  for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = clamp(d(i), clamp_delta);
  return d;
}

Vector confidence(const diffusion::EpsilonModel& model, const diffusion::Schedule& sched,
                  const Matrix& normalized, Rng& noise, double clamp_delta, int draws) {
  check_clamp(clamp_delta);
  if (draws < 1) throw ConfigError("noise draws must be >= 1");
  if (normalized.rows() != model.data_dim()) throw ShapeError("confidence: pair dimension mismatch");
  const Matrix x0 = replicate(normalized, draws);
  const Matrix eps = noise.normal_matrix(x0.rows(), x0.cols() * sched.steps);
  const Matrix losses = kernels::step_losses(model, sched, x0, eps);
  Vector d = raw_confidence(losses, draws);
  for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = clamp(d(i), clamp_delta);
  return d;
}

double surrogate_reward(double confidence) { return -std::log1p(-confidence); }

double dynamic_threshold(const Vector& expert_confidences) {
  if (expert_confidences.size() == 0) throw ShapeError("dynamic threshold of an empty batch");
  return expert_confidences.mean();
}

Matrix make_pairs(const Matrix& states, const Matrix& actions) {
  if (states.cols() != actions.cols()) throw ShapeError("make_pairs: column count mismatch");
  Matrix out(states.rows() + actions.rows(), states.cols());
  out.topRows(states.rows()) = states;
  out.bottomRows(actions.rows()) = actions;
  return out;
}

Discriminator::Discriminator(int state_dim, int action_dim, diffusion::NoisePredictor predictor,
                             diffusion::Schedule sched, diffusion::Normalizer normalizer,
                             double clamp_delta, int noise_draws)
    : state_dim_(state_dim),
      action_dim_(action_dim),
      predictor_(std::move(predictor)),
      sched_(std::move(sched)),
      normalizer_(std::move(normalizer)),
      clamp_delta_(clamp_delta),
      noise_draws_(noise_draws) {
  check_clamp(clamp_delta_);
  if (noise_draws_ < 1) throw ConfigError("noise draws must be >= 1");
  if (predictor_.data_dim() != pair_dim() || normalizer_.dim() != pair_dim())
    throw ShapeError("discriminator components disagree on the pair dimension");
  if (predictor_.steps() != sched_.steps)
    throw ShapeError("noise predictor embedding does not match the schedule length");
}

Vector Discriminator::confidence_normalized(const Matrix& normalized, Rng& noise) const {
  return discriminator::confidence(predictor_, sched_, normalized, noise, clamp_delta_,
                                   noise_draws_);
}

Vector Discriminator::confidence(const Matrix& pairs, Rng& noise) const {
  if (pairs.rows() != pair_dim()) throw ShapeError("confidence: pair dimension mismatch");
  return confidence_normalized(normalizer_.normalize(pairs), noise);
}

double Discriminator::confidence(const Vector& state, const Vector& action, Rng& noise) const {
  if (state.size() != state_dim_ || action.size() != action_dim_)
    throw ShapeError("confidence: state/action dimension mismatch");
  return confidence(make_pairs(state, action), noise)(0);
}

Vector Discriminator::surrogate_reward(const Matrix& pairs, Rng& noise) const {
  return confidence(pairs, noise).unaryExpr([](double d) { return discriminator::surrogate_reward(d); });
}

double Discriminator::dynamic_threshold(const Matrix& expert_pairs, Rng& noise) const {
  if (expert_pairs.cols() == 0) throw ShapeError("dynamic threshold of an empty batch");
  return discriminator::dynamic_threshold(confidence(expert_pairs, noise));
}

FilterResult Discriminator::filter_pseudo(const Matrix& candidates, double tau, Rng& noise) const {
  FilterResult r;
  r.confidence = confidence(candidates, noise);
  for (Eigen::Index i = 0; i < candidates.cols(); ++i)
    if (r.confidence(i) > tau) r.kept.push_back(i);
  r.accepted.resize(candidates.rows(), static_cast<Eigen::Index>(r.kept.size()));
  for (std::size_t k = 0; k < r.kept.size(); ++k)
    r.accepted.col(static_cast<Eigen::Index>(k)) = candidates.col(r.kept[k]);
  return r;
}

Matrix Discriminator::generate(int n, Rng& noise) const {
  return normalizer_.denormalize(diffusion::reverse_sample(predictor_, sched_, noise, n));
}

struct Discriminator::Evaluation {
  double loss = 0.0;
  Vector d_raw;      // all samples, expert | pseudo | agent
  Vector d;          // clamped
  Matrix losses;
  kernels::LossPass pass;
  Eigen::Index n_expert = 0, n_pseudo = 0, n_agent = 0;
};

Discriminator::Evaluation Discriminator::evaluate(const LabeledBatch& b, Rng& noise,
                                                  bool keep_tape) const {
  const Eigen::Index ne = b.expert.cols(), np = b.pseudo.cols(), na = b.agent.cols();
  if (na == 0 || ne + np == 0)
    throw ShapeError("discriminator batch needs agent samples and expert or pseudo-expert samples");
  if (b.expert_weights.size() != ne || b.pseudo_weights.size() != np)
    throw ShapeError("one importance weight per positive sample is required");
  if ((ne && b.expert_weights.minCoeff() <= 0.0) || (np && b.pseudo_weights.minCoeff() <= 0.0))
    throw ShapeError("importance weights must be strictly positive");
  for (const Matrix* m : {&b.expert, &b.pseudo, &b.agent})
    if (m->cols() && m->rows() != pair_dim()) throw ShapeError("batch pair dimension mismatch");

  Evaluation e;
  e.n_expert = ne;
  e.n_pseudo = np;
  e.n_agent = na;
  Matrix all(pair_dim(), ne + np + na);
  if (ne) all.leftCols(ne) = b.expert;
  if (np) all.middleCols(ne, np) = b.pseudo;
  all.rightCols(na) = b.agent;

  const Matrix x0 = replicate(all, noise_draws_);
  const Matrix eps = noise.normal_matrix(x0.rows(), x0.cols() * sched_.steps);
  if (keep_tape) {
    e.pass = kernels::step_losses_with_tape(predictor_, sched_, x0, eps);
    e.losses = e.pass.losses;
  } else {
    e.losses = kernels::step_losses(predictor_, sched_, x0, eps);
  }
  e.d_raw = raw_confidence(e.losses, noise_draws_);
  e.d = e.d_raw.unaryExpr([this](double v) { return clamp(v, clamp_delta_); });

  double loss = 0.0;
  if (ne) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < ne; ++i) s -= b.expert_weights(i) * std::log(e.d(i));
    loss += s / static_cast<double>(ne);
  }
  if (np) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < np; ++i) s -= b.pseudo_weights(i) * std::log(e.d(ne + i));
    loss += s / static_cast<double>(np);
  }
  {
    double s = 0.0;
    for (Eigen::Index i = 0; i < na; ++i) s -= std::log1p(-e.d(ne + np + i));
    loss += s / static_cast<double>(na);
  }
  if (!std::isfinite(loss)) throw NumericError("discriminator loss is not finite");
  e.loss = loss;
  return e;
}

double Discriminator::evaluate_loss(const LabeledBatch& batch, Rng& noise) const {
  return evaluate(batch, noise, false).loss;
}

nn::Gradients Discriminator::loss_gradient(const LabeledBatch& b, Rng& noise,
                                           StepResult& r) const {
  Evaluation e = evaluate(b, noise, true);
  const Eigen::Index ne = e.n_expert, np = e.n_pseudo, na = e.n_agent;
  const Eigen::Index n = ne + np + na;

  // dLoss/dD evaluated at the clamped confidence and passed straight through
  // the clamp, so saturated samples still receive a learning signal.
  Vector dloss_dd(n);
  for (Eigen::Index i = 0; i < ne; ++i)
    dloss_dd(i) = -b.expert_weights(i) / (static_cast<double>(ne) * e.d(i));
  for (Eigen::Index i = 0; i < np; ++i)
    dloss_dd(ne + i) = -b.pseudo_weights(i) / (static_cast<double>(np) * e.d(ne + i));
  for (Eigen::Index i = 0; i < na; ++i)
    dloss_dd(ne + np + i) = 1.0 / (static_cast<double>(na) * (1.0 - e.d(ne + np + i)));

  // D = mean over (t, draw) of exp(-L)  =>  dD/dL = -exp(-L) / (T * draws).
  const double norm = static_cast<double>(sched_.steps * noise_draws_);
  Matrix upstream(e.losses.rows(), e.losses.cols());
  for (Eigen::Index c = 0; c < e.losses.cols(); ++c) {
    const double g = dloss_dd(c / noise_draws_);
    for (Eigen::Index t = 0; t < e.losses.rows(); ++t)
      upstream(t, c) = -g * std::exp(-e.losses(t, c)) / norm;
  }
  r.loss = e.loss;
  r.expert_confidence = e.d.head(ne);
  r.pseudo_confidence = e.d.segment(ne, np);
  r.agent_confidence = e.d.tail(na);
  return kernels::step_loss_gradients(predictor_, e.pass, upstream);
}

StepResult Discriminator::train_step(const LabeledBatch& b, nn::Adam& optimizer, Rng& noise) {
  StepResult r;
  const nn::Gradients grads = loss_gradient(b, noise, r);
  auto params = predictor_.parameters();
  optimizer.step(params, grads);
  return r;
}

nn::Adam Discriminator::make_optimizer(const nn::AdamConfig& config) {
  auto params = predictor_.parameters();
  return nn::Adam(config, params);
}

void Discriminator::save(std::ostream& os) const {
  os << "sd2ail-discriminator 1\n";
  os << "dims " << state_dim_ << ' ' << action_dim_ << '\n';
  os << "clamp " << io::format_double(clamp_delta_) << " draws " << noise_draws_ << '\n';
  diffusion::save_schedule(os, sched_);
  normalizer_.save(os);
  predictor_.save(os);
}

Discriminator Discriminator::load(std::istream& is) {
  io::expect_token(is, "sd2ail-discriminator");
  int version = 0;
  is >> version;
  if (version != 1) throw std::runtime_error("unsupported discriminator version");
  int sd = 0, ad = 0, draws = 0;
  std::string delta;
  io::expect_token(is, "dims");
  is >> sd >> ad;
  io::expect_token(is, "clamp");
  is >> delta;
  io::expect_token(is, "draws");
  is >> draws;
  if (!is) throw std::runtime_error("malformed discriminator header");
  auto sched = diffusion::load_schedule(is);
  auto normalizer = diffusion::Normalizer::load(is);
  auto predictor = diffusion::NoisePredictor::load(is);
  return Discriminator(sd, ad, std::move(predictor), std::move(sched), std::move(normalizer),
                       io::parse_double(delta), draws);
}

}  // namespace sd2ail::discriminator
