#include "sd2ail/diffusion.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "sd2ail/io.hpp"
#include "sd2ail/kernels.hpp"

namespace sd2ail::diffusion {

Schedule build_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("diffusion steps must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ConfigError("beta range must satisfy 0 < beta_start <= beta_end < 1");
  Schedule s;
  s.steps = steps;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.assign(steps + 1, 0.0);
  s.alpha.assign(steps + 1, 1.0);
  s.alpha_bar.assign(steps + 1, 1.0);
  s.sigma.assign(steps + 1, 0.0);
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
    s.beta[t] = t == steps ? beta_end : beta_start + (beta_end - beta_start) * frac;
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.sigma[t] = std::sqrt(s.beta[t]);
  }
  return s;
}

namespace {

void check_step(int t, const Schedule& sched) {
  if (t < 1 || t > sched.steps)
    throw ShapeError("diffusion step " + std::to_string(t) + " outside 1.." +
                     std::to_string(sched.steps));
}

}  // namespace

Matrix forward_noise(const Matrix& x0, int t, const Matrix& eps, const Schedule& sched) {
  check_step(t, sched);
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols())
    throw ShapeError("forward_noise: noise shape does not match data");
  return std::sqrt(sched.alpha_bar[t]) * x0 + std::sqrt(1.0 - sched.alpha_bar[t]) * eps;
}

Vector forward_noise(const Vector& x0, int t, const Vector& eps, const Schedule& sched) {
  return forward_noise(Matrix(x0), t, Matrix(eps), sched).col(0);
}

Matrix EpsilonModel::predict(const Matrix& noisy, int t) const {
  std::vector<int> steps(static_cast<std::size_t>(noisy.cols()), t);
  return predict(noisy, steps);
}

NoisePredictor::NoisePredictor(int data_dim, int steps, int embed_dim,
                               const std::vector<int>& hidden, nn::Activation activation,
                               Rng& rng)
    : data_dim_(data_dim) {
  if (data_dim <= 0 || steps <= 0 || embed_dim < 0)
    throw ShapeError("noise predictor dimensions must be positive");
  std::vector<int> sizes{data_dim + embed_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(data_dim);
  net_ = nn::DenseNet(sizes, activation, rng);
  embedding_.resize(embed_dim, steps);
  for (Eigen::Index j = 0; j < embedding_.cols(); ++j)
    for (Eigen::Index i = 0; i < embedding_.rows(); ++i) embedding_(i, j) = rng.normal();
}

Matrix NoisePredictor::assemble(const Matrix& noisy, std::span<const int> steps) const {
  if (noisy.rows() != data_dim_)
    throw ShapeError("noise predictor: expected input of size " + std::to_string(data_dim_));
  if (static_cast<std::size_t>(noisy.cols()) != steps.size())
    throw ShapeError("noise predictor: one step index per column required");
  Matrix in(data_dim_ + embedding_.rows(), noisy.cols());
  in.topRows(data_dim_) = noisy;
  for (Eigen::Index j = 0; j < noisy.cols(); ++j) {
    const int t = steps[static_cast<std::size_t>(j)];
    if (t < 1 || t > this->steps()) throw ShapeError("noise predictor: step out of range");
    in.col(j).tail(embedding_.rows()) = embedding_.col(t - 1);
  }
  return in;
}

Matrix NoisePredictor::predict(const Matrix& noisy, std::span<const int> steps) const {
  return net_.forward(assemble(noisy, steps));
}

Matrix NoisePredictor::predict(const Matrix& noisy, std::span<const int> steps,
                               Tape& tape) const {
  tape.steps.assign(steps.begin(), steps.end());
  return net_.forward(assemble(noisy, steps), tape.net);
}

nn::Gradients NoisePredictor::backward(const Tape& tape, const Matrix& upstream) const {
  Matrix input_grad;
  nn::Gradients grads =
      net_.backward(tape.net, upstream, embedding_.rows() > 0 ? &input_grad : nullptr);
  Matrix emb_grad = Matrix::Zero(embedding_.rows(), embedding_.cols());
  if (embedding_.rows() > 0) {
    for (std::size_t j = 0; j < tape.steps.size(); ++j)
      emb_grad.col(tape.steps[j] - 1) +=
          input_grad.col(static_cast<Eigen::Index>(j)).tail(embedding_.rows());
  }
  grads.push_back(std::move(emb_grad));
  return grads;
}

std::vector<Matrix*> NoisePredictor::parameters() {
  auto p = net_.parameters();
  p.push_back(&embedding_);
  return p;
}

std::vector<const Matrix*> NoisePredictor::parameters() const {
  auto p = net_.parameters();
  p.push_back(&embedding_);
  return p;
}

nn::Gradients NoisePredictor::zero_gradients() const {
  nn::Gradients g = net_.zero_gradients();
  g.push_back(Matrix::Zero(embedding_.rows(), embedding_.cols()));
  return g;
}

void NoisePredictor::save(std::ostream& os) const {
  os << "sd2ail-noise-predictor 1\n" << data_dim_ << '\n';
  net_.save(os);
  io::write_matrix(os, embedding_);
}

NoisePredictor NoisePredictor::load(std::istream& is) {
  io::expect_token(is, "sd2ail-noise-predictor");
  int version = 0;
  is >> version;
  if (version != 1) throw std::runtime_error("unsupported noise predictor version");
  NoisePredictor p;
  is >> p.data_dim_;
  p.net_ = nn::DenseNet::load(is);
  p.embedding_ = io::read_matrix(is);
  if (p.net_.input_size() != p.data_dim_ + p.embedding_.rows() ||
      p.net_.output_size() != p.data_dim_)
    throw std::runtime_error("noise predictor checkpoint is inconsistent");
  return p;
}

double diffusion_loss(const EpsilonModel& model, const Vector& x0, int t, const Vector& eps,
                      const Schedule& sched) {
  const Vector noisy = forward_noise(x0, t, eps, sched);
  const Matrix pred = model.predict(Matrix(noisy), t);
  const double loss = (eps - pred.col(0)).squaredNorm();
  if (!std::isfinite(loss)) throw NumericError("diffusion loss is not finite");
  return loss;
}

double diffusion_loss_gradient(const NoisePredictor& model, const Vector& x0, int t,
                               const Vector& eps, const Schedule& sched, nn::Gradients& grads) {
  const Vector noisy = forward_noise(x0, t, eps, sched);
  NoisePredictor::Tape tape;
  const int steps[1] = {t};
  const Matrix pred = model.predict(Matrix(noisy), steps, tape);
  const Vector residual = eps - pred.col(0);
  const double loss = residual.squaredNorm();
  if (!std::isfinite(loss)) throw NumericError("diffusion loss is not finite");
  grads = model.backward(tape, Matrix(-2.0 * residual));
  return loss;
}

Matrix reverse_sample(const EpsilonModel& model, const Schedule& sched, Rng& noise, int n) {
  if (n < 0) throw ShapeError("reverse_sample: negative sample count");
  const int dim = model.data_dim();
  if (n == 0) return Matrix(dim, 0);
  Matrix x_T = noise.normal_matrix(dim, n);
  std::vector<Matrix> step_noise;
  for (int t = sched.steps; t >= 2; --t) step_noise.push_back(noise.normal_matrix(dim, n));
  return kernels::reverse_chain(model, sched, x_T, step_noise);
}

Normalizer Normalizer::fit(const Matrix& data, double min_scale) {
  if (data.cols() < 1) throw ShapeError("normalizer: no data");
  Normalizer n;
  n.mean = data.rowwise().mean();
  const Matrix centered = data.colwise() - n.mean;
  n.scale = (centered.array().square().rowwise().sum() / static_cast<double>(data.cols()))
                .sqrt()
                .max(min_scale)
                .matrix();
  return n;
}

Normalizer Normalizer::identity(int dim) {
  return {Vector::Zero(dim), Vector::Ones(dim)};
}

Matrix Normalizer::normalize(const Matrix& x) const {
  if (x.rows() != mean.size()) throw ShapeError("normalizer: dimension mismatch");
  return ((x.colwise() - mean).array().colwise() / scale.array()).matrix();
}

Matrix Normalizer::denormalize(const Matrix& z) const {
  if (z.rows() != mean.size()) throw ShapeError("normalizer: dimension mismatch");
  return ((z.array().colwise() * scale.array()).matrix().colwise() + mean);
}

void Normalizer::save(std::ostream& os) const {
  os << "normalizer\n";
  io::write_matrix(os, mean);
  io::write_matrix(os, scale);
}

Normalizer Normalizer::load(std::istream& is) {
  io::expect_token(is, "normalizer");
  Normalizer n;
  n.mean = io::read_matrix(is);
  n.scale = io::read_matrix(is);
  return n;
}

void save_schedule(std::ostream& os, const Schedule& sched) {
  os << "schedule " << sched.steps << ' ' << io::format_double(sched.beta_start) << ' '
     << io::format_double(sched.beta_end) << '\n';
}

Schedule load_schedule(std::istream& is) {
  io::expect_token(is, "schedule");
  int steps = 0;
  std::string b0, b1;
  is >> steps >> b0 >> b1;
  if (!is) throw std::runtime_error("malformed schedule record");
  return build_schedule(steps, io::parse_double(b0), io::parse_double(b1));
}

}  // namespace sd2ail::diffusion
