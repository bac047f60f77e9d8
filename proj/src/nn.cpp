#include "sd2ail/nn.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "sd2ail/io.hpp"

namespace sd2ail::nn {

const char* to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + name + "'");
}

namespace {

void validate_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw ShapeError("a network needs at least an input and an output size");
  for (int s : sizes)
    if (s <= 0) throw ShapeError("layer sizes must be positive");
}

}  // namespace

DenseNet::DenseNet(std::vector<int> layer_sizes, Activation hidden, bool)
    : sizes_(std::move(layer_sizes)), activation_(hidden) {
  validate_sizes(sizes_);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    weights_.push_back(Matrix::Zero(sizes_[l + 1], sizes_[l]));
    biases_.push_back(Matrix::Zero(sizes_[l + 1], 1));
  }
}

DenseNet::DenseNet(std::vector<int> layer_sizes, Activation hidden, Rng& rng)
    : DenseNet(std::move(layer_sizes), hidden, true) {
  for (int l = 0; l < layer_count(); ++l) {
    const double fan_in = sizes_[l];
    const bool feeds_relu = activation_ == Activation::kRelu && l + 1 < layer_count();
    const double bound = std::sqrt((feeds_relu ? 6.0 : 3.0) / fan_in);
    Matrix& w = weights_[l];
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-bound, bound);
  }
}

DenseNet DenseNet::zeros(std::vector<int> layer_sizes, Activation hidden) {
  return DenseNet(std::move(layer_sizes), hidden, true);
}

std::size_t DenseNet::parameter_count(const std::vector<int>& sizes) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
    n += static_cast<std::size_t>(sizes[l + 1]) * (sizes[l] + 1);
  return n;
}

std::size_t DenseNet::parameter_count() const { return parameter_count(sizes_); }

Matrix DenseNet::activate(const Matrix& z) const {
  if (activation_ == Activation::kTanh) return z.array().tanh().matrix();
  return z.cwiseMax(0.0);
}

Vector DenseNet::forward(const Vector& input) const {
  const Matrix out = forward(Matrix(input));
  return out.col(0);
}

Matrix DenseNet::forward(const Matrix& batch) const {
  if (batch.rows() != input_size())
    throw ShapeError("forward: expected input of size " + std::to_string(input_size()) +
                     ", got " + std::to_string(batch.rows()));
  Matrix a = batch;
  for (int l = 0; l < layer_count(); ++l) {
    Matrix z = weights_[l] * a;
    z.colwise() += biases_[l].col(0);
    a = (l + 1 < layer_count()) ? activate(z) : std::move(z);
  }
  return a;
}

Matrix DenseNet::forward(const Matrix& batch, Tape& tape) const {
  if (batch.rows() != input_size())
    throw ShapeError("forward: expected input of size " + std::to_string(input_size()) +
                     ", got " + std::to_string(batch.rows()));
  tape.activations.clear();
  tape.activations.reserve(layer_count() + 1);
  tape.activations.push_back(batch);
  for (int l = 0; l < layer_count(); ++l) {
    Matrix z = weights_[l] * tape.activations.back();
    z.colwise() += biases_[l].col(0);
    tape.activations.push_back((l + 1 < layer_count()) ? activate(z) : std::move(z));
  }
  return tape.activations.back();
}

Matrix DenseNet::features(const Matrix& batch) const {
  if (layer_count() < 2) throw ShapeError("features: network has no hidden layer");
  Tape tape;
  forward(batch, tape);
  return tape.activations[layer_count() - 1];
}

Gradients DenseNet::backward(const Tape& tape, const Matrix& upstream,
                             Matrix* input_gradient) const {
  if (tape.activations.size() != static_cast<std::size_t>(layer_count()) + 1)
    throw ShapeError("backward: tape does not belong to this network");
  const Matrix& out = tape.activations.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols())
    throw ShapeError("backward: upstream gradient shape does not match output");

  Gradients grads(2 * layer_count());
  Matrix delta = upstream;
  for (int l = layer_count() - 1; l >= 0; --l) {
    const Matrix& a_in = tape.activations[l];
    grads[2 * l] = delta * a_in.transpose();
    grads[2 * l + 1] = delta.rowwise().sum();
    if (l > 0 || input_gradient) {
      Matrix back = weights_[l].transpose() * delta;
      if (l > 0) {
        // a_in is the activated output of layer l-1.
        if (activation_ == Activation::kTanh)
          back.array() *= 1.0 - a_in.array().square();
        else
          back.array() *= (a_in.array() > 0.0).cast<double>();
        delta = std::move(back);
      } else {
        *input_gradient = std::move(back);
      }
    }
  }
  return grads;
}

std::vector<Matrix*> DenseNet::parameters() {
  std::vector<Matrix*> p;
  for (int l = 0; l < layer_count(); ++l) {
    p.push_back(&weights_[l]);
    p.push_back(&biases_[l]);
  }
  return p;
}

std::vector<const Matrix*> DenseNet::parameters() const {
  std::vector<const Matrix*> p;
  for (int l = 0; l < layer_count(); ++l) {
    p.push_back(&weights_[l]);
    p.push_back(&biases_[l]);
  }
  return p;
}

Gradients DenseNet::zero_gradients() const {
  Gradients g;
  for (const Matrix* p : parameters()) g.push_back(Matrix::Zero(p->rows(), p->cols()));
  return g;
}

Vector DenseNet::flat_parameters() const {
  Vector flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  for (const Matrix* p : parameters())
    for (Eigen::Index i = 0; i < p->rows(); ++i)
      for (Eigen::Index j = 0; j < p->cols(); ++j) flat(k++) = (*p)(i, j);
  return flat;
}

void DenseNet::set_flat_parameters(const Vector& flat) {
  if (flat.size() != static_cast<Eigen::Index>(parameter_count()))
    throw ShapeError("set_flat_parameters: wrong parameter count");
  require_finite(flat, "network parameters");
  Eigen::Index k = 0;
  for (Matrix* p : parameters())
    for (Eigen::Index i = 0; i < p->rows(); ++i)
      for (Eigen::Index j = 0; j < p->cols(); ++j) (*p)(i, j) = flat(k++);
}

void DenseNet::save(std::ostream& os) const {
  os << "sd2ail-densenet 1\n";
  os << "activation " << to_string(activation_) << '\n';
  os << "layers " << sizes_.size();
  for (int s : sizes_) os << ' ' << s;
  os << '\n';
  for (const Matrix* p : parameters()) io::write_matrix(os, *p);
}

DenseNet DenseNet::load(std::istream& is) {
  io::expect_token(is, "sd2ail-densenet");
  int version = 0;
  if (!(is >> version) || version != 1) throw std::runtime_error("unsupported densenet version");
  io::expect_token(is, "activation");
  std::string act;
  is >> act;
  io::expect_token(is, "layers");
  std::size_t n = 0;
  is >> n;
  std::vector<int> sizes(n);
  for (auto& s : sizes) is >> s;
  if (!is) throw std::runtime_error("malformed densenet header");
  DenseNet net(sizes, activation_from_string(act), true);
  for (Matrix* p : net.parameters()) {
    Matrix m = io::read_matrix(is);
    if (m.rows() != p->rows() || m.cols() != p->cols())
      throw std::runtime_error("densenet checkpoint shape mismatch");
    require_finite(m, "loaded network parameters");
    *p = std::move(m);
  }
  return net;
}

bool operator==(const DenseNet& a, const DenseNet& b) {
  if (a.sizes_ != b.sizes_ || a.activation_ != b.activation_) return false;
  for (int l = 0; l < a.layer_count(); ++l)
    if (a.weights_[l] != b.weights_[l] || a.biases_[l] != b.biases_[l]) return false;
  return true;
}

Adam::Adam(AdamConfig config, std::span<Matrix* const> params) : config_(config) {
  if (!(config_.learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  for (const Matrix* p : params) {
    m_.push_back(Matrix::Zero(p->rows(), p->cols()));
    v_.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
}

void Adam::step(std::span<Matrix* const> params, std::span<const Matrix> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw ShapeError("adam: parameter/gradient count mismatch");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k].rows() != m_[k].rows() || grads[k].cols() != m_[k].cols() ||
        params[k]->rows() != m_[k].rows() || params[k]->cols() != m_[k].cols())
      throw ShapeError("adam: block shape mismatch");
    require_finite(grads[k], "gradient");
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t k = 0; k < grads.size(); ++k) {
    m_[k] = config_.beta1 * m_[k] + (1.0 - config_.beta1) * grads[k];
    v_[k] = config_.beta2 * v_[k] + (1.0 - config_.beta2) * grads[k].cwiseProduct(grads[k]);
    params[k]->array() -= config_.learning_rate * (m_[k].array() / c1) /
                          ((v_[k].array() / c2).sqrt() + config_.epsilon);
    require_finite(*params[k], "parameters after adam step");
  }
}

void Adam::save(std::ostream& os) const {
  os << "sd2ail-adam 1\n";
  os << io::format_double(config_.learning_rate) << ' ' << io::format_double(config_.beta1) << ' '
     << io::format_double(config_.beta2) << ' ' << io::format_double(config_.epsilon) << ' '
     << step_ << ' ' << m_.size() << '\n';
  for (std::size_t k = 0; k < m_.size(); ++k) {
    io::write_matrix(os, m_[k]);
    io::write_matrix(os, v_[k]);
  }
}

Adam Adam::load(std::istream& is) {
  io::expect_token(is, "sd2ail-adam");
  int version = 0;
  is >> version;
  if (version != 1) throw std::runtime_error("unsupported adam version");
  Adam a;
  std::string lr, b1, b2, eps;
  std::size_t n = 0;
  is >> lr >> b1 >> b2 >> eps >> a.step_ >> n;
  if (!is) throw std::runtime_error("malformed adam header");
  a.config_ = {io::parse_double(lr), io::parse_double(b1), io::parse_double(b2),
               io::parse_double(eps)};
  for (std::size_t k = 0; k < n; ++k) {
    a.m_.push_back(io::read_matrix(is));
    a.v_.push_back(io::read_matrix(is));
  }
  return a;
}

void accumulate(Gradients& a, const Gradients& b) {
  if (a.size() != b.size()) throw ShapeError("accumulate: gradient list length mismatch");
  for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
}

void scale(Gradients& g, double factor) {
  for (auto& m : g) m *= factor;
}

}  // namespace sd2ail::nn
