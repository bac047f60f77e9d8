#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "sd2ail/common.hpp"

namespace sd2ail::nn {

enum class Activation { kTanh, kRelu };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Gradients for a parameter list, index-aligned with parameters().
using Gradients = std::vector<Matrix>;

/// Fully connected network. Hidden layers use one activation; the output
/// layer is linear. Batched calls take one sample per column.
class DenseNet {
 public:
  /// Intermediate activations of a batched forward pass, consumed by backward().
  struct Tape {
    std::vector<Matrix> activations;  // activations[0] is the input batch
  };

  DenseNet() = default;
  /// Fan-in scaled uniform initialisation, U(-sqrt(6/fan_in), sqrt(6/fan_in))
  /// for weights feeding a ReLU and U(-sqrt(3/fan_in), ...) otherwise; zero biases.
  DenseNet(std::vector<int> layer_sizes, Activation hidden, Rng& rng);
  /// All-zero parameters.
  static DenseNet zeros(std::vector<int> layer_sizes, Activation hidden);

  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  int layer_count() const { return static_cast<int>(weights_.size()); }
  const std::vector<int>& layer_sizes() const { return sizes_; }
  Activation activation() const { return activation_; }
  std::size_t parameter_count() const;
  static std::size_t parameter_count(const std::vector<int>& layer_sizes);

  Vector forward(const Vector& input) const;
  Matrix forward(const Matrix& batch) const;
  Matrix forward(const Matrix& batch, Tape& tape) const;
  /// Output of the last hidden layer (the penultimate representation).
  Matrix features(const Matrix& batch) const;

  /// Parameter gradients of <upstream, output> summed over the batch. When
  /// `input_gradient` is non-null it receives d<upstream, output>/d input.
  Gradients backward(const Tape& tape, const Matrix& upstream,
                     Matrix* input_gradient = nullptr) const;

  Matrix& weight(int layer) { return weights_[layer]; }
  const Matrix& weight(int layer) const { return weights_[layer]; }
  Matrix& bias(int layer) { return biases_[layer]; }
  const Matrix& bias(int layer) const { return biases_[layer]; }

  /// Order: W0, b0, W1, b1, ...
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  Gradients zero_gradients() const;

  Vector flat_parameters() const;
  void set_flat_parameters(const Vector& flat);

  /// Versioned text dump: header, layer sizes, then row-major values.
  void save(std::ostream& os) const;
  static DenseNet load(std::istream& is);

  friend bool operator==(const DenseNet& a, const DenseNet& b);

 private:
  DenseNet(std::vector<int> layer_sizes, Activation hidden, bool);
  Matrix activate(const Matrix& z) const;

  std::vector<int> sizes_;
  Activation activation_ = Activation::kTanh;
  std::vector<Matrix> weights_;
  std::vector<Matrix> biases_;  // column vectors
};

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias-corrected moments over an arbitrary list of parameter
/// blocks. The block layout is fixed at construction.
class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig config, std::span<Matrix* const> params);

  /// Applies one update. Throws NumericError on a non-finite gradient and
  /// ShapeError when shapes disagree with construction.
  void step(std::span<Matrix* const> params, std::span<const Matrix> grads);

  std::uint64_t step_count() const { return step_; }
  const AdamConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  const std::vector<Matrix>& first_moment() const { return m_; }
  const std::vector<Matrix>& second_moment() const { return v_; }

  void save(std::ostream& os) const;
  static Adam load(std::istream& is);

 private:
  AdamConfig config_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::uint64_t step_ = 0;
};

/// Adds `b` into `a` block-wise.
void accumulate(Gradients& a, const Gradients& b);
void scale(Gradients& g, double factor);

}  // namespace sd2ail::nn
