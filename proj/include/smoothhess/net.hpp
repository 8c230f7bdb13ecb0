#pragma once

#include "smoothhess/core.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace smoothhess {

enum class Activation { relu, softplus, swish, identity };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

/// Scalar activation and its first two derivatives. ReLU uses relu'(0) = 0.
double activate(Activation a, double beta, double z);
double activate_d1(Activation a, double beta, double z);
double activate_d2(Activation a, double beta, double z);

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::identity;
  double beta = 1.0;  // inverse temperature, softplus/swish only

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }
};

/// Which scalar of the network defines f : R^d -> R.
struct Head {
  enum class Kind {
    output,    // post-activation output of the final layer
    internal,  // pre-activation of neuron `index` in layer `layer` (network truncated there)
    softmax    // softmax probability of class `index` over the final layer outputs
  };
  Kind kind = Kind::output;
  std::size_t layer = 0;
  std::size_t index = 0;

  static Head output_neuron(std::size_t i) { return {Kind::output, 0, i}; }
  static Head internal_neuron(std::size_t layer, std::size_t i) { return {Kind::internal, layer, i}; }
  static Head softmax_probability(std::size_t cls) { return {Kind::softmax, 0, cls}; }

  bool operator==(const Head&) const = default;
};

/// Feed-forward network with a selected scalar head. Immutable once built;
/// all evaluation methods are const and reentrant.
class Network {
 public:
  Network() = default;
  Network(std::size_t input_dim, std::vector<Layer> layers, Head head = {});

  std::size_t input_dim() const { return input_dim_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const Head& head() const { return head_; }
  std::size_t output_dim() const { return layers_.back().out_dim(); }

  /// Same weights, different scalar head.
  Network with_head(Head head) const;

  double forward(const Vector& x) const;
  Vector gradient(const Vector& x) const;

  /// xs is n x d. Row i of the result equals forward/gradient at xs.row(i),
  /// bit for bit: the single-point calls run this kernel with n = 1.
  Vector batch_forward(const Matrix& xs) const;
  Matrix batch_gradient(const Matrix& xs) const;
  /// Values and gradients from one pass.
  void batch_value_and_gradient(const Matrix& xs, Vector& values, Matrix& grads) const;

  /// All final-layer outputs (n x out), ignoring the head. Used for argmax.
  Matrix batch_outputs(const Matrix& xs) const;
  std::size_t predict_class(const Vector& x) const;

  /// Exact Hessian by forward-over-reverse Hessian-vector products,
  /// symmetrized. Rejects ReLU layers.
  Matrix hessian_smooth(const Vector& x) const;
  /// The d HVP columns before symmetrization.
  Matrix hessian_columns(const Vector& x) const;

 private:
  std::size_t active_layer_count() const;
  void check_input(const Matrix& xs) const;

  std::size_t input_dim_ = 0;
  std::vector<Layer> layers_;
  Head head_;
};

/// Every ReLU replaced by SoftPlus(beta); other layers untouched.
Network softplus_clone(const Network& net, double beta);
/// Every ReLU replaced by Swish(beta).
Network swish_clone(const Network& net, double beta);

/// Fully connected ReLU network d -> widths... -> outputs, identity output
/// layer, weights uniform in +-sqrt(6/fan_in), biases in +-1/sqrt(fan_in).
Network make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden_widths,
                 std::size_t outputs, std::uint64_t seed);

/// Type-erased differentiable scalar function, the oracle interface used by
/// the estimator, P_MSE and the oracles. Batches are n x d.
struct ScalarFunction {
  std::size_t dim = 0;
  std::function<Vector(const Matrix&)> values;
  std::function<Matrix(const Matrix&)> gradients;
};

/// Wraps a copy of the network.
ScalarFunction as_function(const Network& net);

}  // namespace smoothhess
