#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sslada/autodiff.hpp"
#include "sslada/tensor.hpp"

namespace sslada {

/// Affine map followed by an elementwise (or row-softmax) activation.
/// `weight` is [in, out], `bias` is [out].
struct DenseLayer {
  Tensor weight;
  Tensor bias;
  Activation activation = Activation::identity;

  std::size_t input_dim() const { return weight.rows(); }
  std::size_t output_dim() const { return weight.cols(); }
};

/// A stack of dense layers. The parameter set is fixed at construction;
/// training mutates values in place.
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<DenseLayer> layers);

  /// He-uniform weights, zero biases. `dims` has one more entry than
  /// `activations`.
  static Network he_uniform(const std::vector<std::size_t>& dims,
                            const std::vector<Activation>& activations, std::uint64_t seed);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t depth() const { return layers_.size(); }
  std::size_t parameter_count() const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  /// Evaluates the network without recording anything.
  Tensor predict(const Tensor& batch) const;
  /// Layers [begin, end) only.
  Tensor predict_layers(const Tensor& batch, std::size_t begin, std::size_t end) const;

  /// Records the forward pass on `tape`. Layers below `first_trainable` are
  /// recorded as constants and receive no gradient.
  Var forward(Tape& tape, Var input, std::size_t first_trainable = 0);
  Var forward(Tape& tape, const Tensor& batch, std::size_t first_trainable = 0);
  Var forward_layers(Tape& tape, Var input, std::size_t begin, std::size_t end,
                     std::size_t first_trainable = 0);

  /// Trainable tensors in layer order (weight, bias, weight, bias, ...),
  /// optionally only from layer `first_layer` upwards.
  std::vector<Tensor*> parameters(std::size_t first_layer = 0);
  std::vector<const Tensor*> parameters(std::size_t first_layer = 0) const;

  bool same_architecture(const Network& other) const;
  /// Bitwise comparison of every parameter.
  bool bit_equal(const Network& other) const;

 private:
  void check_input(const Tensor& batch) const;

  std::vector<DenseLayer> layers_;
};

}  // namespace sslada
