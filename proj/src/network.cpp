#include "sslada/network.hpp"

#include <cmath>
#include <random>

#include "sslada/error.hpp"

namespace sslada {
namespace {

void apply_activation(Tensor& t, Activation a) {
  switch (a) {
    case Activation::identity:
      break;
    case Activation::relu:
      for (double& v : t.values()) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::tanh:
      for (double& v : t.values()) v = std::tanh(v);
      break;
    case Activation::softmax:
      t = softmax_rows(t);
      break;
  }
}

}  // namespace

Network::Network(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const DenseLayer& l = layers_[i];
    if (l.weight.rank() != 2 || l.bias.size() != l.weight.cols()) {
      throw DimensionError("layer " + std::to_string(i) + ": weight/bias shapes disagree");
    }
    if (i > 0 && layers_[i - 1].output_dim() != l.input_dim()) {
      throw DimensionError("layer " + std::to_string(i) + ": input dim " +
                           std::to_string(l.input_dim()) + " does not chain with " +
                           std::to_string(layers_[i - 1].output_dim()));
    }
  }
}

Network Network::he_uniform(const std::vector<std::size_t>& dims,
                            const std::vector<Activation>& activations, std::uint64_t seed) {
  if (dims.size() != activations.size() + 1 || activations.empty()) {
    throw ArgumentError("he_uniform: need one activation per layer");
  }
  std::mt19937_64 rng(seed);
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i < activations.size(); ++i) {
    if (dims[i] == 0 || dims[i + 1] == 0) throw ArgumentError("layer dims must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(dims[i]));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer;
    layer.weight = Tensor::matrix(dims[i], dims[i + 1]);
    for (double& w : layer.weight.values()) w = dist(rng);
    layer.bias = Tensor({dims[i + 1]}, 0.0);
    layer.activation = activations[i];
    layers.push_back(std::move(layer));
  }
  return Network(std::move(layers));
}

std::size_t Network::input_dim() const {
  return layers_.empty() ? 0 : layers_.front().input_dim();
}

std::size_t Network::output_dim() const {
  return layers_.empty() ? 0 : layers_.back().output_dim();
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const DenseLayer& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

void Network::check_input(const Tensor& batch) const {
  if (layers_.empty()) throw StateError("network has no layers");
  if (batch.rank() != 2 || batch.cols() != input_dim()) {
    throw DimensionError("network input " + shape_string(batch.shape()) +
                         " does not match input dim " + std::to_string(input_dim()));
  }
}

Tensor Network::predict(const Tensor& batch) const {
  check_input(batch);
  return predict_layers(batch, 0, layers_.size());
}

Tensor Network::predict_layers(const Tensor& batch, std::size_t begin, std::size_t end) const {
  if (begin > end || end > layers_.size()) throw ArgumentError("predict_layers: bad layer range");
  Tensor h = batch;
  for (std::size_t k = begin; k < end; ++k) {
    const DenseLayer& l = layers_[k];
    if (h.cols() != l.input_dim()) throw DimensionError("predict_layers: input width mismatch");
    Tensor z = matmul(h, l.weight);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      auto r = z.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] += l.bias[j];
    }
    apply_activation(z, l.activation);
    h = std::move(z);
  }
  require_finite(h, "network output");
  return h;
}

Var Network::forward(Tape& tape, Var input, std::size_t first_trainable) {
  check_input(input.value());
  return forward_layers(tape, input, 0, layers_.size(), first_trainable);
}

Var Network::forward_layers(Tape& tape, Var input, std::size_t begin, std::size_t end,
                            std::size_t first_trainable) {
  if (begin > end || end > layers_.size()) throw ArgumentError("forward_layers: bad layer range");
  Var h = input;
  for (std::size_t i = begin; i < end; ++i) {
    DenseLayer& l = layers_[i];
    if (h.value().cols() != l.input_dim()) throw DimensionError("forward_layers: input width mismatch");
    const bool trainable = i >= first_trainable;
    Var w = trainable ? tape.parameter(l.weight) : tape.constant(l.weight);
    Var b = trainable ? tape.parameter(l.bias) : tape.constant(l.bias);
    h = ad::activate(ad::add_bias(ad::matmul(h, w), b), l.activation);
  }
  require_finite(h.value(), "network output");
  return h;
}

Var Network::forward(Tape& tape, const Tensor& batch, std::size_t first_trainable) {
  return forward(tape, tape.constant(batch), first_trainable);
}

std::vector<Tensor*> Network::parameters(std::size_t first_layer) {
  std::vector<Tensor*> out;
  for (std::size_t i = first_layer; i < layers_.size(); ++i) {
    out.push_back(&layers_[i].weight);
    out.push_back(&layers_[i].bias);
  }
  return out;
}

std::vector<const Tensor*> Network::parameters(std::size_t first_layer) const {
  std::vector<const Tensor*> out;
  for (std::size_t i = first_layer; i < layers_.size(); ++i) {
    out.push_back(&layers_[i].weight);
    out.push_back(&layers_[i].bias);
  }
  return out;
}

bool Network::same_architecture(const Network& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i].weight.same_shape(other.layers_[i].weight) ||
        !layers_[i].bias.same_shape(other.layers_[i].bias) ||
        layers_[i].activation != other.layers_[i].activation) {
      return false;
    }
  }
  return true;
}

bool Network::bit_equal(const Network& other) const {
  if (!same_architecture(other)) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i].weight.bit_equal(other.layers_[i].weight) ||
        !layers_[i].bias.bit_equal(other.layers_[i].bias)) {
      return false;
    }
  }
  return true;
}

}  // namespace sslada
