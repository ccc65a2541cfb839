#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sslada/tensor.hpp"

namespace sslada {

enum class Activation { identity, relu, tanh, softmax };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

/// Per-parameter gradients keyed by the address of the parameter tensor.
class GradientMap {
 public:
  bool contains(const Tensor* param) const { return grads_.count(param) != 0; }
  /// Throws StateError if the parameter has no entry.
  const Tensor& at(const Tensor* param) const;
  const Tensor* find(const Tensor* param) const;
  std::size_t size() const { return grads_.size(); }
  void accumulate(const Tensor* param, const Tensor& grad);

 private:
  std::unordered_map<const Tensor*, Tensor> grads_;
};

/// Reverse-mode tape. Nodes are appended in evaluation order so reverse id
/// order is a valid topological order for the backward sweep. A tape supports
/// exactly one backward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Var constant(Tensor value);
  /// Leaf bound to a trainable tensor. Binding the same tensor twice returns
  /// the same node so gradients accumulate.
  Var parameter(Tensor& param);
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  /// Upstream gradient of a node during the backward sweep.
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  void accumulate(std::size_t id, const Tensor& g);
  /// grad[id] += scale * g
  void accumulate_scaled(std::size_t id, const Tensor& g, double scale);

  /// Gradient of a scalar node with respect to every bound parameter.
  /// Parameters the loss does not depend on receive zero gradients.
  GradientMap backward(Var loss);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Tensor* param = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> param_nodes_;
  bool consumed_ = false;
};

/// Gradient-reversal coefficient. Forward is the identity; backward scales
/// the upstream gradient by -lambda.
struct GrlGate {
  double lambda = 1.0;
};

/// Records `x` through a gradient-reversal gate.
Var grl_apply(const GrlGate& gate, Var x);

namespace ad {

Var matmul(Var x, Var w);
/// x[n,m] + b[m] broadcast over rows.
Var add_bias(Var x, Var b);
Var add(Var a, Var b);
Var scale(Var x, double factor);
Var activate(Var x, Activation a);

/// Each row divided by its L2 norm (norm floored at 1e-12).
Var l2_normalize_rows(Var x);
/// Each column divided by its L2 norm (norm floored at 1e-12).
Var normalize_columns(Var w);

/// Identity forward; backward multiplies the upstream gradient by -lambda.
Var gradient_reversal(Var x, double lambda);

/// Weighted mean cross-entropy of row logits against integer labels:
/// sum_i w_i * CE_i / sum_i w_i. Rows with weight 0 are ignored.
Var cross_entropy(Var logits, std::span<const int> labels, std::span<const double> weights);

/// Weighted mean Shannon entropy of softmax(logits) per row.
Var mean_entropy(Var logits, std::span<const double> weights);

/// Self-distillation cross-entropy. `student_logits` holds n_views blocks of
/// `batch` rows (global views first); `teacher_probs` holds n_global blocks.
/// Mean over (teacher view t, student view v != t) pairs and batch rows of
/// -sum_k P_t log softmax(s_v / t_student).
Var distillation_loss(Var student_logits, const Tensor& teacher_probs, std::size_t batch,
                      std::size_t n_global, std::size_t n_views, double t_student);

}  // namespace ad
}  // namespace sslada
