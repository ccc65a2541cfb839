#include "sslada/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "sslada/error.hpp"

namespace sslada {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::softmax: return "softmax";
  }
  return "identity";
}

Activation parse_activation(const std::string& name) {
  if (name == "identity" || name == "linear") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "softmax") return Activation::softmax;
  throw ArgumentError("unknown activation '" + name + "'");
}

const Tensor& Var::value() const { return tape->value(id); }

const Tensor& GradientMap::at(const Tensor* param) const {
  auto it = grads_.find(param);
  if (it == grads_.end()) throw StateError("no gradient recorded for parameter");
  return it->second;
}

const Tensor* GradientMap::find(const Tensor* param) const {
  auto it = grads_.find(param);
  return it == grads_.end() ? nullptr : &it->second;
}

void GradientMap::accumulate(const Tensor* param, const Tensor& grad) {
  auto [it, inserted] = grads_.try_emplace(param, grad);
  if (inserted) return;
  if (!it->second.same_shape(grad)) throw DimensionError("gradient shape mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i) it->second[i] += grad[i];
}

Var Tape::constant(Tensor value) {
  if (consumed_) throw StateError("tape already consumed by backward");
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Tensor& param) {
  if (consumed_) throw StateError("tape already consumed by backward");
  if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) {
    return {this, it->second};
  }
  Node node;
  node.value = param;
  node.param = &param;
  node.needs_grad = true;
  nodes_.push_back(std::move(node));
  param_nodes_.emplace(&param, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  if (consumed_) throw StateError("tape already consumed by backward");
  Node node;
  node.value = std::move(value);
  node.needs_grad = std::any_of(parents.begin(), parents.end(),
                                [this](std::size_t p) { return nodes_[p].needs_grad; });
  node.parents = std::move(parents);
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Node& node = nodes_[id];
  if (!node.needs_grad) return;
  if (node.grad.empty() && !node.value.empty()) {
    node.grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) node.grad[i] += g[i];
}

void Tape::accumulate_scaled(std::size_t id, const Tensor& g, double scale) {
  Node& node = nodes_[id];
  if (!node.needs_grad) return;
  if (node.grad.empty()) node.grad = Tensor(node.value.shape());
  for (std::size_t i = 0; i < g.size(); ++i) node.grad[i] += scale * g[i];
}

GradientMap Tape::backward(Var loss) {
  if (consumed_) throw StateError("backward called twice on the same recorded forward");
  if (loss.tape != this) throw StateError("loss node belongs to another tape");
  if (nodes_[loss.id].value.size() != 1) throw DimensionError("backward requires a scalar loss");
  consumed_ = true;
  require_finite(nodes_[loss.id].value, "loss");

  if (nodes_[loss.id].needs_grad) {
    nodes_[loss.id].grad = Tensor(nodes_[loss.id].value.shape(), 1.0);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (!node.needs_grad || node.grad.empty() || !node.backward) continue;
      node.backward(*this, id);
    }
  }

  GradientMap grads;
  for (const auto& [param, id] : param_nodes_) {
    const Node& node = nodes_[id];
    grads.accumulate(param, node.grad.empty() ? Tensor(node.value.shape()) : node.grad);
  }
  return grads;
}

Var grl_apply(const GrlGate& gate, Var x) { return ad::gradient_reversal(x, gate.lambda); }

namespace ad {
namespace {

Tape& tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw StateError("operands recorded on different tapes");
  return *a.tape;
}

}  // namespace

Var matmul(Var x, Var w) {
  Tape& tape = tape_of(x, w);
  Tensor out = sslada::matmul(x.value(), w.value());
  const std::size_t xi = x.id, wi = w.id;
  return tape.record(std::move(out), {xi, wi}, [xi, wi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(xi)) t.accumulate(xi, matmul_a_bt(g, t.value(wi)));
    if (t.needs_grad(wi)) t.accumulate(wi, matmul_at_b(t.value(xi), g));
  });
}

Var add_bias(Var x, Var b) {
  Tape& tape = tape_of(x, b);
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (bv.size() != xv.cols()) throw DimensionError("add_bias: bias length mismatch");
  Tensor out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bv[j];
  }
  const std::size_t xi = x.id, bi = b.id;
  return tape.record(std::move(out), {xi, bi}, [xi, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(xi)) t.accumulate(xi, g);
    if (t.needs_grad(bi)) {
      Tensor gb(t.value(bi).shape());
      for (std::size_t i = 0; i < g.rows(); ++i) {
        auto r = g.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) gb[j] += r[j];
      }
      t.accumulate(bi, gb);
    }
  });
}

Var add(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  if (!a.value().same_shape(b.value())) throw DimensionError("add: shape mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ai = a.id, bi = b.id;
  return tape.record(std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    t.accumulate(ai, t.grad(self));
    t.accumulate(bi, t.grad(self));
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= factor;
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {xi}, [xi, factor](Tape& t, std::size_t self) {
    t.accumulate_scaled(xi, t.grad(self), factor);
  });
}

Var activate(Var x, Activation a) {
  const std::size_t xi = x.id;
  Tape& tape = *x.tape;
  switch (a) {
    case Activation::identity:
      return x;
    case Activation::relu: {
      Tensor out = x.value();
      for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
      return tape.record(std::move(out), {xi}, [xi](Tape& t, std::size_t self) {
        Tensor g = t.grad(self);
        const Tensor& in = t.value(xi);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (!(in[i] > 0.0)) g[i] = 0.0;
        }
        t.accumulate(xi, g);
      });
    }
    case Activation::tanh: {
      Tensor out = x.value();
      for (double& v : out.values()) v = std::tanh(v);
      return tape.record(std::move(out), {xi}, [xi](Tape& t, std::size_t self) {
        Tensor g = t.grad(self);
        const Tensor& y = t.value(self);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - y[i] * y[i];
        t.accumulate(xi, g);
      });
    }
    case Activation::softmax: {
      Tensor out = softmax_rows(x.value());
      return tape.record(std::move(out), {xi}, [xi](Tape& t, std::size_t self) {
        Tensor g = t.grad(self);
        const Tensor& p = t.value(self);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          auto gr = g.row(i);
          auto pr = p.row(i);
          double dot = 0.0;
          for (std::size_t j = 0; j < gr.size(); ++j) dot += gr[j] * pr[j];
          for (std::size_t j = 0; j < gr.size(); ++j) gr[j] = pr[j] * (gr[j] - dot);
        }
        t.accumulate(xi, g);
      });
    }
  }
  return x;
}

namespace {

/// Unit-normalizes `count` vectors of length `len` laid out with the given
/// strides; returns the norms used.
std::vector<double> normalize_strided(Tensor& t, std::size_t count, std::size_t len,
                                      std::size_t outer, std::size_t inner) {
  std::vector<double> norms(count);
  for (std::size_t a = 0; a < count; ++a) {
    double ss = 0.0;
    for (std::size_t b = 0; b < len; ++b) ss += t[a * outer + b * inner] * t[a * outer + b * inner];
    norms[a] = std::max(std::sqrt(ss), 1e-12);
    for (std::size_t b = 0; b < len; ++b) t[a * outer + b * inner] /= norms[a];
  }
  return norms;
}

/// g_x = (g - y (y . g)) / norm for each normalized vector.
Tensor normalize_backward(const Tensor& g, const Tensor& y, const std::vector<double>& norms,
                          std::size_t len, std::size_t outer, std::size_t inner) {
  Tensor out(g.shape());
  for (std::size_t a = 0; a < norms.size(); ++a) {
    double dot = 0.0;
    for (std::size_t b = 0; b < len; ++b) dot += y[a * outer + b * inner] * g[a * outer + b * inner];
    for (std::size_t b = 0; b < len; ++b) {
      const std::size_t k = a * outer + b * inner;
      out[k] = (g[k] - y[k] * dot) / norms[a];
    }
  }
  return out;
}

}  // namespace

Var l2_normalize_rows(Var x) {
  Tensor out = x.value();
  const std::size_t n = out.rows(), m = out.cols();
  auto norms = normalize_strided(out, n, m, m, 1);
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {xi}, [xi, norms, m](Tape& t, std::size_t self) {
    t.accumulate(xi, normalize_backward(t.grad(self), t.value(self), norms, m, m, 1));
  });
}

Var normalize_columns(Var w) {
  Tensor out = w.value();
  const std::size_t n = out.rows(), m = out.cols();
  auto norms = normalize_strided(out, m, n, 1, m);
  const std::size_t wi = w.id;
  return w.tape->record(std::move(out), {wi}, [wi, norms, n, m](Tape& t, std::size_t self) {
    t.accumulate(wi, normalize_backward(t.grad(self), t.value(self), norms, n, 1, m));
  });
}

Var gradient_reversal(Var x, double lambda) {
  if (lambda < 0.0) throw ArgumentError("gradient reversal lambda must be non-negative");
  const std::size_t xi = x.id;
  return x.tape->record(x.value(), {xi}, [xi, lambda](Tape& t, std::size_t self) {
    Tensor g = t.grad(self);
    for (double& v : g.values()) v = -lambda * v;
    t.accumulate(xi, g);
  });
}

Var cross_entropy(Var logits, std::span<const int> labels, std::span<const double> weights) {
  const Tensor& z = logits.value();
  const std::size_t n = z.rows(), k = z.cols();
  if (labels.size() != n || weights.size() != n) {
    throw DimensionError("cross_entropy: label/weight count does not match batch");
  }
  Tensor probs = softmax_rows(z);
  double weight_sum = 0.0;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == 0.0) continue;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ArgumentError("cross_entropy: label out of range");
    }
    // log-softmax evaluated directly keeps confident rows finite
    auto r = z.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double lse = 0.0;
    for (double v : r) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    loss += weights[i] * (lse - r[static_cast<std::size_t>(labels[i])]);
    weight_sum += weights[i];
  }
  if (weight_sum <= 0.0) throw ArgumentError("cross_entropy: no weighted rows");
  loss /= weight_sum;
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<double> w(weights.begin(), weights.end());
  const std::size_t zi = logits.id;
  return logits.tape->record(
      Tensor::scalar(loss), {zi},
      [zi, probs = std::move(probs), lab = std::move(lab), w = std::move(w), weight_sum](
          Tape& t, std::size_t self) {
        const double up = t.grad(self)[0];
        Tensor g(probs.shape());
        for (std::size_t i = 0; i < probs.rows(); ++i) {
          if (w[i] == 0.0) continue;
          const double c = up * w[i] / weight_sum;
          auto pr = probs.row(i);
          auto gr = g.row(i);
          for (std::size_t j = 0; j < pr.size(); ++j) gr[j] = c * pr[j];
          gr[static_cast<std::size_t>(lab[i])] -= c;
        }
        t.accumulate(zi, g);
      });
}

Var mean_entropy(Var logits, std::span<const double> weights) {
  const Tensor& z = logits.value();
  const std::size_t n = z.rows();
  if (weights.size() != n) throw DimensionError("mean_entropy: weight count mismatch");
  Tensor probs = softmax_rows(z);
  std::vector<double> row_entropy(n, 0.0);
  double weight_sum = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double h = 0.0;
    for (double p : probs.row(i)) {
      if (p > 0.0) h -= p * std::log(p);
    }
    row_entropy[i] = h;
    total += weights[i] * h;
    weight_sum += weights[i];
  }
  if (weight_sum <= 0.0) throw ArgumentError("mean_entropy: no weighted rows");
  total /= weight_sum;
  std::vector<double> w(weights.begin(), weights.end());
  const std::size_t zi = logits.id;
  return logits.tape->record(
      Tensor::scalar(total), {zi},
      [zi, probs = std::move(probs), row_entropy = std::move(row_entropy), w = std::move(w),
       weight_sum](Tape& t, std::size_t self) {
        const double up = t.grad(self)[0];
        Tensor g(probs.shape());
        for (std::size_t i = 0; i < probs.rows(); ++i) {
          if (w[i] == 0.0) continue;
          const double c = up * w[i] / weight_sum;
          auto pr = probs.row(i);
          auto gr = g.row(i);
          for (std::size_t j = 0; j < pr.size(); ++j) {
            const double lp = pr[j] > 0.0 ? std::log(pr[j]) : 0.0;
            gr[j] = -c * pr[j] * (lp + row_entropy[i]);
          }
        }
        t.accumulate(zi, g);
      });
}

Var distillation_loss(Var student_logits, const Tensor& teacher_probs, std::size_t batch,
                      std::size_t n_global, std::size_t n_views, double t_student) {
  if (!(t_student > 0.0)) throw NumericError("student temperature must be positive");
  const Tensor& s = student_logits.value();
  if (s.rows() != batch * n_views || teacher_probs.rows() != batch * n_global ||
      s.cols() != teacher_probs.cols()) {
    throw DimensionError("distillation_loss: view blocks do not match batch layout");
  }
  const std::size_t k = s.cols();
  std::size_t pairs = 0;
  for (std::size_t v = 0; v < n_views; ++v) pairs += v < n_global ? n_global - 1 : n_global;
  if (pairs == 0) throw ArgumentError("distillation_loss: no (teacher, student) view pairs");

  Tensor ps = softmax_rows(s, t_student);
  Tensor log_ps(s.shape());
  for (std::size_t r = 0; r < s.rows(); ++r) {
    auto z = s.row(r);
    const double m = *std::max_element(z.begin(), z.end()) / t_student;
    double sum = 0.0;
    for (double v : z) sum += std::exp(v / t_student - m);
    const double lse = m + std::log(sum);
    auto out = log_ps.row(r);
    for (std::size_t j = 0; j < k; ++j) out[j] = z[j] / t_student - lse;
  }
  const double norm = 1.0 / static_cast<double>(pairs * batch);
  double loss = 0.0;
  for (std::size_t v = 0; v < n_views; ++v) {
    for (std::size_t tv = 0; tv < n_global; ++tv) {
      if (tv == v) continue;
      for (std::size_t i = 0; i < batch; ++i) {
        auto pt = teacher_probs.row(tv * batch + i);
        auto lp = log_ps.row(v * batch + i);
        double ce = 0.0;
        for (std::size_t j = 0; j < k; ++j) ce -= pt[j] * lp[j];
        loss += ce;
      }
    }
  }
  loss *= norm;

  const std::size_t si = student_logits.id;
  return student_logits.tape->record(
      Tensor::scalar(loss), {si},
      [si, ps = std::move(ps), teacher_probs, batch, n_global, n_views, t_student, norm](
          Tape& t, std::size_t self) {
        const double c = t.grad(self)[0] * norm / t_student;
        Tensor g(ps.shape());
        for (std::size_t v = 0; v < n_views; ++v) {
          const double paired = static_cast<double>(v < n_global ? n_global - 1 : n_global);
          for (std::size_t i = 0; i < batch; ++i) {
            auto gr = g.row(v * batch + i);
            auto pr = ps.row(v * batch + i);
            for (std::size_t j = 0; j < gr.size(); ++j) gr[j] = paired * pr[j];
            for (std::size_t tv = 0; tv < n_global; ++tv) {
              if (tv == v) continue;
              auto pt = teacher_probs.row(tv * batch + i);
              for (std::size_t j = 0; j < gr.size(); ++j) gr[j] -= pt[j];
            }
            for (double& x : gr) x *= c;
          }
        }
        t.accumulate(si, g);
      });
}

}  // namespace ad
}  // namespace sslada
