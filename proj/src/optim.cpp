#include "sslada/optim.hpp"

#include <cmath>

#include "sslada/error.hpp"

namespace sslada {

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
              std::span<Tensor> velocity, double lr, double momentum) {
  if (!(lr > 0.0)) throw ArgumentError("sgd_step: learning rate must be positive");
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw DimensionError("sgd_step: params, grads and velocity counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    Tensor& v = velocity[i];
    if (!p.same_shape(g) || !p.same_shape(v)) {
      throw DimensionError("sgd_step: shape mismatch " + shape_string(p.shape()) + " vs " +
                           shape_string(g.shape()));
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum * v[j] + g[j];
      p[j] -= lr * v[j];
    }
  }
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ArgumentError("unknown optimizer '" + name + "'");
}

const char* optimizer_kind_name(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "sgd";
}

void Optimizer::add_group(std::vector<Tensor*> params, double lr) {
  if (!(lr >= 0.0)) throw ArgumentError("group learning rate must be non-negative");
  Group g;
  for (Tensor* p : params) {
    g.state_a.emplace_back(p->shape());
    g.state_b.emplace_back(p->shape());
  }
  g.params = std::move(params);
  g.lr = lr;
  groups_.push_back(std::move(g));
}

void Sgd::step(const GradientMap& grads, double lr_factor) {
  for (Group& group : groups_) {
    const double lr = group.lr * lr_factor;
    if (!(lr > 0.0)) continue;
    for (std::size_t i = 0; i < group.params.size(); ++i) {
      Tensor* p = group.params[i];
      const Tensor* g = grads.find(p);
      if (g == nullptr) continue;
      if (weight_decay_ == 0.0) {
        sgd_step({&p, 1}, {g, 1}, {&group.state_a[i], 1}, lr, momentum_);
      } else {
        Tensor decayed = *g;
        for (std::size_t j = 0; j < decayed.size(); ++j) decayed[j] += weight_decay_ * (*p)[j];
        sgd_step({&p, 1}, {&decayed, 1}, {&group.state_a[i], 1}, lr, momentum_);
      }
    }
  }
}

void Adam::step(const GradientMap& grads, double lr_factor) {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (Group& group : groups_) {
    const double lr = group.lr * lr_factor;
    if (!(lr > 0.0)) continue;
    for (std::size_t i = 0; i < group.params.size(); ++i) {
      Tensor& p = *group.params[i];
      const Tensor* g = grads.find(&p);
      if (g == nullptr) continue;
      if (!p.same_shape(*g)) throw DimensionError("adam: gradient shape mismatch");
      Tensor& m = group.state_a[i];
      Tensor& v = group.state_b[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = (*g)[j];
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
        const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + epsilon_);
        // decoupled decay (AdamW)
        p[j] -= lr * (update + weight_decay_ * p[j]);
      }
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg) {
  if (cfg.kind == OptimizerKind::adam) {
    return std::make_unique<Adam>(cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay);
  }
  return std::make_unique<Sgd>(cfg.momentum, cfg.weight_decay);
}

}  // namespace sslada
