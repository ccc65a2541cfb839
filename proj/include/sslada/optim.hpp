#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sslada/autodiff.hpp"
#include "sslada/tensor.hpp"

namespace sslada {

/// In-place SGD with heavy-ball momentum:
///   v <- momentum * v + g;  p <- p - lr * v
/// With momentum 0 this is vanilla SGD. `velocity` holds one tensor per
/// parameter and is updated in place.
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
              std::span<Tensor> velocity, double lr, double momentum);

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer_kind(const std::string& name);
const char* optimizer_kind_name(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

/// Parameter groups with their own base learning rate. `step` scales every
/// group's rate by `lr_factor`, which is how a schedule drives all groups.
class Optimizer {
 public:
  virtual ~Optimizer() = default;

  void add_group(std::vector<Tensor*> params, double lr);
  /// Parameters without an entry in `grads` are left untouched.
  virtual void step(const GradientMap& grads, double lr_factor = 1.0) = 0;

  std::size_t group_count() const { return groups_.size(); }
  double group_lr(std::size_t i) const { return groups_[i].lr; }

 protected:
  struct Group {
    std::vector<Tensor*> params;
    double lr = 0.0;
    std::vector<Tensor> state_a;
    std::vector<Tensor> state_b;
  };
  std::vector<Group> groups_;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double momentum = 0.9, double weight_decay = 0.0)
      : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(const GradientMap& grads, double lr_factor = 1.0) override;

 private:
  double momentum_;
  double weight_decay_;
};

class Adam final : public Optimizer {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8,
       double weight_decay = 0.0)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon), weight_decay_(weight_decay) {}
  void step(const GradientMap& grads, double lr_factor = 1.0) override;

 private:
  double beta1_, beta2_, epsilon_, weight_decay_;
  long steps_ = 0;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg);

}  // namespace sslada
