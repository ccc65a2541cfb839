#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sslada/autodiff.hpp"
#include "sslada/datasets.hpp"
#include "sslada/network.hpp"
#include "sslada/optim.hpp"
#include "sslada/tensor.hpp"

namespace sslada::adapt {

/// Rows with integer class labels and per-row loss weights.
struct LabeledBatch {
  Tensor x;
  std::vector<int> labels;
  std::vector<double> weights;

  static LabeledBatch from_pool(const data::Pool& pool);
  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
};

/// Backbone (G_f) plus a single affine head (G_y) to two class logits.
/// `trainable_backbone_layers` counts layers from the top that adaptation may
/// update; it is ignored (treated as 0) while `backbone_frozen` is set.
struct ProbeModel {
  Network backbone;
  Network head;
  bool backbone_frozen = true;
  std::size_t trainable_backbone_layers = 0;

  /// Index of the first backbone layer that receives gradients.
  std::size_t first_trainable() const;
  std::vector<Tensor*> trainable_backbone_parameters();

  Tensor features(const Tensor& x) const { return backbone.predict(x); }
  Tensor logits(const Tensor& x) const { return head.predict(features(x)); }
  Tensor probabilities(const Tensor& x) const { return softmax_rows(logits(x)); }
  /// P(class 1) per row.
  std::vector<double> positive_scores(const Tensor& x) const;
};

ProbeModel make_probe(Network backbone, std::uint64_t seed);

/// Adds the domain classifier (G_d) behind a gradient-reversal gate.
/// Domain logit 1 is "source", logit 0 is "target".
struct DannModel {
  ProbeModel probe;
  Network domain_head;
  GrlGate grl;

  /// Probability of the source domain per row.
  std::vector<double> domain_prob_source(const Tensor& x) const;
};

DannModel make_dann(ProbeModel probe, std::size_t hidden_dim, std::uint64_t seed);

struct AdaptLosses {
  double l_c = 0.0;
  double l_d = 0.0;
  /// Coefficient of l_d in `total`: domain weight for DANN, -lambda_ent for
  /// MME (the classifier maximizes target entropy), 0 for fine-tuning.
  double weight = 0.0;
  double total = 0.0;
};

struct ProbeConfig {
  std::size_t max_epochs = 100;
  std::size_t batch_size = 128;
  double lr = 0.05;
  OptimizerConfig optimizer;
  /// Stop once the epoch loss improves by less than `plateau_tol` for
  /// `patience` consecutive epochs.
  double plateau_tol = 1e-5;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  ProbeModel model;
  std::vector<double> loss_curve;
};

/// Trains only the head on frozen backbone features of labeled source data.
/// Zero epochs return the initialized head. Throws ArgumentError unless both
/// classes are present.
ProbeResult linear_probe(Network backbone, const data::Pool& source, const ProbeConfig& cfg);

/// Per-term weights of the DANN objective.
struct DannWeights {
  double class_weight = 1.0;
  double domain_weight = 1.0;
};

struct DannGradients {
  AdaptLosses losses;
  GradientMap grads;
};

/// Losses and gradients of l_c + domain_weight * l_d without stepping.
/// l_c covers source rows and labeled target rows; l_d classifies source vs
/// unlabeled target rows through the gradient-reversal gate at `lambda`.
DannGradients dann_gradients(DannModel& model, const LabeledBatch& source,
                             const Tensor& target_unlabeled, const LabeledBatch* labeled_target,
                             double lambda, DannWeights weights = {});

/// One optimizer step on the DANN objective. Throws ArgumentError when
/// lambda < 0 or a batch is empty.
AdaptLosses dann_step(DannModel& model, Optimizer& opt, const LabeledBatch& source,
                      const Tensor& target_unlabeled, const LabeledBatch* labeled_target,
                      double lambda, double domain_weight = 1.0);

/// Minimax-entropy step: the head minimizes l_c - lambda_ent * H(target)
/// while the features, reached through a reversal gate, minimize
/// l_c + lambda_ent * H(target). H is reported in `l_d`.
AdaptLosses mme_step(ProbeModel& model, Optimizer& opt, const LabeledBatch& source,
                     const Tensor& target_unlabeled, const LabeledBatch* labeled_target,
                     double lambda_ent);

/// Supervised cross-entropy step on `batch` (labeled target, optionally
/// mixed with source rows). Throws ArgumentError on an empty batch.
AdaptLosses finetune_step(ProbeModel& model, Optimizer& opt, const LabeledBatch& batch);

/// Weighted mean cross-entropy of the model on `batch` (no step).
double batch_loss(const ProbeModel& model, const LabeledBatch& batch);

/// Trains only the domain head to separate source from target features.
/// Returns the final domain loss.
double fit_domain_head(DannModel& model, const Tensor& source_x, const Tensor& target_x,
                       std::size_t steps, std::size_t batch_size, double lr, std::uint64_t seed);

enum class Method { finetune, dann, mme };

Method parse_method(const std::string& name);
const char* method_name(Method m);

struct AdaptConfig {
  std::size_t steps = 100;
  std::size_t batch_size = 64;
  double lr = 0.01;
  /// Multiplier on `lr` for trainable backbone layers.
  double backbone_lr_scale = 0.1;
  double domain_lr = 0.01;
  OptimizerConfig optimizer;
  /// Layers from the top of the backbone that DANN and MME may update.
  /// Fine-tuning always keeps the backbone frozen unless `finetune_backbone`.
  std::size_t adversarial_trainable_layers = 1;
  bool finetune_backbone = false;
  bool mix_source = true;
  /// Loss weight of each labeled target row relative to a source row. The
  /// few labeled target rows are resampled to a full batch every step, so at
  /// 1.0 they dominate and overfit.
  double target_weight = 0.1;
  double domain_weight = 1.0;
  double lambda_max = 1.0;
  double lambda_ent = 0.1;
  std::size_t domain_hidden = 32;
  std::size_t domain_fit_steps = 200;
};

/// GRL coefficient after `progress` in [0, 1] of a round:
/// lambda_max * (2 / (1 + exp(-10 progress)) - 1).
double grl_schedule(double progress, double lambda_max);

/// Data available to one adaptation round.
struct AdaptData {
  const data::Pool* source = nullptr;            // labeled
  const data::Pool* target_unlabeled = nullptr;  // query pool remainder
  const data::Pool* target_labeled = nullptr;    // committed labels so far
};

/// Runs `cfg.steps` steps of `method`. Fine-tuning with no labeled target
/// samples is a no-op. Labeled target rows are oversampled to the size of the
/// source batch. Returns the loss of the last step.
AdaptLosses run_adaptation(Method method, DannModel& model, const AdaptData& data,
                           const AdaptConfig& cfg, std::uint64_t seed);

}  // namespace sslada::adapt
