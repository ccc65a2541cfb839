#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "sslada/autodiff.hpp"
#include "sslada/network.hpp"
#include "sslada/optim.hpp"
#include "sslada/rng.hpp"
#include "sslada/tensor.hpp"

namespace sslada::dino {

/// Multi-view augmentation for feature vectors. A view keeps one contiguous
/// coordinate window whose length is a `scale` fraction of the vector and
/// zeroes the rest, then adds Gaussian noise inside the window. Local views
/// additionally zero a `mask_fraction` of their coordinates. Only global
/// views are shown to the teacher.
struct ViewConfig {
  std::size_t n_global = 2;
  std::size_t n_local = 4;
  std::pair<double, double> global_scale{0.4, 1.0};
  std::pair<double, double> local_scale{0.05, 0.4};
  double noise_std = 0.05;
  double mask_fraction = 0.0;

  void validate() const;
  std::size_t n_views() const { return n_global + n_local; }
};

struct Views {
  std::vector<std::vector<double>> global;
  std::vector<std::vector<double>> local;
};

Views make_views(std::span<const double> x, const ViewConfig& cfg, Rng& rng);

struct ProjectorSpec {
  std::size_t hidden_dim = 256;
  std::size_t bottleneck_dim = 64;
  std::size_t output_dim = 256;
};

/// Projection head: hidden ReLU layer, linear bottleneck, L2 normalization,
/// then a bias-free prototype layer whose weight columns are normalized, so
/// every logit is a cosine in [-1, 1]. The prototype layer is the last layer
/// of the network; its bias is never used.
Network make_projector(std::size_t feature_dim, const ProjectorSpec& spec, std::uint64_t seed);
Tensor projector_logits(const Network& projector, const Tensor& features);
Var projector_forward(Network& projector, Tape& tape, Var features);

/// Backbone (G_f) followed by the projection head.
struct DinoModel {
  Network backbone;
  Network projector;

  Tensor logits(const Tensor& batch) const {
    return projector_logits(projector, backbone.predict(batch));
  }
};

/// Student/teacher pair with the teacher-side center.
struct DistillState {
  DinoModel student;
  DinoModel teacher;
  Tensor center;
  double t_student = 0.1;
  double t_teacher = 0.04;
  double ema_momentum = 0.996;
  double center_momentum = 0.9;
  bool centering = true;

  /// Checks architecture parity, temperature ordering and center size.
  void validate() const;
  std::size_t output_dim() const { return student.projector.output_dim(); }
};

/// Teacher initialized as an exact copy of the student, center at zero.
DistillState make_distill_state(Network backbone, const ProjectorSpec& spec, std::uint64_t seed);

/// softmax((teacher_logits - center) / t_teacher) row-wise (center skipped when
/// centering is disabled).
Tensor teacher_probabilities(const DistillState& state, const Tensor& teacher_logits);

/// Self-distillation loss over (teacher global view, student view) pairs.
/// `teacher_logits` holds one [batch, K] tensor per global view; `student_logits`
/// one per view with the global views first, so student view v < n_global is
/// the same input as teacher view v and that pair is skipped.
double dino_loss(const DistillState& state, std::span<const Tensor> teacher_logits,
                 std::span<const Tensor> student_logits);

/// center <- m * center + (1 - m) * mean(teacher_logits rows)
Tensor update_center(DistillState& state, const Tensor& teacher_logits);

/// Teacher parameters <- m * teacher + (1 - m) * student.
void ema_update(DistillState& state);

/// Mean entropy of the teacher distribution over `probe` inputs.
double teacher_entropy(const DistillState& state, const Tensor& probe);

/// H(mean P_t) - mean H(P_t) over `probe`: how much the teacher distribution
/// varies across inputs. Near 0 when every input maps to the same output,
/// whether that output is peaked or uniform.
double teacher_diversity(const DistillState& state, const Tensor& probe);

/// True when any entry of `entropy_trace` is below `floor`.
bool collapse_detected(std::span<const double> entropy_trace, double floor);

/// A batch expanded into views, laid out view-major: block v holds view v of
/// every sample. Teacher input is the first n_global blocks.
struct BatchViews {
  Tensor student_input;
  Tensor teacher_input;
  std::size_t batch = 0;
  std::size_t n_global = 0;
  std::size_t n_views = 0;
};

/// Per-sample view streams are derive_seed(seed, {sample_key[i]}).
BatchViews make_batch_views(const Tensor& batch, std::span<const std::uint64_t> sample_keys,
                            const ViewConfig& cfg, std::uint64_t seed);

struct StepResult {
  double loss = 0.0;
  GradientMap grads;
  Tensor teacher_logits;
};

/// Forward/backward of the student on one view batch. Applies `opt` (if
/// given) with `lr_factor`, then the EMA teacher update and the center update.
/// With `freeze_backbone`, backbone layers are recorded as constants.
StepResult distill_step(DistillState& state, const BatchViews& views, Optimizer* opt,
                        bool freeze_backbone, double lr_factor = 1.0);

enum class LrSchedule { constant, one_cycle };

struct StageConfig {
  std::size_t epochs = 0;
  double backbone_lr = 0.0;
  double projector_lr = 1e-3;
  bool freeze_backbone = true;
  LrSchedule schedule = LrSchedule::constant;
};

struct SslConfig {
  ViewConfig views;
  ProjectorSpec projector;
  double t_student = 0.1;
  double t_teacher = 0.04;
  double ema_momentum = 0.996;
  double center_momentum = 0.9;
  bool centering = true;
  StageConfig stage1{30, 0.0, 1e-3, true, LrSchedule::constant};
  StageConfig stage2{25, 1e-4, 5e-4, false, LrSchedule::one_cycle};
  std::size_t batch_size = 128;
  /// Samples drawn per epoch (0 = the whole pool).
  std::size_t samples_per_epoch = 0;
  OptimizerConfig optimizer{OptimizerKind::adam};
  double warmup_fraction = 0.3;
  std::size_t probe_size = 256;
  double collapse_floor_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct SslResult {
  /// Teacher backbone; the projector is discarded.
  Network backbone;
  DistillState state;
  std::vector<double> stage1_loss;
  std::vector<double> stage2_loss;
  /// Loss on a fixed probe batch with fixed views, before/after each stage.
  double probe_loss_stage1_start = 0.0;
  double probe_loss_stage2_start = 0.0;
  double probe_loss_end = 0.0;
  /// Teacher entropy on the probe batch: initial value then one per epoch.
  std::vector<double> teacher_entropy;
  /// teacher_diversity on the probe batch, same cadence as teacher_entropy.
  std::vector<double> teacher_diversity;
  /// collapse_floor_fraction * ln(K). The run is flagged when the entropy
  /// trace dips below it (collapse onto one output) or the final diversity
  /// is below it (every input gets the same distribution).
  double collapse_floor = 0.0;
  bool collapse_flagged = false;
};

using EpochCallback = std::function<void(int stage, std::size_t epoch, double loss)>;

/// Two-stage self-distillation: stage 1 trains the projector with the
/// backbone frozen, stage 2 trains everything with per-group learning rates.
/// Throws ArgumentError on an empty pool and NumericError when the loss
/// diverges.
SslResult pretrain_ssl(const Tensor& pool, Network backbone, const SslConfig& cfg,
                       const EpochCallback& on_epoch = {});

}  // namespace sslada::dino
