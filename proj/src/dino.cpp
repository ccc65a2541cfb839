#include "sslada/dino.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sslada/error.hpp"
#include "sslada/schedule.hpp"

namespace sslada::dino {
namespace {

void check_scale(const std::pair<double, double>& s, const char* name) {
  if (!(s.first > 0.0 && s.first <= s.second && s.second <= 1.0)) {
    throw ArgumentError(std::string(name) + " must satisfy 0 < lo <= hi <= 1");
  }
}

double draw_scale(const std::pair<double, double>& s, Rng& rng) {
  if (s.first == s.second) return s.first;
  return std::uniform_real_distribution<double>(s.first, s.second)(rng);
}

std::vector<double> window_view(std::span<const double> x, double scale, double noise_std,
                                Rng& rng) {
  const std::size_t d = x.size();
  std::vector<double> v(d, 0.0);
  if (d == 0) return v;
  const auto len = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(scale * static_cast<double>(d))), 1, d);
  const std::size_t start =
      len == d ? 0 : std::uniform_int_distribution<std::size_t>(0, d - len)(rng);
  std::normal_distribution<double> noise(0.0, noise_std > 0.0 ? noise_std : 1.0);
  for (std::size_t j = start; j < start + len; ++j) {
    v[j] = x[j];
    if (noise_std > 0.0) v[j] += noise(rng);
  }
  return v;
}

double cross_entropy_rows(const Tensor& p_teacher, const Tensor& p_student) {
  double total = 0.0;
  for (std::size_t i = 0; i < p_teacher.rows(); ++i) {
    auto pt = p_teacher.row(i);
    auto ps = p_student.row(i);
    for (std::size_t j = 0; j < pt.size(); ++j) total -= pt[j] * std::log(std::max(ps[j], 1e-12));
  }
  return total;
}

void blend_into(Tensor& target, const Tensor& source, double momentum) {
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double t = target[i];
    const double s = source[i];
    const double v = momentum * t + (1.0 - momentum) * s;
    target[i] = std::clamp(v, std::min(t, s), std::max(t, s));
  }
}

void blend_network(Network& target, const Network& source, double momentum) {
  auto& tl = target.layers();
  const auto& sl = source.layers();
  for (std::size_t i = 0; i < tl.size(); ++i) {
    blend_into(tl[i].weight, sl[i].weight, momentum);
    blend_into(tl[i].bias, sl[i].bias, momentum);
  }
}

/// Loss of the current student against the current teacher on fixed views.
double view_loss(const DistillState& state, const BatchViews& views) {
  const Tensor t_logits = state.teacher.logits(views.teacher_input);
  const Tensor s_logits = state.student.logits(views.student_input);
  std::vector<Tensor> teacher, student;
  for (std::size_t v = 0; v < views.n_global; ++v) {
    teacher.push_back(slice_rows(t_logits, v * views.batch, (v + 1) * views.batch));
  }
  for (std::size_t v = 0; v < views.n_views; ++v) {
    student.push_back(slice_rows(s_logits, v * views.batch, (v + 1) * views.batch));
  }
  return dino_loss(state, teacher, student);
}

}  // namespace

void ViewConfig::validate() const {
  if (n_global < 2) throw ArgumentError("view config: n_global must be at least 2");
  check_scale(global_scale, "global_scale");
  check_scale(local_scale, "local_scale");
  if (!(noise_std >= 0.0)) throw ArgumentError("view config: noise_std must be non-negative");
  if (!(mask_fraction >= 0.0 && mask_fraction <= 1.0)) {
    throw ArgumentError("view config: mask_fraction must lie in [0, 1]");
  }
}

Views make_views(std::span<const double> x, const ViewConfig& cfg, Rng& rng) {
  cfg.validate();
  Views views;
  for (std::size_t v = 0; v < cfg.n_global; ++v) {
    views.global.push_back(window_view(x, draw_scale(cfg.global_scale, rng), cfg.noise_std, rng));
  }
  const std::size_t d = x.size();
  const auto n_masked = static_cast<std::size_t>(std::lround(cfg.mask_fraction * static_cast<double>(d)));
  std::vector<std::size_t> order(d);
  for (std::size_t v = 0; v < cfg.n_local; ++v) {
    auto view = window_view(x, draw_scale(cfg.local_scale, rng), cfg.noise_std, rng);
    if (n_masked > 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t j = 0; j < n_masked; ++j) view[order[j]] = 0.0;
    }
    views.local.push_back(std::move(view));
  }
  return views;
}

Network make_projector(std::size_t feature_dim, const ProjectorSpec& spec, std::uint64_t seed) {
  if (spec.hidden_dim == 0 || spec.bottleneck_dim == 0 || spec.output_dim == 0) {
    throw ArgumentError("projector dimensions must be positive");
  }
  return Network::he_uniform({feature_dim, spec.hidden_dim, spec.bottleneck_dim, spec.output_dim},
                             {Activation::relu, Activation::identity, Activation::identity}, seed);
}

Tensor projector_logits(const Network& projector, const Tensor& features) {
  if (projector.depth() < 2) throw DimensionError("projector needs a prototype layer");
  const std::size_t last = projector.depth() - 1;
  Tensor z = projector.predict_layers(features, 0, last);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto r = z.row(i);
    double ss = 0.0;
    for (double v : r) ss += v * v;
    const double norm = std::max(std::sqrt(ss), 1e-12);
    for (double& v : r) v /= norm;
  }
  Tensor w = projector.layers()[last].weight;
  for (std::size_t j = 0; j < w.cols(); ++j) {
    double ss = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i) ss += w.at(i, j) * w.at(i, j);
    const double norm = std::max(std::sqrt(ss), 1e-12);
    for (std::size_t i = 0; i < w.rows(); ++i) w.at(i, j) /= norm;
  }
  return matmul(z, w);
}

Var projector_forward(Network& projector, Tape& tape, Var features) {
  if (projector.depth() < 2) throw DimensionError("projector needs a prototype layer");
  const std::size_t last = projector.depth() - 1;
  Var z = ad::l2_normalize_rows(projector.forward_layers(tape, features, 0, last));
  Var w = ad::normalize_columns(tape.parameter(projector.layers()[last].weight));
  return ad::matmul(z, w);
}

void DistillState::validate() const {
  if (!student.backbone.same_architecture(teacher.backbone) ||
      !student.projector.same_architecture(teacher.projector)) {
    throw DimensionError("teacher and student architectures differ");
  }
  if (!(t_teacher > 0.0 && t_student > 0.0)) throw NumericError("temperatures must be positive");
  if (center.size() != student.projector.output_dim()) {
    throw DimensionError("center size does not match projector output");
  }
}

DistillState make_distill_state(Network backbone, const ProjectorSpec& spec, std::uint64_t seed) {
  DistillState state;
  state.student.projector = make_projector(backbone.output_dim(), spec, seed);
  state.student.backbone = std::move(backbone);
  state.teacher = state.student;
  state.center = Tensor({spec.output_dim}, 0.0);
  return state;
}

Tensor teacher_probabilities(const DistillState& state, const Tensor& teacher_logits) {
  if (!state.centering) return softmax_rows(teacher_logits, state.t_teacher);
  if (teacher_logits.cols() != state.center.size()) {
    throw DimensionError("teacher logits do not match center size");
  }
  Tensor centered = teacher_logits;
  for (std::size_t i = 0; i < centered.rows(); ++i) {
    auto r = centered.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] -= state.center[j];
  }
  return softmax_rows(centered, state.t_teacher);
}

double dino_loss(const DistillState& state, std::span<const Tensor> teacher_logits,
                 std::span<const Tensor> student_logits) {
  std::vector<Tensor> pt, ps;
  for (const Tensor& t : teacher_logits) pt.push_back(teacher_probabilities(state, t));
  for (const Tensor& s : student_logits) ps.push_back(softmax_rows(s, state.t_student));
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t v = 0; v < ps.size(); ++v) {
    for (std::size_t t = 0; t < pt.size(); ++t) {
      if (t == v) continue;
      if (!pt[t].same_shape(ps[v])) throw DimensionError("dino_loss: view shapes differ");
      total += cross_entropy_rows(pt[t], ps[v]);
      count += pt[t].rows();
    }
  }
  if (count == 0) throw ArgumentError("dino_loss: no (teacher, student) view pairs");
  const double loss = total / static_cast<double>(count);
  if (!std::isfinite(loss)) throw NumericError("dino_loss is not finite");
  return loss;
}

Tensor update_center(DistillState& state, const Tensor& teacher_logits) {
  if (teacher_logits.rows() == 0 || teacher_logits.empty()) {
    throw ArgumentError("update_center: empty batch");
  }
  if (teacher_logits.cols() != state.center.size()) {
    throw DimensionError("update_center: logits do not match center size");
  }
  Tensor mean({state.center.size()}, 0.0);
  for (std::size_t i = 0; i < teacher_logits.rows(); ++i) {
    auto r = teacher_logits.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) mean[j] += r[j];
  }
  const double n = static_cast<double>(teacher_logits.rows());
  const double m = state.center_momentum;
  for (std::size_t j = 0; j < mean.size(); ++j) {
    state.center[j] = m * state.center[j] + (1.0 - m) * (mean[j] / n);
  }
  return state.center;
}

void ema_update(DistillState& state) {
  if (!state.student.backbone.same_architecture(state.teacher.backbone) ||
      !state.student.projector.same_architecture(state.teacher.projector)) {
    throw DimensionError("ema_update: teacher and student architectures differ");
  }
  blend_network(state.teacher.backbone, state.student.backbone, state.ema_momentum);
  blend_network(state.teacher.projector, state.student.projector, state.ema_momentum);
}

double teacher_entropy(const DistillState& state, const Tensor& probe) {
  const Tensor p = teacher_probabilities(state, state.teacher.logits(probe));
  double total = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    for (double v : p.row(i)) {
      if (v > 0.0) total -= v * std::log(v);
    }
  }
  return total / static_cast<double>(p.rows());
}

double teacher_diversity(const DistillState& state, const Tensor& probe) {
  const Tensor p = teacher_probabilities(state, state.teacher.logits(probe));
  std::vector<double> mean(p.cols(), 0.0);
  double row_entropy = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    auto r = p.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      mean[j] += r[j];
      if (r[j] > 0.0) row_entropy -= r[j] * std::log(r[j]);
    }
  }
  const double n = static_cast<double>(p.rows());
  double mean_entropy = 0.0;
  for (double& m : mean) {
    m /= n;
    if (m > 0.0) mean_entropy -= m * std::log(m);
  }
  return mean_entropy - row_entropy / n;
}

bool collapse_detected(std::span<const double> entropy_trace, double floor) {
  return std::any_of(entropy_trace.begin(), entropy_trace.end(),
                     [floor](double h) { return h < floor; });
}

BatchViews make_batch_views(const Tensor& batch, std::span<const std::uint64_t> sample_keys,
                            const ViewConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t n = batch.rows(), d = batch.cols();
  if (sample_keys.size() != n) throw DimensionError("make_batch_views: one key per sample");
  BatchViews out;
  out.batch = n;
  out.n_global = cfg.n_global;
  out.n_views = cfg.n_views();
  out.student_input = Tensor::matrix(n * out.n_views, d);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {sample_keys[i]}));
    Views views = make_views(batch.row(i), cfg, rng);
    for (std::size_t v = 0; v < out.n_views; ++v) {
      const auto& src = v < cfg.n_global ? views.global[v] : views.local[v - cfg.n_global];
      std::copy(src.begin(), src.end(), out.student_input.row(v * n + i).begin());
    }
  }
  out.teacher_input = slice_rows(out.student_input, 0, n * cfg.n_global);
  return out;
}

StepResult distill_step(DistillState& state, const BatchViews& views, Optimizer* opt,
                        bool freeze_backbone, double lr_factor) {
  StepResult result;
  result.teacher_logits = state.teacher.logits(views.teacher_input);
  const Tensor p_teacher = teacher_probabilities(state, result.teacher_logits);

  Tape tape;
  Var features = freeze_backbone
                     ? tape.constant(state.student.backbone.predict(views.student_input))
                     : state.student.backbone.forward(tape, views.student_input);
  Var logits = projector_forward(state.student.projector, tape, features);
  Var loss = ad::distillation_loss(logits, p_teacher, views.batch, views.n_global,
                                   views.n_views, state.t_student);
  result.loss = loss.value()[0];
  result.grads = tape.backward(loss);

  if (opt != nullptr) {
    opt->step(result.grads, lr_factor);
    ema_update(state);
    update_center(state, result.teacher_logits);
  }
  return result;
}

SslResult pretrain_ssl(const Tensor& pool, Network backbone, const SslConfig& cfg,
                       const EpochCallback& on_epoch) {
  if (pool.rank() != 2 || pool.rows() == 0) throw ArgumentError("pretrain_ssl: empty pool");
  if (pool.cols() != backbone.input_dim()) {
    throw DimensionError("pretrain_ssl: pool dim does not match backbone input");
  }
  if (cfg.batch_size == 0) throw ArgumentError("pretrain_ssl: batch_size must be positive");
  cfg.views.validate();

  SslResult result;
  DistillState state =
      make_distill_state(std::move(backbone), cfg.projector, derive_seed(cfg.seed, {1}));
  state.t_student = cfg.t_student;
  state.t_teacher = cfg.t_teacher;
  state.ema_momentum = cfg.ema_momentum;
  state.center_momentum = cfg.center_momentum;
  state.centering = cfg.centering;
  state.validate();

  const std::size_t n = pool.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  // Fixed probe batch and fixed probe views for loss/entropy tracking.
  {
    Rng rng(derive_seed(cfg.seed, {2}));
    std::shuffle(order.begin(), order.end(), rng);
  }
  const std::size_t probe_n = std::min(cfg.probe_size == 0 ? n : cfg.probe_size, n);
  std::vector<std::size_t> probe_idx(order.begin(), order.begin() + static_cast<long>(probe_n));
  const Tensor probe = gather_rows(pool, probe_idx);
  std::vector<std::uint64_t> probe_keys(probe_idx.begin(), probe_idx.end());
  const BatchViews probe_views = make_batch_views(probe, probe_keys, cfg.views, derive_seed(cfg.seed, {3}));

  result.teacher_entropy.push_back(teacher_entropy(state, probe));
  result.teacher_diversity.push_back(teacher_diversity(state, probe));
  result.probe_loss_stage1_start = view_loss(state, probe_views);

  const std::size_t per_epoch =
      cfg.samples_per_epoch == 0 ? n : std::min(cfg.samples_per_epoch, n);
  const std::size_t steps_per_epoch = (per_epoch + cfg.batch_size - 1) / cfg.batch_size;

  const StageConfig* stages[2] = {&cfg.stage1, &cfg.stage2};
  for (int s = 0; s < 2; ++s) {
    const StageConfig& stage = *stages[s];
    if (s == 1) result.probe_loss_stage2_start = view_loss(state, probe_views);
    if (stage.epochs == 0) continue;

    auto opt = make_optimizer(cfg.optimizer);
    if (!stage.freeze_backbone) opt->add_group(state.student.backbone.parameters(), stage.backbone_lr);
    opt->add_group(state.student.projector.parameters(), stage.projector_lr);

    OneCycleSchedule schedule;
    schedule.max_lr = 1.0;
    schedule.total_steps = stage.epochs * steps_per_epoch;
    schedule.warmup_fraction = cfg.warmup_fraction;

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < stage.epochs; ++epoch) {
      Rng rng(derive_seed(cfg.seed, {10 + static_cast<std::uint64_t>(s), epoch}));
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      const std::uint64_t view_seed = derive_seed(cfg.seed, {20 + static_cast<std::uint64_t>(s), epoch});

      double loss_sum = 0.0;
      std::size_t loss_count = 0;
      for (std::size_t b = 0; b < per_epoch; b += cfg.batch_size) {
        const std::size_t e = std::min(b + cfg.batch_size, per_epoch);
        std::vector<std::size_t> idx(order.begin() + static_cast<long>(b),
                                     order.begin() + static_cast<long>(e));
        std::vector<std::uint64_t> keys(idx.begin(), idx.end());
        const BatchViews views = make_batch_views(gather_rows(pool, idx), keys, cfg.views, view_seed);
        const double factor = stage.schedule == LrSchedule::one_cycle ? schedule.factor(step) : 1.0;
        StepResult r;
        try {
          r = distill_step(state, views, opt.get(), stage.freeze_backbone, factor);
        } catch (const NumericError& err) {
          throw NumericError("self-distillation diverged at stage " + std::to_string(s + 1) +
                             ", epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step) + ": " + err.what());
        }
        if (!std::isfinite(r.loss)) {
          throw NumericError("self-distillation loss is not finite at stage " +
                             std::to_string(s + 1) + ", epoch " + std::to_string(epoch));
        }
        loss_sum += r.loss * static_cast<double>(e - b);
        loss_count += e - b;
        ++step;
      }
      const double epoch_loss = loss_sum / static_cast<double>(loss_count);
      (s == 0 ? result.stage1_loss : result.stage2_loss).push_back(epoch_loss);
      result.teacher_entropy.push_back(teacher_entropy(state, probe));
      result.teacher_diversity.push_back(teacher_diversity(state, probe));
      if (on_epoch) on_epoch(s + 1, epoch, epoch_loss);
    }
  }
  result.probe_loss_end = view_loss(state, probe_views);
  result.collapse_floor =
      cfg.collapse_floor_fraction * std::log(static_cast<double>(state.output_dim()));
  result.collapse_flagged = collapse_detected(result.teacher_entropy, result.collapse_floor) ||
                            result.teacher_diversity.back() < result.collapse_floor;
  result.backbone = state.teacher.backbone;
  result.state = std::move(state);
  return result;
}

}  // namespace sslada::dino
