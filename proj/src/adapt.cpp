#include "sslada/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sslada/error.hpp"
#include "sslada/rng.hpp"

namespace sslada::adapt {
namespace {

LabeledBatch batch_from(const data::Pool& pool, std::span<const std::size_t> rows) {
  LabeledBatch b;
  b.x = gather_rows(pool.features, rows);
  for (std::size_t r : rows) {
    b.labels.push_back(pool.labels[r]);
    b.weights.push_back(1.0);
  }
  return b;
}

std::vector<std::size_t> labeled_rows(const data::Pool& pool) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool.is_labeled(i)) rows.push_back(i);
  }
  return rows;
}

/// k distinct draws from [0, n) (all of them when k >= n), partial Fisher-Yates.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

std::vector<std::size_t> sample_with_replacement(std::span<const std::size_t> from, std::size_t k,
                                                 Rng& rng) {
  std::vector<std::size_t> out(k);
  std::uniform_int_distribution<std::size_t> pick(0, from.size() - 1);
  for (auto& v : out) v = from[pick(rng)];
  return out;
}

struct Stacked {
  Tensor x;
  std::vector<int> class_labels;
  std::vector<double> class_weights;
  std::size_t n_source = 0;
  std::size_t n_labeled_target = 0;
  std::size_t n_unlabeled = 0;
};

/// Rows in the order source, labeled target, unlabeled target. Unlabeled rows
/// carry class weight 0.
Stacked stack(const LabeledBatch& source, const LabeledBatch* labeled_target,
              const Tensor& target_unlabeled) {
  Stacked s;
  std::vector<Tensor> parts{source.x};
  s.class_labels = source.labels;
  s.class_weights = source.weights;
  s.n_source = source.size();
  if (labeled_target != nullptr && !labeled_target->empty()) {
    parts.push_back(labeled_target->x);
    s.class_labels.insert(s.class_labels.end(), labeled_target->labels.begin(),
                          labeled_target->labels.end());
    s.class_weights.insert(s.class_weights.end(), labeled_target->weights.begin(),
                           labeled_target->weights.end());
    s.n_labeled_target = labeled_target->size();
  }
  if (target_unlabeled.rows() > 0) {
    parts.push_back(target_unlabeled);
    s.n_unlabeled = target_unlabeled.rows();
    s.class_labels.insert(s.class_labels.end(), s.n_unlabeled, 0);
    s.class_weights.insert(s.class_weights.end(), s.n_unlabeled, 0.0);
  }
  s.x = concat_rows(parts);
  return s;
}

void check_batch(const LabeledBatch& b, const char* what) {
  if (b.empty()) throw ArgumentError(std::string(what) + " batch is empty");
  if (b.x.rows() != b.size() || b.weights.size() != b.size()) {
    throw DimensionError(std::string(what) + " batch columns have inconsistent lengths");
  }
}

Var weighted_sum(Var a, double wa, Var b, double wb) {
  Var left = wa == 1.0 ? a : ad::scale(a, wa);
  Var right = wb == 1.0 ? b : ad::scale(b, wb);
  return ad::add(left, right);
}

}  // namespace

LabeledBatch LabeledBatch::from_pool(const data::Pool& pool) {
  const auto rows = labeled_rows(pool);
  return batch_from(pool, rows);
}

std::size_t ProbeModel::first_trainable() const {
  const std::size_t depth = backbone.depth();
  if (backbone_frozen) return depth;
  return depth - std::min(trainable_backbone_layers, depth);
}

std::vector<Tensor*> ProbeModel::trainable_backbone_parameters() {
  return backbone.parameters(first_trainable());
}

std::vector<double> ProbeModel::positive_scores(const Tensor& x) const {
  const Tensor p = probabilities(x);
  std::vector<double> out(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) out[i] = p.at(i, 1);
  return out;
}

ProbeModel make_probe(Network backbone, std::uint64_t seed) {
  ProbeModel m;
  const std::size_t f = backbone.output_dim();
  m.backbone = std::move(backbone);
  m.head = Network::he_uniform({f, 2}, {Activation::identity}, seed);
  return m;
}

std::vector<double> DannModel::domain_prob_source(const Tensor& x) const {
  const Tensor p = softmax_rows(domain_head.predict(probe.features(x)));
  std::vector<double> out(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) out[i] = p.at(i, 1);
  return out;
}

DannModel make_dann(ProbeModel probe, std::size_t hidden_dim, std::uint64_t seed) {
  DannModel m;
  const std::size_t f = probe.backbone.output_dim();
  m.probe = std::move(probe);
  if (hidden_dim == 0) {
    m.domain_head = Network::he_uniform({f, 2}, {Activation::identity}, seed);
  } else {
    m.domain_head = Network::he_uniform({f, hidden_dim, 2},
                                        {Activation::relu, Activation::identity}, seed);
  }
  return m;
}

ProbeResult linear_probe(Network backbone, const data::Pool& source, const ProbeConfig& cfg) {
  const auto rows = labeled_rows(source);
  std::size_t pos = 0;
  for (std::size_t r : rows) pos += source.labels[r] == 1 ? 1 : 0;
  if (pos == 0 || pos == rows.size()) {
    throw ArgumentError("linear probe needs labeled source samples of both classes");
  }
  if (cfg.batch_size == 0) throw ArgumentError("linear probe: batch size must be positive");

  ProbeResult result;
  result.model = make_probe(std::move(backbone), derive_seed(cfg.seed, {0x9e01}));
  ProbeModel& m = result.model;
  const Tensor feats = m.backbone.predict(gather_rows(source.features, rows));
  std::vector<int> labels;
  for (std::size_t r : rows) labels.push_back(source.labels[r]);

  auto opt = make_optimizer(cfg.optimizer);
  opt->add_group(m.head.parameters(), cfg.lr);
  Rng rng(derive_seed(cfg.seed, {0x9e02}));
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> bl;
      for (std::size_t i : idx) bl.push_back(labels[i]);
      const std::vector<double> w(idx.size(), 1.0);
      Tape tape;
      Var logits = m.head.forward(tape, gather_rows(feats, idx));
      Var loss = ad::cross_entropy(logits, bl, w);
      epoch_loss += loss.value()[0] * static_cast<double>(idx.size());
      opt->step(tape.backward(loss));
    }
    epoch_loss /= static_cast<double>(order.size());
    result.loss_curve.push_back(epoch_loss);
    if (epoch_loss < best - cfg.plateau_tol) {
      best = epoch_loss;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return result;
}

DannGradients dann_gradients(DannModel& model, const LabeledBatch& source,
                             const Tensor& target_unlabeled, const LabeledBatch* labeled_target,
                             double lambda, DannWeights weights) {
  if (lambda < 0.0) throw ArgumentError("dann: lambda must be non-negative");
  check_batch(source, "dann source");
  if (target_unlabeled.rows() == 0) throw ArgumentError("dann: unlabeled target batch is empty");
  if (labeled_target != nullptr && !labeled_target->empty()) check_batch(*labeled_target, "dann target");

  const Stacked s = stack(source, labeled_target, target_unlabeled);
  std::vector<int> domain_labels(s.x.rows(), 0);
  std::vector<double> domain_weights(s.x.rows(), 0.0);
  for (std::size_t i = 0; i < s.n_source; ++i) {
    domain_labels[i] = 1;
    domain_weights[i] = 1.0;
  }
  for (std::size_t i = s.x.rows() - s.n_unlabeled; i < s.x.rows(); ++i) domain_weights[i] = 1.0;

  ProbeModel& p = model.probe;
  model.grl.lambda = lambda;
  Tape tape;
  Var feats = p.backbone.forward(tape, s.x, p.first_trainable());
  Var l_c = ad::cross_entropy(p.head.forward(tape, feats), s.class_labels, s.class_weights);
  Var domain_logits = model.domain_head.forward(tape, grl_apply(model.grl, feats));
  Var l_d = ad::cross_entropy(domain_logits, domain_labels, domain_weights);

  DannGradients out;
  out.losses.l_c = l_c.value()[0];
  out.losses.l_d = l_d.value()[0];
  out.losses.weight = weights.domain_weight;
  out.losses.total = weights.class_weight * out.losses.l_c + weights.domain_weight * out.losses.l_d;

  Var total = l_c;
  if (weights.class_weight == 0.0) {
    total = ad::scale(l_d, weights.domain_weight);
  } else if (weights.domain_weight != 0.0) {
    total = weighted_sum(l_c, weights.class_weight, l_d, weights.domain_weight);
  } else if (weights.class_weight != 1.0) {
    total = ad::scale(l_c, weights.class_weight);
  }
  out.grads = tape.backward(total);
  return out;
}

AdaptLosses dann_step(DannModel& model, Optimizer& opt, const LabeledBatch& source,
                      const Tensor& target_unlabeled, const LabeledBatch* labeled_target,
                      double lambda, double domain_weight) {
  DannGradients g = dann_gradients(model, source, target_unlabeled, labeled_target, lambda,
                                   {1.0, domain_weight});
  opt.step(g.grads);
  return g.losses;
}

AdaptLosses mme_step(ProbeModel& model, Optimizer& opt, const LabeledBatch& source,
                     const Tensor& target_unlabeled, const LabeledBatch* labeled_target,
                     double lambda_ent) {
  if (lambda_ent < 0.0) throw ArgumentError("mme: lambda_ent must be non-negative");
  check_batch(source, "mme source");
  if (labeled_target != nullptr && !labeled_target->empty()) check_batch(*labeled_target, "mme target");

  const Stacked s = stack(source, labeled_target, target_unlabeled);
  Tape tape;
  Var feats = model.backbone.forward(tape, s.x, model.first_trainable());
  Var l_c = ad::cross_entropy(model.head.forward(tape, feats), s.class_labels, s.class_weights);

  AdaptLosses out;
  out.l_c = l_c.value()[0];
  out.weight = -lambda_ent;
  Var total = l_c;
  if (s.n_unlabeled > 0) {
    std::vector<double> ent_w(s.x.rows(), 0.0);
    std::fill(ent_w.end() - static_cast<std::ptrdiff_t>(s.n_unlabeled), ent_w.end(), 1.0);
    if (lambda_ent > 0.0) {
      Var reversed = grl_apply(GrlGate{1.0}, feats);
      Var h = ad::mean_entropy(model.head.forward(tape, reversed), ent_w);
      out.l_d = h.value()[0];
      total = weighted_sum(l_c, 1.0, h, -lambda_ent);
    } else {
      out.l_d = ad::mean_entropy(tape.constant(model.head.predict(feats.value())), ent_w).value()[0];
    }
  }
  out.total = out.l_c + out.weight * out.l_d;
  opt.step(tape.backward(total));
  return out;
}

AdaptLosses finetune_step(ProbeModel& model, Optimizer& opt, const LabeledBatch& batch) {
  check_batch(batch, "fine-tune");
  Tape tape;
  Var feats = model.backbone.forward(tape, batch.x, model.first_trainable());
  Var loss = ad::cross_entropy(model.head.forward(tape, feats), batch.labels, batch.weights);
  AdaptLosses out;
  out.l_c = loss.value()[0];
  out.total = out.l_c;
  opt.step(tape.backward(loss));
  return out;
}

double batch_loss(const ProbeModel& model, const LabeledBatch& batch) {
  check_batch(batch, "loss");
  Tape tape;
  Var loss = ad::cross_entropy(tape.constant(model.logits(batch.x)), batch.labels, batch.weights);
  return loss.value()[0];
}

double fit_domain_head(DannModel& model, const Tensor& source_x, const Tensor& target_x,
                       std::size_t steps, std::size_t batch_size, double lr, std::uint64_t seed) {
  if (source_x.rows() == 0 || target_x.rows() == 0) {
    throw ArgumentError("fit_domain_head: both domains need samples");
  }
  const Tensor fs = model.probe.features(source_x);
  const Tensor ft = model.probe.features(target_x);
  Sgd opt(0.9);
  opt.add_group(model.domain_head.parameters(), lr);
  Rng rng(seed);
  const std::size_t half = std::max<std::size_t>(1, batch_size / 2);
  double last = 0.0;
  for (std::size_t step = 0; step < steps; ++step) {
    const auto si = sample_without_replacement(fs.rows(), half, rng);
    const auto ti = sample_without_replacement(ft.rows(), half, rng);
    const Tensor parts[2] = {gather_rows(fs, si), gather_rows(ft, ti)};
    std::vector<int> labels(si.size(), 1);
    labels.insert(labels.end(), ti.size(), 0);
    const std::vector<double> w(labels.size(), 1.0);
    Tape tape;
    Var loss = ad::cross_entropy(model.domain_head.forward(tape, concat_rows(parts)), labels, w);
    last = loss.value()[0];
    opt.step(tape.backward(loss));
  }
  return last;
}

Method parse_method(const std::string& name) {
  if (name == "finetune" || name == "ft") return Method::finetune;
  if (name == "dann") return Method::dann;
  if (name == "mme") return Method::mme;
  throw ArgumentError("unknown adaptation method '" + name + "'");
}

const char* method_name(Method m) {
  switch (m) {
    case Method::finetune: return "finetune";
    case Method::dann: return "dann";
    case Method::mme: return "mme";
  }
  return "finetune";
}

double grl_schedule(double progress, double lambda_max) {
  const double p = std::clamp(progress, 0.0, 1.0);
  return lambda_max * (2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0);
}

AdaptLosses run_adaptation(Method method, DannModel& model, const AdaptData& data,
                           const AdaptConfig& cfg, std::uint64_t seed) {
  if (data.source == nullptr) throw ArgumentError("adaptation needs a source pool");
  if (cfg.batch_size == 0) throw ArgumentError("adaptation batch size must be positive");
  const data::Pool empty = data::Pool::empty(data.source->dim());
  const data::Pool& unl = data.target_unlabeled ? *data.target_unlabeled : empty;
  const data::Pool& lab = data.target_labeled ? *data.target_labeled : empty;
  const auto src_rows = labeled_rows(*data.source);
  const auto lab_rows = labeled_rows(lab);
  if (src_rows.empty()) throw ArgumentError("adaptation needs labeled source samples");

  ProbeModel& p = model.probe;
  if (method == Method::finetune) {
    if (lab_rows.empty()) return {};
    p.backbone_frozen = !cfg.finetune_backbone;
    p.trainable_backbone_layers = cfg.finetune_backbone ? cfg.adversarial_trainable_layers : 0;
  } else {
    if (unl.size() == 0) throw ArgumentError("adaptation needs unlabeled target samples");
    p.backbone_frozen = cfg.adversarial_trainable_layers == 0;
    p.trainable_backbone_layers = cfg.adversarial_trainable_layers;
  }

  auto opt = make_optimizer(cfg.optimizer);
  opt->add_group(p.head.parameters(), cfg.lr);
  if (auto bb = p.trainable_backbone_parameters(); !bb.empty()) {
    opt->add_group(std::move(bb), cfg.lr * cfg.backbone_lr_scale);
  }
  if (method == Method::dann) opt->add_group(model.domain_head.parameters(), cfg.domain_lr);

  Rng rng(seed);
  AdaptLosses last;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto si = sample_without_replacement(src_rows.size(), cfg.batch_size, rng);
    std::vector<std::size_t> src_pick;
    for (std::size_t i : si) src_pick.push_back(src_rows[i]);
    LabeledBatch source = batch_from(*data.source, src_pick);

    LabeledBatch target;
    if (!lab_rows.empty()) {
      target = batch_from(lab, sample_with_replacement(lab_rows, source.size(), rng));
      std::fill(target.weights.begin(), target.weights.end(), cfg.target_weight);
    }
    switch (method) {
      case Method::finetune: {
        if (cfg.mix_source) {
          const Tensor parts[2] = {target.x, source.x};
          target.x = concat_rows(parts);
          target.labels.insert(target.labels.end(), source.labels.begin(), source.labels.end());
          target.weights.insert(target.weights.end(), source.weights.begin(), source.weights.end());
        }
        last = finetune_step(p, *opt, target);
        break;
      }
      case Method::dann: {
        const auto ui = sample_without_replacement(unl.size(), cfg.batch_size, rng);
        const double progress =
            cfg.steps > 1 ? static_cast<double>(step) / static_cast<double>(cfg.steps - 1) : 1.0;
        last = dann_step(model, *opt, source, gather_rows(unl.features, ui), &target,
                         grl_schedule(progress, cfg.lambda_max), cfg.domain_weight);
        break;
      }
      case Method::mme: {
        const auto ui = sample_without_replacement(unl.size(), cfg.batch_size, rng);
        last = mme_step(p, *opt, source, gather_rows(unl.features, ui), &target, cfg.lambda_ent);
        break;
      }
    }
  }
  return last;
}

}  // namespace sslada::adapt
