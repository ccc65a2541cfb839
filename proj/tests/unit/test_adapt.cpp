#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "sslada/adapt.hpp"
#include "sslada/checkpoint.hpp"
#include "sslada/error.hpp"
#include "sslada/metrics.hpp"
#include "sslada/rng.hpp"
#include "support.hpp"

using namespace sslada;
using namespace sslada::adapt;

namespace {

// Two Gaussian classes in `dim` dimensions, centers at -shift and +shift on
// the first axis plus `offset` on every axis.
data::Pool toy_pool(std::size_t n, std::size_t dim, double shift, double offset, std::uint64_t seed,
                    std::int64_t first_id = 0) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  data::Pool p;
  p.features = Tensor::matrix(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = i % 2 == 0 ? 1 : 0;
    for (std::size_t j = 0; j < dim; ++j) p.features.at(i, j) = offset + normal(rng);
    p.features.at(i, 0) += y == 1 ? shift : -shift;
    p.ids.push_back(first_id + static_cast<std::int64_t>(i));
    p.labels.push_back(y);
    p.domains.push_back("T");
  }
  return p;
}

Network small_backbone(std::uint64_t seed = 1) {
  return Network::he_uniform({4, 8, 6}, {Activation::relu, Activation::tanh}, seed);
}

DannModel unfrozen_dann(std::uint64_t seed = 1) {
  ProbeModel probe = make_probe(small_backbone(seed), seed + 1);
  probe.backbone_frozen = false;
  probe.trainable_backbone_layers = 1;
  return make_dann(std::move(probe), 5, seed + 2);
}

double mean_target_entropy(const ProbeModel& m, const Tensor& x) {
  const Tensor p = m.probabilities(x);
  double h = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    for (double v : p.row(i)) {
      if (v > 0.0) h -= v * std::log(v);
    }
  }
  return h / static_cast<double>(p.rows());
}

}  // namespace

TEST_CASE("linear probe separates separable classes without touching the backbone") {
  data::Pool src = toy_pool(200, 4, 0.0, 0.0, 3);
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double margin = 1.0 + std::abs(src.features.at(i, 0));
    src.features.at(i, 0) = src.labels[i] == 1 ? margin : -margin;
  }
  // Identity backbone, so the features themselves are separable.
  Network backbone = Network::he_uniform({4, 4}, {Activation::identity}, 5);
  backbone.layers()[0].weight.fill(0.0);
  for (std::size_t i = 0; i < 4; ++i) backbone.layers()[0].weight.at(i, i) = 1.0;
  ProbeConfig cfg;
  cfg.seed = 9;
  const ProbeResult r = linear_probe(backbone, src, cfg);
  CHECK(r.model.backbone.bit_equal(backbone));
  CHECK(metrics::accuracy(r.model.positive_scores(src.features), src.labels) == 1.0);
  CHECK_FALSE(r.loss_curve.empty());
  CHECK(r.loss_curve.back() < r.loss_curve.front());

  const ProbeResult again = linear_probe(backbone, src, cfg);
  CHECK(again.model.head.bit_equal(r.model.head));
  CHECK(again.loss_curve == r.loss_curve);
}

TEST_CASE("a zero-epoch probe keeps the initialized head") {
  const data::Pool src = toy_pool(40, 4, 1.0, 0.0, 3);
  ProbeConfig zero;
  zero.max_epochs = 0;
  zero.seed = 4;
  const ProbeResult a = linear_probe(small_backbone(), src, zero);
  CHECK(a.loss_curve.empty());
  CHECK(a.model.head.bit_equal(make_probe(small_backbone(), derive_seed(4, {0x9e01})).head));
  ProbeConfig one = zero;
  one.max_epochs = 1;
  CHECK_FALSE(linear_probe(small_backbone(), src, one).model.head.bit_equal(a.model.head));
}

TEST_CASE("linear probe needs both classes") {
  data::Pool src = toy_pool(10, 4, 1.0, 0.0, 3);
  std::fill(src.labels.begin(), src.labels.end(), 0);
  CHECK_THROWS_AS(linear_probe(small_backbone(), src, ProbeConfig{}), ArgumentError);
}

TEST_CASE("a uniform domain head gives a domain loss of ln 2") {
  DannModel m = unfrozen_dann();
  m.domain_head.layers().back().weight.fill(0.0);
  m.domain_head.layers().back().bias.fill(0.0);
  const data::Pool src = toy_pool(8, 4, 1.0, 0.0, 1);
  const data::Pool tgt = toy_pool(8, 4, 1.0, 0.5, 2);
  const DannGradients g = dann_gradients(m, LabeledBatch::from_pool(src), tgt.features, nullptr, 1.0);
  CHECK(std::abs(g.losses.l_d - std::log(2.0)) < 1e-12);
  CHECK(g.losses.total == doctest::Approx(g.losses.l_c + g.losses.l_d).epsilon(1e-15));

  // Any two-class cross-entropy of a uniform predictor is ln 2.
  ProbeModel uniform = make_probe(small_backbone(), 3);
  uniform.head.layers().back().weight.fill(0.0);
  uniform.head.layers().back().bias.fill(0.0);
  CHECK(std::abs(batch_loss(uniform, LabeledBatch::from_pool(src)) - std::log(2.0)) < 1e-12);
}

TEST_CASE("with lambda 0 the domain loss sends no gradient to the features") {
  DannModel m = unfrozen_dann();
  const data::Pool src = toy_pool(16, 4, 1.0, 0.0, 1);
  const data::Pool tgt = toy_pool(16, 4, 1.0, 1.0, 2);
  const LabeledBatch sb = LabeledBatch::from_pool(src);
  const auto with_domain = dann_gradients(m, sb, tgt.features, nullptr, 0.0, {1.0, 1.0});
  const auto class_only = dann_gradients(m, sb, tgt.features, nullptr, 0.0, {1.0, 0.0});
  const auto domain_only = dann_gradients(m, sb, tgt.features, nullptr, 0.0, {0.0, 1.0});
  for (Tensor* p : m.probe.trainable_backbone_parameters()) {
    REQUIRE(with_domain.grads.contains(p));
    CHECK(with_domain.grads.at(p).bit_equal(class_only.grads.at(p)));
    if (domain_only.grads.contains(p)) {
      for (double v : domain_only.grads.at(p).values()) CHECK(v == 0.0);
    }
  }
  // The domain head itself still learns.
  bool any = false;
  for (Tensor* p : m.domain_head.parameters()) {
    for (double v : domain_only.grads.at(p).values()) any = any || v != 0.0;
  }
  CHECK(any);
}

TEST_CASE("the domain loss reaches the features negated and scaled by lambda") {
  DannModel m = unfrozen_dann(4);
  const data::Pool src = toy_pool(12, 4, 1.0, 0.0, 5);
  const data::Pool tgt = toy_pool(10, 4, 1.0, 0.7, 6);
  const LabeledBatch sb = LabeledBatch::from_pool(src);

  // Same domain loss without the reversal gate: source rows tagged 1, target 0.
  Tape tape;
  const Tensor parts[2] = {src.features, tgt.features};
  Var feats = m.probe.backbone.forward(tape, concat_rows(parts), m.probe.first_trainable());
  std::vector<int> tags(22, 0);
  std::fill(tags.begin(), tags.begin() + 12, 1);
  const std::vector<double> ones(22, 1.0);
  const GradientMap plain = tape.backward(ad::cross_entropy(m.domain_head.forward(tape, feats), tags, ones));

  for (double lambda : {1.0, 0.5, 0.3}) {
    const auto g = dann_gradients(m, sb, tgt.features, nullptr, lambda, {0.0, 1.0});
    for (Tensor* p : m.probe.trainable_backbone_parameters()) {
      const Tensor& got = g.grads.at(p);
      const Tensor& ref = plain.at(p);
      for (std::size_t i = 0; i < got.size(); ++i) {
        if (lambda == 0.3) {
          CHECK(got[i] == doctest::Approx(-lambda * ref[i]).epsilon(1e-12));
        } else {
          CHECK(got[i] == -lambda * ref[i]);
        }
      }
    }
    for (Tensor* p : m.domain_head.parameters()) CHECK(g.grads.at(p).bit_equal(plain.at(p)));
  }
  CHECK_THROWS_AS(dann_gradients(m, sb, tgt.features, nullptr, -0.1), ArgumentError);
  CHECK_THROWS_AS(dann_gradients(m, sb, Tensor::matrix(0, 4), nullptr, 1.0), ArgumentError);
}

TEST_CASE("DANN on identically distributed pools drives the domain loss to ln 2") {
  DannModel m = unfrozen_dann(7);
  const data::Pool src = toy_pool(400, 4, 1.5, 0.0, 11);
  const data::Pool tgt = toy_pool(400, 4, 1.5, 0.0, 12, 10000);
  OptimizerConfig oc;
  auto opt = make_optimizer(oc);
  opt->add_group(m.probe.head.parameters(), 0.01);
  opt->add_group(m.probe.trainable_backbone_parameters(), 0.01);
  opt->add_group(m.domain_head.parameters(), 0.01);
  Rng rng(3);
  std::vector<double> last;
  for (int step = 0; step < 200; ++step) {
    std::vector<std::size_t> si(32), ti(32);
    for (auto& i : si) i = std::uniform_int_distribution<std::size_t>(0, 399)(rng);
    for (auto& i : ti) i = std::uniform_int_distribution<std::size_t>(0, 399)(rng);
    const LabeledBatch sb = LabeledBatch::from_pool(src.subset(si));
    const AdaptLosses l = dann_step(m, *opt, sb, gather_rows(tgt.features, ti), nullptr, 1.0);
    CHECK(l.l_c >= 0.0);
    CHECK(l.l_d >= 0.0);
    if (step >= 180) last.push_back(l.l_d);
  }
  double mean = 0.0;
  for (double v : last) mean += v / static_cast<double>(last.size());
  CHECK(std::abs(mean - std::log(2.0)) < 0.1);
}

TEST_CASE("MME with lambda 0 is a supervised step on the labeled rows") {
  const data::Pool src = toy_pool(16, 4, 1.0, 0.0, 1);
  const data::Pool tgt = toy_pool(16, 4, 1.0, 1.0, 2);
  ProbeModel a = unfrozen_dann().probe;
  ProbeModel b = a;
  auto oa = make_optimizer(OptimizerConfig{});
  auto ob = make_optimizer(OptimizerConfig{});
  oa->add_group(a.head.parameters(), 0.1);
  oa->add_group(a.trainable_backbone_parameters(), 0.1);
  ob->add_group(b.head.parameters(), 0.1);
  ob->add_group(b.trainable_backbone_parameters(), 0.1);
  const LabeledBatch sb = LabeledBatch::from_pool(src);
  const AdaptLosses la = mme_step(a, *oa, sb, tgt.features, nullptr, 0.0);
  const AdaptLosses lb = finetune_step(b, *ob, sb);
  CHECK(la.l_c == lb.l_c);
  CHECK(la.total == la.l_c);
  CHECK(a.head.bit_equal(b.head));
  CHECK(a.backbone.bit_equal(b.backbone));
  CHECK_THROWS_AS(mme_step(a, *oa, sb, tgt.features, nullptr, -1.0), ArgumentError);
}

TEST_CASE("MME reports ln 2 for uniform target predictions") {
  ProbeModel m = make_probe(small_backbone(), 3);
  m.head.layers().back().weight.fill(0.0);
  m.head.layers().back().bias.fill(0.0);
  auto opt = make_optimizer(OptimizerConfig{});
  opt->add_group(m.head.parameters(), 0.0);
  const data::Pool src = toy_pool(6, 4, 1.0, 0.0, 1);
  const data::Pool tgt = toy_pool(9, 4, 1.0, 1.0, 2);
  const AdaptLosses l = mme_step(m, *opt, LabeledBatch::from_pool(src), tgt.features, nullptr, 0.1);
  CHECK(std::abs(l.l_d - std::log(2.0)) < 1e-12);
  CHECK(l.weight == -0.1);
  CHECK(l.total == doctest::Approx(l.l_c - 0.1 * l.l_d).epsilon(1e-15));
}

TEST_CASE("MME lowers target prediction entropy over 100 steps") {
  const data::Pool src = toy_pool(200, 4, 2.0, 0.0, 21);
  const data::Pool tgt = toy_pool(200, 4, 2.0, 0.8, 22, 10000);
  ProbeConfig pc;
  pc.seed = 1;
  ProbeModel m = linear_probe(small_backbone(2), src, pc).model;
  m.backbone_frozen = false;
  m.trainable_backbone_layers = 2;
  auto opt = make_optimizer(OptimizerConfig{});
  opt->add_group(m.head.parameters(), 0.01);
  opt->add_group(m.trainable_backbone_parameters(), 0.05);
  const double before = mean_target_entropy(m, tgt.features);
  std::vector<double> trace{before};
  Rng rng(5);
  for (int step = 0; step < 100; ++step) {
    std::vector<std::size_t> si(32), ti(32);
    for (auto& i : si) i = std::uniform_int_distribution<std::size_t>(0, 199)(rng);
    for (auto& i : ti) i = std::uniform_int_distribution<std::size_t>(0, 199)(rng);
    mme_step(m, *opt, LabeledBatch::from_pool(src.subset(si)), gather_rows(tgt.features, ti), nullptr, 0.1);
    if (step % 20 == 19) trace.push_back(mean_target_entropy(m, tgt.features));
  }
  INFO("entropy trace: " << trace[0] << " " << trace[1] << " " << trace[2] << " " << trace[3] << " "
                         << trace[4] << " " << trace[5]);
  CHECK(trace.back() < before);
}

TEST_CASE("fine-tuning") {
  ProbeModel m = make_probe(small_backbone(), 3);
  auto opt = make_optimizer(OptimizerConfig{});
  opt->add_group(m.head.parameters(), 0.1);

  SUBCASE("an empty batch is rejected and nothing moves") {
    const ProbeModel before = m;
    CHECK_THROWS_AS(finetune_step(m, *opt, LabeledBatch{}), ArgumentError);
    CHECK(m.head.bit_equal(before.head));
  }
  SUBCASE("one labeled sample: its loss drops after a step, backbone bytes unchanged") {
    const Network backbone = m.backbone;
    LabeledBatch one{Tensor({1, 4}, {0.3, -1.2, 0.8, 2.0}), {1}, {1.0}};
    const double before = batch_loss(m, one);
    const AdaptLosses l = finetune_step(m, *opt, one);
    CHECK(l.l_c == before);
    CHECK(l.l_d == 0.0);
    CHECK(batch_loss(m, one) < before);
    CHECK(m.backbone.bit_equal(backbone));
  }
  SUBCASE("a mixed batch's loss is the weighted mean of per-sample cross-entropies") {
    Rng rng(2);
    const Tensor x = testing::random_matrix(4, 4, rng);
    const std::vector<int> y{1, 0, 0, 1};
    const std::vector<double> w{0.2, 0.2, 1.0, 1.0};  // two target rows, two source rows
    const Tensor logits = m.logits(x);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      const double a = logits.at(i, 0), b = logits.at(i, 1);
      const double mx = std::max(a, b);
      const double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
      num += w[i] * (lse - logits.at(i, static_cast<std::size_t>(y[i])));
      den += w[i];
    }
    const LabeledBatch batch{x, y, w};
    CHECK(batch_loss(m, batch) == doctest::Approx(num / den).epsilon(1e-14));
    CHECK(finetune_step(m, *opt, batch).l_c == doctest::Approx(num / den).epsilon(1e-14));
  }
}

TEST_CASE("GRL warmup schedule") {
  CHECK(grl_schedule(0.0, 1.0) == 0.0);
  CHECK(grl_schedule(1.0, 1.0) == doctest::Approx(2.0 / (1.0 + std::exp(-10.0)) - 1.0).epsilon(1e-15));
  CHECK(grl_schedule(0.5, 0.3) == doctest::Approx(0.3 * (2.0 / (1.0 + std::exp(-5.0)) - 1.0)).epsilon(1e-15));
  double prev = -1.0;
  for (int i = 0; i <= 10; ++i) {
    const double v = grl_schedule(i / 10.0, 1.0);
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("all adaptation methods keep shapes and checkpoints interchangeable") {
  const data::Pool src = toy_pool(60, 4, 1.5, 0.0, 1);
  data::Pool unl = toy_pool(40, 4, 1.5, 0.5, 2, 1000).unlabeled_copy();
  const data::Pool lab = toy_pool(6, 4, 1.5, 0.5, 3, 2000);
  AdaptConfig cfg;
  cfg.steps = 5;
  cfg.batch_size = 16;
  const DannModel start = make_dann(make_probe(small_backbone(), 2), cfg.domain_hidden, 3);
  const Tensor probe_x = gather_rows(src.features, std::vector<std::size_t>{0, 1, 2});
  const auto path = std::filesystem::temp_directory_path() / "sslada_adapt_test.ckpt";

  for (Method method : {Method::finetune, Method::dann, Method::mme}) {
    INFO(method_name(method));
    DannModel m = start;
    const AdaptLosses l = run_adaptation(method, m, {&src, &unl, &lab}, cfg, 4);
    CHECK(std::isfinite(l.total));
    CHECK(m.probe.logits(probe_x).shape() == start.probe.logits(probe_x).shape());
    CHECK(m.probe.features(probe_x).shape() == start.probe.features(probe_x).shape());
    Checkpoint ck;
    ck.networks.emplace("backbone", m.probe.backbone);
    ck.networks.emplace("head", m.probe.head);
    save_checkpoint(ck, path);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.network("head").bit_equal(m.probe.head));
    CHECK(back.network("backbone").bit_equal(m.probe.backbone));
    if (method == Method::finetune) CHECK(m.probe.backbone.bit_equal(start.probe.backbone));
    if (method != Method::finetune) CHECK_FALSE(m.probe.backbone.bit_equal(start.probe.backbone));

    DannModel again = start;
    run_adaptation(method, again, {&src, &unl, &lab}, cfg, 4);
    CHECK(again.probe.head.bit_equal(m.probe.head));
  }
  std::filesystem::remove(path);

  DannModel idle = start;
  const data::Pool none = data::Pool::empty(4);
  run_adaptation(Method::finetune, idle, {&src, &unl, &none}, cfg, 4);
  CHECK(idle.probe.head.bit_equal(start.probe.head));
  CHECK_THROWS_AS(run_adaptation(Method::dann, idle, {&src, &none, &lab}, cfg, 4), ArgumentError);
  CHECK(parse_method("mme") == Method::mme);
  CHECK_THROWS_AS(parse_method("coral"), ArgumentError);
}

TEST_CASE("target weight scales labeled target rows in the fine-tune loss") {
  const data::Pool src = toy_pool(30, 4, 1.5, 0.0, 1);
  const data::Pool lab = toy_pool(4, 4, 1.5, 0.5, 3, 2000);
  AdaptConfig cfg;
  cfg.steps = 3;
  cfg.batch_size = 8;
  const DannModel start = make_dann(make_probe(small_backbone(), 2), cfg.domain_hidden, 3);
  DannModel zero = start, one = start;
  cfg.target_weight = 0.0;
  run_adaptation(Method::finetune, zero, {&src, nullptr, &lab}, cfg, 9);
  cfg.target_weight = 1.0;
  run_adaptation(Method::finetune, one, {&src, nullptr, &lab}, cfg, 9);
  CHECK_FALSE(zero.probe.head.bit_equal(one.probe.head));
  CHECK_FALSE(zero.probe.head.bit_equal(start.probe.head));
}
