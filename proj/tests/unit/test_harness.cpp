#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "sslada/error.hpp"
#include "sslada/harness.hpp"

using namespace sslada;
using namespace sslada::harness;
namespace fs = std::filesystem;

namespace {

// Three small domains and a short schedule so a full workflow takes seconds.
ExperimentConfig small_config() {
  ExperimentConfig cfg;
  data::DomainFamily f;
  f.seed = 4;
  f.base.dim = 8;
  f.base.latent_dim = 3;
  f.domains = {{"S", 500, 0.3, std::nullopt, {}, data::DomainRole::source},
               {"T1", 240, 0.25, std::nullopt, {0.4, {}, 1.2}, data::DomainRole::target},
               {"T2", 200, 0.4, std::nullopt, {-0.6, std::vector<double>(8, 0.3), 1.0}, data::DomainRole::target}};
  cfg.family = f;
  cfg.backbone.dims = {8, 16, 8};
  cfg.corpus.n = 256;
  cfg.pretrain.projector = {16, 8, 16};
  cfg.pretrain.stage1 = {1, 0.0, 1e-3, true, dino::LrSchedule::constant};
  cfg.pretrain.stage2 = {1, 1e-3, 2e-3, false, dino::LrSchedule::one_cycle};
  cfg.pretrain.samples_per_epoch = 256;
  cfg.pretrain.probe_size = 64;
  cfg.retrain = cfg.pretrain;
  cfg.adapt.steps = 10;
  cfg.adapt.batch_size = 16;
  cfg.adapt.domain_fit_steps = 20;
  cfg.probe.max_epochs = 20;
  cfg.seeds = {0, 1};
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

class ThrowingLabeler final : public Labeler {
 public:
  explicit ThrowingLabeler(bool timeout) : timeout_(timeout) {}
  std::vector<int> label(const LabelRequest&) override {
    if (timeout_) throw LabelerTimeout("no labels arrived");
    throw DataError("annotator unavailable");
  }

 private:
  bool timeout_;
};

struct RoundFixture {
  ExperimentConfig cfg = small_config();
  Dataset ds = load_dataset(cfg);
  TargetSplit split = split_target(cfg, ds, "T1");
  OracleLabeler oracle{ds};
  AdaRoundState state;
  RoundContext ctx;

  RoundFixture() {
    cfg.ssl_pretrain = false;
    cfg.ssl_retrain = false;
    const adapt::ProbeModel probe = source_probe(cfg, ds, pretrained_backbone(cfg), 0);
    state.model = adapt::make_dann(probe, cfg.adapt.domain_hidden, 3);
    state.unlabeled = split.query.unlabeled_copy();
    state.labeled = data::Pool::empty(split.query.dim());
    ctx.cfg = &cfg;
    ctx.source = &ds.pools.at(ds.source);
    ctx.eval = &split.eval;
    ctx.domain = "T1";
    ctx.seed = 7;
    ctx.labeler = &oracle;
  }
};

}  // namespace

TEST_CASE("two rounds label twenty distinct query-pool samples with ground truth") {
  for (const GridCell& cell : default_grid()) {
    INFO(cell.name());
    RoundFixture fx;
    fx.ctx.cell = cell;
    const AdaRoundState one = run_ada_round(fx.state, fx.ctx);
    const AdaRoundState two = run_ada_round(one, fx.ctx);
    CHECK(one.labeled.size() == 10);
    CHECK(two.labeled.size() == 20);
    CHECK(two.round == 2);
    CHECK(two.auprc.size() == 2);
    const std::set<std::int64_t> distinct(two.queried.begin(), two.queried.end());
    CHECK(distinct.size() == 20);
    CHECK(two.unlabeled.size() == fx.state.unlabeled.size() - 20);
    const std::set<std::int64_t> eval_ids(fx.split.eval.ids.begin(), fx.split.eval.ids.end());
    for (std::size_t i = 0; i < two.labeled.size(); ++i) {
      const std::int64_t id = two.labeled.ids[i];
      CHECK_FALSE(eval_ids.contains(id));
      CHECK(std::find(two.unlabeled.ids.begin(), two.unlabeled.ids.end(), id) == two.unlabeled.ids.end());
      CHECK(two.labeled.labels[i] == fx.split.query.labels[fx.split.query.index_of(id)]);
    }
    // The first round's labeled set is kept as a prefix.
    for (std::size_t i = 0; i < 10; ++i) CHECK(two.labeled.ids[i] == one.labeled.ids[i]);
    CHECK(fx.state.labeled.size() == 0);
  }
}

TEST_CASE("a query from the evaluation pool is refused") {
  RoundFixture fx;
  fx.ctx.cell = {sampler::Strategy::uniform, adapt::Method::finetune};
  const data::Pool everything = fx.split.query;
  fx.ctx.eval = &everything;
  CHECK_THROWS_AS(run_ada_round(fx.state, fx.ctx), StateError);
}

TEST_CASE("a labeler timeout leaves the round state untouched") {
  RoundFixture fx;
  fx.ctx.cell = {sampler::Strategy::aada, adapt::Method::dann};
  ThrowingLabeler slow(true);
  fx.ctx.labeler = &slow;
  const AdaRoundState before = fx.state;
  CHECK_THROWS_AS(run_ada_round(fx.state, fx.ctx), LabelerTimeout);
  CHECK(fx.state.unlabeled == before.unlabeled);
  CHECK(fx.state.labeled.size() == 0);
  CHECK(fx.state.round == 0);
  CHECK(fx.state.model.probe.head.bit_equal(before.model.probe.head));
}

TEST_CASE("budget 0 with uniform fine-tuning reproduces the baseline") {
  ExperimentConfig cfg = small_config();
  cfg.budget = 0;
  cfg.grid = {{sampler::Strategy::uniform, adapt::Method::finetune}};
  const Dataset ds = load_dataset(cfg);
  ThrowingLabeler never(false);
  const ExperimentReport r = run_workflow(cfg, ds, never);
  for (const auto& d : r.domains) {
    CHECK(r.cells.at(d).at("uniform+finetune") == r.baseline.at(d));
  }
  for (const auto& row : metrics::delta_table(r.cells, r.baseline)) CHECK(row.delta == 0.0);
}

TEST_CASE("workflow report: baseline, isolation, threads, reruns, emitted files") {
  const ExperimentConfig cfg = small_config();
  const Dataset ds = load_dataset(cfg);
  OracleLabeler oracle(ds);
  const ExperimentReport full = run_workflow(cfg, ds, oracle);

  CHECK(full.domains == std::vector<std::string>{"T1", "T2"});
  CHECK(full.methods.size() == 5);
  for (const auto& d : full.domains) {
    CHECK(full.baseline.at(d).size() == 2);
    for (const auto& m : full.methods) CHECK(full.cells.at(d).at(m).size() == 2);
  }
  CHECK(full.curves.size() == 2 * 2 * 5 * 2);

  SUBCASE("the baseline equals a run with the grid disabled") {
    ExperimentConfig none = cfg;
    none.grid.clear();
    const ExperimentReport base = run_workflow(none, ds, oracle);
    CHECK(base.methods.empty());
    CHECK(base.baseline == full.baseline);
    CHECK(base.curves.empty());
    for (const auto& d : base.domains) CHECK(base.cells.at(d).empty());
  }
  SUBCASE("results for a seed do not depend on the other seeds") {
    ExperimentConfig only = cfg;
    only.seeds = {1};
    const ExperimentReport one = run_workflow(only, ds, oracle);
    for (const auto& d : full.domains) {
      CHECK(one.baseline.at(d)[0] == full.baseline.at(d)[1]);
      for (const auto& m : full.methods) CHECK(one.cells.at(d).at(m)[0] == full.cells.at(d).at(m)[1]);
    }
  }
  SUBCASE("worker threads do not change results") {
    ExperimentConfig threaded = cfg;
    threaded.threads = 3;
    CHECK(run_workflow(threaded, ds, oracle) == full);
  }
  SUBCASE("reruns emit byte-identical files") {
    const fs::path a = fs::temp_directory_path() / "sslada_emit_a";
    const fs::path b = fs::temp_directory_path() / "sslada_emit_b";
    emit_results(full, a);
    emit_results(run_workflow(cfg, ds, oracle), b);
    for (const char* f : {"grid.txt", "grid.json", "deltas.tsv", "curves.tsv"}) {
      INFO(f);
      CHECK(slurp(a / f) == slurp(b / f));
      CHECK_FALSE(slurp(a / f).empty());
    }
    CHECK(parse_grid_json(slurp(a / "grid.json")) == full);
    CHECK(line_count(slurp(a / "deltas.tsv")) == 1 + 2 * 5);
    fs::remove_all(a);
    fs::remove_all(b);
  }
}

TEST_CASE("an empty report gives header-only files") {
  const fs::path dir = fs::temp_directory_path() / "sslada_emit_empty";
  emit_results(ExperimentReport{}, dir);
  CHECK(line_count(slurp(dir / "deltas.tsv")) == 1);
  CHECK(line_count(slurp(dir / "curves.tsv")) == 1);
  CHECK(line_count(slurp(dir / "grid.txt")) == 2);
  CHECK(parse_grid_json(slurp(dir / "grid.json")) == ExperimentReport{});
  fs::remove_all(dir);
}

TEST_CASE("a single cell shows up as a one-row table with the in-memory value") {
  ExperimentReport r;
  r.seeds = {3};
  r.domains = {"HA"};
  r.methods = {"aada+dann"};
  r.baseline["HA"] = {0.25};
  r.cells["HA"]["aada+dann"] = {0.3125};
  r.eval_sizes["HA"] = 279;
  const std::string deltas = format_deltas(r);
  CHECK(deltas == "domain\tmethod\tmethod_mean\tbaseline_mean\tdelta\nHA\taada+dann\t0.3125\t0.25\t0.0625\n");
  const std::string table = format_grid_table(r);
  CHECK(line_count(table) == 3);
  CHECK(table.find("0.3125") != std::string::npos);
  CHECK(parse_grid_json(format_grid_json(r)) == r);
}

TEST_CASE("module errors carry seed, domain and method") {
  const ExperimentConfig cfg = small_config();
  const Dataset ds = load_dataset(cfg);
  ThrowingLabeler broken(false);
  try {
    run_workflow(cfg, ds, broken);
    FAIL("expected an error");
  } catch (const DataError& e) {
    const std::string what = e.what();
    CHECK(what.find("seed 0") != std::string::npos);
    CHECK(what.find("domain T1") != std::string::npos);
    CHECK(what.find("method uniform+finetune") != std::string::npos);
    CHECK(what.find("annotator unavailable") != std::string::npos);
  }
}

TEST_CASE("config round trip and validation") {
  ExperimentConfig cfg = small_config();
  cfg.uda_dann = true;
  cfg.rounds = 3;
  cfg.adapt.target_weight = 0.25;
  cfg.grid = {GridCell::parse("badge+mme"), GridCell::parse("uniform+dann")};
  cfg.labeler.mode = LabelerMode::service;
  const std::string text = dump_config(cfg);
  CHECK(dump_config(parse_config(text)) == text);
  const ExperimentConfig back = parse_config(text);
  CHECK(back.grid == cfg.grid);
  CHECK(back.adapt.target_weight == 0.25);
  CHECK(back.family.domains.size() == 3);

  ExperimentConfig bad = cfg;
  bad.seeds = {1, 1};
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = cfg;
  bad.eval_fraction = 1.0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = cfg;
  bad.grid.push_back(cfg.grid.front());
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = cfg;
  bad.backbone.dims = {5, 16, 8};
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  CHECK_THROWS_AS(parse_config("{\"budget\": 10, \"bogus\": 1}"), ArgumentError);
  CHECK_THROWS_AS(parse_config("{not json"), ArgumentError);
  CHECK_THROWS_AS(GridCell::parse("aada"), ArgumentError);
}

TEST_CASE("datasets from CSV files, with paths relative to the config") {
  const fs::path dir = fs::temp_directory_path() / "sslada_csv_cfg";
  fs::create_directories(dir / "data");
  const ExperimentConfig gen = small_config();
  const Dataset ds = load_dataset(gen);
  ExperimentConfig cfg = gen;
  for (const std::string& name : {std::string("S"), std::string("T1"), std::string("T2")}) {
    data::write_csv(ds.pools.at(name), dir / "data" / (name + ".csv"));
    cfg.datasets.push_back({name, fs::path("data") / (name + ".csv"),
                            name == "S" ? data::DomainRole::source : data::DomainRole::target});
  }
  std::ofstream(dir / "config.json") << dump_config(cfg);
  const ExperimentConfig loaded = load_config(dir / "config.json");
  const Dataset again = load_dataset(loaded);
  CHECK(again.source == "S");
  CHECK(again.targets == ds.targets);
  for (const auto& [name, pool] : ds.pools) CHECK(again.pools.at(name) == pool);
  fs::remove_all(dir);
}
