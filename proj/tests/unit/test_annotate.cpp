#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "annotator.hpp"
#include "sslada/annotate.hpp"

using namespace sslada;
using namespace sslada::annotate;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path fresh_journal(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "sslada_annotate" / name;
  fs::remove_all(dir);
  return dir / "annotations.jsonl";
}

harness::LabelRequest request(std::size_t round = 1) {
  harness::LabelRequest r;
  r.domain = "HA";
  r.cell = "aada+dann";
  r.seed = 2;
  r.round = round;
  r.ids = {41, 7, 1003};
  r.features = Tensor({3, 2});
  const double values[] = {0.1, -2.5, 1.0 / 3.0, 1e-300, -0.0, 12345.678901234567};
  for (std::size_t i = 0; i < 6; ++i) r.features.data()[i] = values[i];
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Served {
  AnnotationStore store;
  AnnotationServer server{store};
  httplib::Client client;

  explicit Served(const fs::path& journal) : store(journal), client("127.0.0.1", server.start("127.0.0.1", 0)) {}

  httplib::Result post_label(const json& body) { return client.Post("/labels", body.dump(), "application/json"); }
};

harness::ExperimentConfig small_config() {
  harness::ExperimentConfig cfg;
  data::DomainFamily f;
  f.seed = 4;
  f.base.dim = 8;
  f.base.latent_dim = 3;
  f.domains = {{"S", 400, 0.3, std::nullopt, {}, data::DomainRole::source},
               {"T1", 200, 0.3, std::nullopt, {0.4, {}, 1.2}, data::DomainRole::target}};
  cfg.family = f;
  cfg.backbone.dims = {8, 16, 8};
  cfg.ssl_pretrain = false;
  cfg.ssl_retrain = false;
  cfg.adapt.steps = 10;
  cfg.adapt.batch_size = 16;
  cfg.adapt.domain_fit_steps = 10;
  cfg.probe.max_epochs = 10;
  cfg.seeds = {0};
  cfg.rounds = 2;
  cfg.grid = {harness::GridCell::parse("aada+dann"), harness::GridCell::parse("clue+finetune")};
  return cfg;
}

}  // namespace

TEST_CASE("HTTP endpoints without a round") {
  Served s(fresh_journal("idle"));
  CHECK(s.client.Get("/rounds/current")->status == 404);
  CHECK(s.client.Get("/rounds/current/queries")->status == 404);
  CHECK(s.post_label({{"sample_id", 1}, {"label", 0}})->status == 404);
  auto pre = s.client.Options("/labels");
  CHECK(pre->status == 204);
  CHECK(pre->get_header_value("Access-Control-Allow-Origin") == "*");
}

TEST_CASE("HTTP labeling round") {
  Served s(fresh_journal("round"));
  const harness::LabelRequest req = request();
  s.store.open_round(req);

  auto st = s.client.Get("/rounds/current");
  REQUIRE(st->status == 200);
  const json status = json::parse(st->body);
  CHECK(status.at("schema_version") == kSchemaVersion);
  CHECK(status.at("pending") == 3);
  CHECK(status.at("budget") == 3);
  CHECK(status.at("labeled") == 0);
  CHECK(status.at("phase") == "awaiting_labels");
  CHECK(status.at("cell") == "aada+dann");
  CHECK(status.at("seed") == 2);

  const json queries = json::parse(s.client.Get("/rounds/current/queries")->body).at("queries");
  REQUIRE(queries.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(queries[i].at("sample_id") == req.ids[i]);
    CHECK(queries[i].at("status") == "pending");
    const auto f = queries[i].at("features").get<std::vector<double>>();
    REQUIRE(f.size() == 2);
    for (std::size_t c = 0; c < 2; ++c) CHECK(f[c] == req.features.at(i, c));
  }

  auto ok = s.post_label({{"sample_id", 7}, {"label", 1}, {"annotator", "ann"}});
  CHECK(ok->status == 200);
  CHECK(json::parse(ok->body).at("pending") == 2);

  auto dup = s.post_label({{"sample_id", 7}, {"label", 0}, {"annotator", "other"}});
  CHECK(dup->status == 409);
  CHECK(json::parse(dup->body).at("stored_label") == 1);

  CHECK(s.post_label({{"sample_id", 999}, {"label", 1}})->status == 422);
  CHECK(s.post_label({{"sample_id", 41}, {"label", 2}})->status == 422);
  CHECK(s.post_label({{"sample_id", 41}, {"label", "1"}})->status == 422);
  CHECK(s.client.Post("/labels", "{\"sample_id\": 41,", "application/json")->status == 400);
  CHECK(s.post_label({{"label", 1}})->status == 400);
  CHECK(s.post_label(json::array({41, 1}))->status == 400);
  CHECK(s.store.status()->pending == 2);

  CHECK(s.post_label({{"sample_id", 41}, {"label", 0}})->status == 200);
  CHECK(s.post_label({{"sample_id", 1003}, {"label", 1}})->status == 200);
  CHECK(json::parse(s.client.Get("/rounds/current")->body).at("phase") == "complete");
  CHECK(s.store.close_round() == std::vector<int>{0, 1, 1});
  CHECK(s.client.Get("/rounds/current")->status == 404);
}

TEST_CASE("store state machine") {
  AnnotationStore store(fresh_journal("machine"));
  CHECK_FALSE(store.has_round());
  CHECK(store.submit(1, 1, "a").result == SubmitResult::no_round);
  CHECK_THROWS_AS(store.close_round(), StateError);
  store.open_round(request());
  CHECK_THROWS_AS(store.open_round(request(2)), StateError);
  CHECK(store.matches(request()));
  CHECK_FALSE(store.matches(request(2)));
  CHECK_THROWS_AS(store.close_round(), StateError);
  CHECK_FALSE(store.wait_complete(0.01));
  store.abort_round();
  CHECK_FALSE(store.has_round());

  harness::LabelRequest bad = request();
  bad.ids.pop_back();
  CHECK_THROWS_AS(store.open_round(bad), ArgumentError);

  harness::LabelRequest empty = request();
  empty.ids.clear();
  empty.features = Tensor({0, 2});
  store.open_round(empty);
  CHECK(store.status()->phase == "complete");
  CHECK(store.wait_complete(0.0));
  CHECK(store.close_round().empty());
}

TEST_CASE("journal replay restores an open round, dropping a torn line") {
  const fs::path journal = fresh_journal("replay");
  {
    AnnotationStore store(journal);
    store.open_round(request());
    CHECK(store.submit(1003, 0, "ann").result == SubmitResult::accepted);
  }
  std::ofstream(journal, std::ios::app) << R"({"schema_version":1,"type":"label","sample_id":41,"lab)";
  {
    AnnotationStore store(journal);
    REQUIRE(store.has_round());
    CHECK(store.matches(request()));
    const RoundStatus s = *store.status();
    CHECK(s.pending == 2);
    CHECK(s.labeled == 1);
    CHECK(s.phase == "awaiting_labels");
    const auto q = store.queries();
    CHECK(q[2].status == QueryStatus::labeled);
    CHECK(q[2].label == 0);
    CHECK(q[2].annotator == "ann");
    CHECK(std::signbit(q[2].features[0]));
    CHECK(q[2].features[1] == 12345.678901234567);
    CHECK(q[1].features[1] == 1e-300);
    CHECK(slurp(journal).back() == '\n');
    CHECK(store.submit(1003, 1, "again").result == SubmitResult::duplicate);
    CHECK(store.submit(41, 1, "ann").result == SubmitResult::accepted);
    CHECK(store.submit(7, 1, "ann").result == SubmitResult::accepted);
    CHECK(store.close_round() == std::vector<int>{1, 1, 0});
  }
  AnnotationStore store(journal);
  CHECK_FALSE(store.has_round());
  CHECK(store.committed(request()) == std::vector<int>{1, 1, 0});
  CHECK_FALSE(store.committed(request(2)).has_value());
}

TEST_CASE("a corrupt journal is rejected") {
  const fs::path journal = fresh_journal("corrupt");
  fs::create_directories(journal.parent_path());
  std::ofstream(journal) << R"({"schema_version":1,"type":"label","sample_id":4,"label":1,"annotator":""})" << "\n";
  CHECK_THROWS_AS(AnnotationStore{journal}, DataError);
  std::ofstream(journal) << R"({"schema_version":9,"type":"abort"})" << "\n";
  CHECK_THROWS_AS(AnnotationStore{journal}, DataError);
  std::ofstream(journal) << "not json\n";
  CHECK_THROWS_AS(AnnotationStore{journal}, DataError);
}

TEST_CASE("service labeler times out and abandons the round") {
  const fs::path journal = fresh_journal("timeout");
  AnnotationStore store(journal);
  ServiceLabeler labeler(store, 0.05);
  CHECK_THROWS_AS(labeler.label(request()), harness::LabelerTimeout);
  CHECK_FALSE(store.has_round());
  CHECK(slurp(journal).find(R"("type":"abort")") != std::string::npos);
}

TEST_CASE("service labeler over HTTP matches the oracle, and a restart replays the journal") {
  const harness::ExperimentConfig cfg = small_config();
  const harness::Dataset ds = harness::load_dataset(cfg);
  harness::OracleLabeler oracle(ds);
  const harness::ExperimentReport expected = harness::run_workflow(cfg, ds, oracle);

  std::map<std::int64_t, int> truth;
  for (const auto& [name, pool] : ds.pools) {
    for (std::size_t i = 0; i < pool.size(); ++i) truth[pool.ids[i]] = pool.labels[i];
  }
  const fs::path journal = fresh_journal("service");
  {
    Served s(journal);
    ServiceLabeler labeler(s.store, 30.0);
    testing::ScriptedAnnotator annotator(s.server.port(), truth);
    CHECK(harness::run_workflow(cfg, ds, labeler) == expected);
    CHECK(annotator.posted() == cfg.grid.size() * cfg.rounds * cfg.budget);
  }
  // Every round is committed in the journal, so no annotator is needed.
  AnnotationStore store(journal);
  ServiceLabeler replay(store, 0.01);
  CHECK(harness::run_workflow(cfg, ds, replay) == expected);
}
