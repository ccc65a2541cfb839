// Command-line driver for the workflow steps.
//
// Exit codes: 0 success, 1 runtime or data error, 2 bad usage or config,
// 3 labeling timed out in service mode.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "sslada/annotate.hpp"
#include "sslada/checkpoint.hpp"
#include "sslada/harness.hpp"

namespace fs = std::filesystem;
using namespace sslada;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitTimeout = 3;

struct Options {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::string labeler;
  std::optional<int> port;
  std::string backbone;
  std::string input;
  bool quiet = false;
};

harness::ExperimentConfig load(const Options& o) {
  harness::ExperimentConfig cfg = o.config.empty() ? harness::ExperimentConfig{} : harness::load_config(o.config);
  if (o.seed) cfg.seeds = {*o.seed};
  if (!o.labeler.empty()) cfg.labeler.mode = harness::parse_labeler_mode(o.labeler);
  if (o.port) cfg.labeler.port = *o.port;
  cfg.validate();
  return cfg;
}

harness::ProgressFn progress(const Options& o) {
  if (o.quiet) return {};
  const auto t0 = std::chrono::steady_clock::now();
  return [t0](const std::string& msg) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "[%7.1fs] %s\n", s, msg.c_str());
  };
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- commands

int cmd_gen_data(const Options& o) {
  harness::ExperimentConfig cfg = o.config.empty() ? harness::ExperimentConfig{} : harness::load_config(o.config);
  if (!cfg.datasets.empty()) throw ArgumentError("gen-data needs a synthetic family, not dataset files");
  if (o.seed) cfg.family.seed = *o.seed;
  const fs::path out = o.out;
  const harness::Dataset ds = harness::load_dataset(cfg);
  std::vector<harness::DatasetFile> files;
  auto emit = [&](const std::string& name, data::DomainRole role) {
    const fs::path rel = fs::path("data") / (name + ".csv");
    fs::create_directories(out / "data");
    data::write_csv(ds.pools.at(name), out / rel);
    files.push_back({name, rel, role});
    std::printf("%-4s %6zu rows  %5zu positive  -> %s\n", name.c_str(), ds.pools.at(name).size(),
                static_cast<std::size_t>(std::count(ds.pools.at(name).labels.begin(),
                                                    ds.pools.at(name).labels.end(), 1)),
                (out / rel).string().c_str());
  };
  emit(ds.source, data::DomainRole::source);
  for (const auto& t : ds.targets) emit(t, data::DomainRole::target);
  cfg.datasets = files;
  write_text(out / "config.json", harness::dump_config(cfg));
  std::printf("config with dataset paths -> %s\n", (out / "config.json").string().c_str());
  return 0;
}

int cmd_ssl_train(const Options& o) {
  const harness::ExperimentConfig cfg = load(o);
  const auto say = progress(o);
  const harness::Dataset ds = harness::load_dataset(cfg);
  const std::uint64_t seed = cfg.seeds.front();
  if (say) say("pretraining on the generic corpus");
  const Network pretrained = harness::pretrained_backbone(cfg);
  Checkpoint ck;
  ck.networks.emplace("pretrained", pretrained);
  if (cfg.ssl_retrain) {
    if (say) say("retraining on in-domain unlabeled data, seed " + std::to_string(seed));
    ck.networks.emplace("backbone", harness::retrained_backbone(cfg, ds, pretrained, seed));
  } else {
    ck.networks.emplace("backbone", pretrained);
  }
  ck.meta["seed"] = std::to_string(seed);
  ck.meta["ssl_pretrain"] = cfg.ssl_pretrain ? "true" : "false";
  ck.meta["ssl_retrain"] = cfg.ssl_retrain ? "true" : "false";
  fs::create_directories(o.out);
  const fs::path path = fs::path(o.out) / "backbone.ckpt";
  save_checkpoint(ck, path);
  std::printf("backbone -> %s\n", path.string().c_str());
  return 0;
}

int cmd_probe(const Options& o) {
  const harness::ExperimentConfig cfg = load(o);
  const auto say = progress(o);
  const harness::Dataset ds = harness::load_dataset(cfg);
  const std::uint64_t seed = cfg.seeds.front();
  Network backbone;
  if (!o.backbone.empty()) {
    backbone = load_checkpoint(o.backbone).network("backbone");
  } else {
    if (say) say("no --backbone given; training one");
    backbone = harness::pretrained_backbone(cfg);
    if (cfg.ssl_retrain) backbone = harness::retrained_backbone(cfg, ds, backbone, seed);
  }
  if (say) say("fitting the source probe on " + ds.source);
  const adapt::ProbeModel probe = harness::source_probe(cfg, ds, std::move(backbone), seed);
  Checkpoint ck;
  ck.networks.emplace("backbone", probe.backbone);
  ck.networks.emplace("head", probe.head);
  ck.meta["seed"] = std::to_string(seed);
  ck.meta["source"] = ds.source;
  fs::create_directories(o.out);
  save_checkpoint(ck, fs::path(o.out) / "probe.ckpt");

  std::string tsv = "domain\tn_eval\tauprc\n";
  for (const auto& t : ds.targets) {
    const harness::TargetSplit split = harness::split_target(cfg, ds, t);
    const double a = metrics::auprc(probe.positive_scores(split.eval.features), split.eval.labels);
    tsv += t + "\t" + std::to_string(split.eval.size()) + "\t" + format_double(a) + "\n";
  }
  write_text(fs::path(o.out) / "baseline.tsv", tsv);
  std::cout << tsv;
  return 0;
}

int run_experiment(const Options& o, bool force_service) {
  harness::ExperimentConfig cfg = load(o);
  if (force_service) cfg.labeler.mode = harness::LabelerMode::service;
  const auto say = progress(o);
  const harness::Dataset ds = harness::load_dataset(cfg);
  const fs::path out = o.out;
  fs::create_directories(out);
  write_text(out / "config.json", harness::dump_config(cfg));

  harness::ExperimentReport report;
  if (cfg.labeler.mode == harness::LabelerMode::oracle) {
    harness::OracleLabeler oracle(ds);
    report = harness::run_workflow(cfg, ds, oracle, say);
  } else {
    const fs::path journal = cfg.labeler.journal.is_relative() ? out / cfg.labeler.journal : cfg.labeler.journal;
    annotate::AnnotationStore store(journal);
    annotate::AnnotationServer server(store);
    const int port = server.start(cfg.labeler.host, cfg.labeler.port);
    std::fprintf(stderr, "annotation service on http://%s:%d (journal %s)\n", cfg.labeler.host.c_str(), port,
                 journal.string().c_str());
    annotate::ServiceLabeler labeler(store, cfg.labeler.timeout_seconds);
    report = harness::run_workflow(cfg, ds, labeler, say);
    server.stop();
  }
  harness::emit_results(report, out);
  std::cout << harness::format_grid_table(report);
  return 0;
}

int cmd_report(const Options& o) {
  const fs::path input = o.input.empty() ? fs::path(o.out) / "grid.json" : fs::path(o.input);
  const harness::ExperimentReport report = harness::parse_grid_json(read_text(input));
  harness::emit_results(report, o.out);
  std::cout << harness::format_grid_table(report) << "\n" << harness::format_deltas(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised retraining and active domain adaptation workflow"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool labeler) {
    sub->add_option("-c,--config", o.config, "experiment config (JSON); defaults when omitted")
        ->check(CLI::ExistingFile);
    sub->add_option("-o,--out", o.out, "output directory")->capture_default_str();
    sub->add_option("-s,--seed", o.seed, "run this single seed instead of the configured list");
    sub->add_flag("-q,--quiet", o.quiet, "no progress messages");
    if (labeler) {
      sub->add_option("-l,--labeler", o.labeler, "oracle or service")
          ->check(CLI::IsMember({"oracle", "service"}));
      sub->add_option("-p,--port", o.port, "annotation service port (0 picks a free one)");
    }
  };

  auto* gen = app.add_subcommand("gen-data", "write the synthetic domain family as CSV files plus a config");
  common(gen, false);
  auto* ssl = app.add_subcommand("ssl-train", "self-supervised pretraining and in-domain retraining");
  common(ssl, false);
  auto* probe = app.add_subcommand("probe", "frozen-backbone linear probe on the source domain");
  common(probe, false);
  probe->add_option("-b,--backbone", o.backbone, "checkpoint from ssl-train")->check(CLI::ExistingFile);
  auto* ada = app.add_subcommand("ada-run", "full workflow over seeds, targets and ADA methods");
  common(ada, true);
  auto* report = app.add_subcommand("report", "rebuild tables from a grid.json");
  report->add_option("-o,--out", o.out, "output directory")->capture_default_str();
  report->add_option("-i,--input", o.input, "grid.json to read (default <out>/grid.json)");
  auto* serve = app.add_subcommand("serve", "ada-run with labels collected over HTTP");
  common(serve, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*ssl) return cmd_ssl_train(o);
    if (*probe) return cmd_probe(o);
    if (*ada) return run_experiment(o, false);
    if (*report) return cmd_report(o);
    if (*serve) return run_experiment(o, true);
  } catch (const harness::LabelerTimeout& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitTimeout;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return kExitUsage;
}
