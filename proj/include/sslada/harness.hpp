#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "sslada/adapt.hpp"
#include "sslada/datasets.hpp"
#include "sslada/dino.hpp"
#include "sslada/error.hpp"
#include "sslada/metrics.hpp"
#include "sslada/sampler.hpp"

namespace sslada::harness {

/// One column of the ADA grid: an acquisition strategy paired with an
/// adaptation method. Written "strategy+method", e.g. "aada+dann".
struct GridCell {
  sampler::Strategy strategy = sampler::Strategy::uniform;
  adapt::Method method = adapt::Method::finetune;

  std::string name() const;
  static GridCell parse(const std::string& text);
  bool operator==(const GridCell&) const = default;
};

/// Five columns compared in the default experiment.
std::vector<GridCell> default_grid();

enum class LabelerMode { oracle, service };

LabelerMode parse_labeler_mode(const std::string& name);
const char* labeler_mode_name(LabelerMode m);

struct BackboneConfig {
  std::vector<std::size_t> dims{16, 64, 32};
  std::vector<Activation> activations{Activation::relu, Activation::relu};
  std::uint64_t seed = 1;
};

struct CorpusConfig {
  std::size_t n = 4000;
  std::size_t clusters = 8;
  std::uint64_t seed = 3;
};

/// A CSV dataset standing in for one domain.
struct DatasetFile {
  std::string name;
  std::filesystem::path path;
  data::DomainRole role = data::DomainRole::target;
};

struct LabelerConfig {
  LabelerMode mode = LabelerMode::oracle;
  std::string host = "127.0.0.1";
  int port = 8080;
  double timeout_seconds = 3600.0;
  std::filesystem::path journal = "annotations.jsonl";
};

struct ExperimentConfig {
  /// Synthetic family; ignored when `datasets` is non-empty.
  data::DomainFamily family = data::default_family();
  std::vector<DatasetFile> datasets;

  bool ssl_pretrain = true;
  bool ssl_retrain = true;
  bool uda_dann = false;
  /// With `uda_dann`, start ADA rounds from the DANN-aligned model (true) or
  /// from the source probe (false).
  bool ada_from_uda = true;
  std::size_t uda_steps = 200;

  BackboneConfig backbone;
  CorpusConfig corpus;
  dino::SslConfig pretrain = desk_ssl_config();
  dino::SslConfig retrain = desk_ssl_config();
  adapt::ProbeConfig probe;
  adapt::AdaptConfig adapt;
  double clue_temperature = 1.0;
  sampler::AadaMode aada_mode = sampler::AadaMode::top_b;

  std::vector<GridCell> grid = default_grid();
  std::size_t budget = 10;
  std::size_t rounds = 1;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  /// Held-out share of each target domain, split off before any round.
  double eval_fraction = 0.5;
  std::uint64_t split_seed = 11;

  LabelerConfig labeler;
  std::size_t threads = 1;

  /// Self-distillation settings sized for a single CPU core.
  static dino::SslConfig desk_ssl_config();
  void validate() const;
};

/// Relative dataset paths resolve against the config file's directory.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& json_text);
std::string dump_config(const ExperimentConfig& cfg);

/// Every domain's pool with ground-truth labels, plus the role split.
struct Dataset {
  std::string source;
  std::vector<std::string> targets;
  std::map<std::string, data::Pool> pools;
};

Dataset load_dataset(const ExperimentConfig& cfg);

/// A target domain divided into the query pool (labels hidden from the
/// workflow, kept here for the oracle) and the held-out evaluation pool.
struct TargetSplit {
  data::Pool query;
  data::Pool eval;
};

TargetSplit split_target(const ExperimentConfig& cfg, const Dataset& ds, const std::string& domain);

/// A round's labeling request.
struct LabelRequest {
  std::string domain;
  std::string cell;
  std::uint64_t seed = 0;
  std::size_t round = 0;
  std::vector<std::int64_t> ids;
  Tensor features;  // one row per id
};

/// Raised when a labeler gives up waiting; the round is abandoned.
class LabelerTimeout : public StateError {
 public:
  using StateError::StateError;
};

class Labeler {
 public:
  virtual ~Labeler() = default;
  /// One label (0 or 1) per requested id, in request order.
  virtual std::vector<int> label(const LabelRequest& request) = 0;
};

/// Answers instantly from ground truth.
class OracleLabeler final : public Labeler {
 public:
  explicit OracleLabeler(const Dataset& ds);
  std::vector<int> label(const LabelRequest& request) override;

 private:
  std::unordered_map<std::int64_t, int> truth_;
};

/// State carried between ADA rounds of one (seed, domain, cell).
struct AdaRoundState {
  std::size_t round = 0;
  data::Pool unlabeled;  // query pool minus queried ids, labels stripped
  data::Pool labeled;    // queried ids with committed labels
  std::vector<std::int64_t> queried;
  adapt::DannModel model;
  /// AUPRC on the eval pool: entry 0 before any round, then one per round.
  std::vector<double> auprc;
};

struct RoundContext {
  const ExperimentConfig* cfg = nullptr;
  const data::Pool* source = nullptr;
  const data::Pool* eval = nullptr;
  std::string domain;
  GridCell cell;
  std::uint64_t seed = 0;
  Labeler* labeler = nullptr;
};

/// Selects `budget` ids, resolves labels, adapts, evaluates. The input state
/// is left untouched; a labeler timeout propagates with nothing committed.
/// Throws StateError if a queried id belongs to the eval pool.
AdaRoundState run_ada_round(const AdaRoundState& state, const RoundContext& ctx);

/// Query set for the current round (exposed for tests).
sampler::QuerySet select_queries(AdaRoundState& state, const RoundContext& ctx);

struct CurvePoint {
  std::uint64_t seed = 0;
  std::string domain;
  std::string method;
  std::size_t round = 0;
  std::size_t labeled = 0;
  double auprc = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

struct ExperimentReport {
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> domains;  // targets, in dataset order
  std::vector<std::string> methods;  // grid columns (plus "uda-dann" when enabled)
  std::map<std::string, std::vector<double>> baseline;  // domain -> per-seed AUPRC
  metrics::ResultGrid cells;                            // domain -> method -> per-seed AUPRC
  std::map<std::string, std::size_t> eval_sizes;
  std::vector<CurvePoint> curves;

  bool operator==(const ExperimentReport&) const = default;
};

/// Generic-corpus pretraining (or the raw initialization when disabled).
/// Independent of the experiment seeds.
Network pretrained_backbone(const ExperimentConfig& cfg);

/// Optional in-domain retraining on every domain's unlabeled samples.
Network retrained_backbone(const ExperimentConfig& cfg, const Dataset& ds, const Network& pretrained,
                           std::uint64_t seed);

/// Linear probe on the labeled source domain for one experiment seed.
adapt::ProbeModel source_probe(const ExperimentConfig& cfg, const Dataset& ds, Network backbone,
                               std::uint64_t seed);

using ProgressFn = std::function<void(const std::string& message)>;

/// Full workflow over every seed, target and grid cell. Module errors are
/// rethrown with (seed, domain, method) context.
ExperimentReport run_workflow(const ExperimentConfig& cfg, const Dataset& ds, Labeler& labeler,
                              const ProgressFn& progress = {});

/// Probe AUPRC per target with and without in-domain retraining, on the
/// same eval splits as run_workflow.
struct RetrainComparison {
  std::vector<std::string> domains;
  std::map<std::string, std::vector<double>> without_retrain;
  std::map<std::string, std::vector<double>> with_retrain;
};

RetrainComparison compare_retraining(const ExperimentConfig& cfg, const Dataset& ds,
                                     const ProgressFn& progress = {});

/// Writes grid.txt, grid.json, deltas.tsv and curves.tsv into `out_dir`.
void emit_results(const ExperimentReport& report, const std::filesystem::path& out_dir);
std::string format_grid_table(const ExperimentReport& report);
std::string format_grid_json(const ExperimentReport& report);
std::string format_deltas(const ExperimentReport& report);
std::string format_curves(const ExperimentReport& report);
ExperimentReport parse_grid_json(const std::string& text);

}  // namespace sslada::harness
