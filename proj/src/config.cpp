// JSON experiment configuration. Every key is optional; omitted keys keep
// their defaults and unknown keys are rejected so typos do not go unnoticed.

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sslada/harness.hpp"

namespace sslada::harness {
namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ArgumentError("config: '" + where + "' must be an object");
  std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ArgumentError("config: unknown key '" + where + "." + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

json pair_json(const std::pair<double, double>& p) { return json::array({p.first, p.second}); }

void read_pair(const json& j, const char* key, std::pair<double, double>& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2) throw ArgumentError(std::string("config: '") + key + "' must be [lo, hi]");
  out = {v[0].get<double>(), v[1].get<double>()};
}

// ---- optimizer / schedule

json optimizer_json(const OptimizerConfig& o) {
  return {{"kind", optimizer_kind_name(o.kind)}, {"momentum", o.momentum}, {"beta1", o.beta1},
          {"beta2", o.beta2},  {"epsilon", o.epsilon},  {"weight_decay", o.weight_decay}};
}

OptimizerConfig optimizer_from(const json& j, OptimizerConfig o) {
  check_keys(j, "optimizer", {"kind", "momentum", "beta1", "beta2", "epsilon", "weight_decay"});
  if (j.contains("kind")) o.kind = parse_optimizer_kind(j.at("kind").get<std::string>());
  read(j, "momentum", o.momentum);
  read(j, "beta1", o.beta1);
  read(j, "beta2", o.beta2);
  read(j, "epsilon", o.epsilon);
  read(j, "weight_decay", o.weight_decay);
  return o;
}

// ---- dino

const char* schedule_name(dino::LrSchedule s) {
  return s == dino::LrSchedule::one_cycle ? "one_cycle" : "constant";
}

dino::LrSchedule parse_schedule(const std::string& s) {
  if (s == "one_cycle") return dino::LrSchedule::one_cycle;
  if (s == "constant") return dino::LrSchedule::constant;
  throw ArgumentError("config: unknown schedule '" + s + "'");
}

json stage_json(const dino::StageConfig& s) {
  return {{"epochs", s.epochs},
          {"backbone_lr", s.backbone_lr},
          {"projector_lr", s.projector_lr},
          {"freeze_backbone", s.freeze_backbone},
          {"schedule", schedule_name(s.schedule)}};
}

dino::StageConfig stage_from(const json& j, dino::StageConfig s) {
  check_keys(j, "stage", {"epochs", "backbone_lr", "projector_lr", "freeze_backbone", "schedule"});
  read(j, "epochs", s.epochs);
  read(j, "backbone_lr", s.backbone_lr);
  read(j, "projector_lr", s.projector_lr);
  read(j, "freeze_backbone", s.freeze_backbone);
  if (j.contains("schedule")) s.schedule = parse_schedule(j.at("schedule").get<std::string>());
  return s;
}

json ssl_json(const dino::SslConfig& c) {
  return {{"views",
           {{"n_global", c.views.n_global},
            {"n_local", c.views.n_local},
            {"global_scale", pair_json(c.views.global_scale)},
            {"local_scale", pair_json(c.views.local_scale)},
            {"noise_std", c.views.noise_std},
            {"mask_fraction", c.views.mask_fraction}}},
          {"projector",
           {{"hidden_dim", c.projector.hidden_dim},
            {"bottleneck_dim", c.projector.bottleneck_dim},
            {"output_dim", c.projector.output_dim}}},
          {"t_student", c.t_student},
          {"t_teacher", c.t_teacher},
          {"ema_momentum", c.ema_momentum},
          {"center_momentum", c.center_momentum},
          {"centering", c.centering},
          {"stage1", stage_json(c.stage1)},
          {"stage2", stage_json(c.stage2)},
          {"batch_size", c.batch_size},
          {"samples_per_epoch", c.samples_per_epoch},
          {"optimizer", optimizer_json(c.optimizer)},
          {"warmup_fraction", c.warmup_fraction},
          {"probe_size", c.probe_size},
          {"collapse_floor_fraction", c.collapse_floor_fraction},
          {"seed", c.seed}};
}

dino::SslConfig ssl_from(const json& j, dino::SslConfig c) {
  check_keys(j, "ssl",
             {"views", "projector", "t_student", "t_teacher", "ema_momentum", "center_momentum",
              "centering", "stage1", "stage2", "batch_size", "samples_per_epoch", "optimizer",
              "warmup_fraction", "probe_size", "collapse_floor_fraction", "seed"});
  if (j.contains("views")) {
    const json& v = j.at("views");
    check_keys(v, "views", {"n_global", "n_local", "global_scale", "local_scale", "noise_std", "mask_fraction"});
    read(v, "n_global", c.views.n_global);
    read(v, "n_local", c.views.n_local);
    read_pair(v, "global_scale", c.views.global_scale);
    read_pair(v, "local_scale", c.views.local_scale);
    read(v, "noise_std", c.views.noise_std);
    read(v, "mask_fraction", c.views.mask_fraction);
  }
  if (j.contains("projector")) {
    const json& p = j.at("projector");
    check_keys(p, "projector", {"hidden_dim", "bottleneck_dim", "output_dim"});
    read(p, "hidden_dim", c.projector.hidden_dim);
    read(p, "bottleneck_dim", c.projector.bottleneck_dim);
    read(p, "output_dim", c.projector.output_dim);
  }
  read(j, "t_student", c.t_student);
  read(j, "t_teacher", c.t_teacher);
  read(j, "ema_momentum", c.ema_momentum);
  read(j, "center_momentum", c.center_momentum);
  read(j, "centering", c.centering);
  if (j.contains("stage1")) c.stage1 = stage_from(j.at("stage1"), c.stage1);
  if (j.contains("stage2")) c.stage2 = stage_from(j.at("stage2"), c.stage2);
  read(j, "batch_size", c.batch_size);
  read(j, "samples_per_epoch", c.samples_per_epoch);
  if (j.contains("optimizer")) c.optimizer = optimizer_from(j.at("optimizer"), c.optimizer);
  read(j, "warmup_fraction", c.warmup_fraction);
  read(j, "probe_size", c.probe_size);
  read(j, "collapse_floor_fraction", c.collapse_floor_fraction);
  read(j, "seed", c.seed);
  return c;
}

// ---- probe / adapt

json probe_json(const adapt::ProbeConfig& p) {
  return {{"max_epochs", p.max_epochs}, {"batch_size", p.batch_size},
          {"lr", p.lr},                 {"optimizer", optimizer_json(p.optimizer)},
          {"plateau_tol", p.plateau_tol}, {"patience", p.patience},
          {"seed", p.seed}};
}

adapt::ProbeConfig probe_from(const json& j, adapt::ProbeConfig p) {
  check_keys(j, "probe", {"max_epochs", "batch_size", "lr", "optimizer", "plateau_tol", "patience", "seed"});
  read(j, "max_epochs", p.max_epochs);
  read(j, "batch_size", p.batch_size);
  read(j, "lr", p.lr);
  if (j.contains("optimizer")) p.optimizer = optimizer_from(j.at("optimizer"), p.optimizer);
  read(j, "plateau_tol", p.plateau_tol);
  read(j, "patience", p.patience);
  read(j, "seed", p.seed);
  return p;
}

json adapt_json(const adapt::AdaptConfig& a) {
  return {{"steps", a.steps},
          {"batch_size", a.batch_size},
          {"lr", a.lr},
          {"backbone_lr_scale", a.backbone_lr_scale},
          {"domain_lr", a.domain_lr},
          {"optimizer", optimizer_json(a.optimizer)},
          {"adversarial_trainable_layers", a.adversarial_trainable_layers},
          {"finetune_backbone", a.finetune_backbone},
          {"mix_source", a.mix_source},
          {"target_weight", a.target_weight},
          {"domain_weight", a.domain_weight},
          {"lambda_max", a.lambda_max},
          {"lambda_ent", a.lambda_ent},
          {"domain_hidden", a.domain_hidden},
          {"domain_fit_steps", a.domain_fit_steps}};
}

adapt::AdaptConfig adapt_from(const json& j, adapt::AdaptConfig a) {
  check_keys(j, "adapt",
             {"steps", "batch_size", "lr", "backbone_lr_scale", "domain_lr", "optimizer",
              "adversarial_trainable_layers", "finetune_backbone", "mix_source", "target_weight", "domain_weight",
              "lambda_max", "lambda_ent", "domain_hidden", "domain_fit_steps"});
  read(j, "steps", a.steps);
  read(j, "batch_size", a.batch_size);
  read(j, "lr", a.lr);
  read(j, "backbone_lr_scale", a.backbone_lr_scale);
  read(j, "domain_lr", a.domain_lr);
  if (j.contains("optimizer")) a.optimizer = optimizer_from(j.at("optimizer"), a.optimizer);
  read(j, "adversarial_trainable_layers", a.adversarial_trainable_layers);
  read(j, "finetune_backbone", a.finetune_backbone);
  read(j, "mix_source", a.mix_source);
  read(j, "target_weight", a.target_weight);
  read(j, "domain_weight", a.domain_weight);
  read(j, "lambda_max", a.lambda_max);
  read(j, "lambda_ent", a.lambda_ent);
  read(j, "domain_hidden", a.domain_hidden);
  read(j, "domain_fit_steps", a.domain_fit_steps);
  return a;
}

// ---- family

const char* role_name(data::DomainRole r) { return r == data::DomainRole::source ? "source" : "target"; }

data::DomainRole parse_role(const std::string& s) {
  if (s == "source") return data::DomainRole::source;
  if (s == "target") return data::DomainRole::target;
  throw ArgumentError("config: unknown domain role '" + s + "'");
}

json base_json(const data::BaseDistribution& b) {
  return {{"kind", b.kind == data::BaseKind::moons ? "moons" : "blobs"},
          {"dim", b.dim},
          {"latent_dim", b.latent_dim},
          {"negative_clusters", b.negative_clusters},
          {"positive_clusters", b.positive_clusters},
          {"cluster_separation", b.cluster_separation},
          {"cluster_spread", b.cluster_spread},
          {"noise", b.noise}};
}

data::BaseDistribution base_from(const json& j, data::BaseDistribution b) {
  check_keys(j, "base",
             {"kind", "dim", "latent_dim", "negative_clusters", "positive_clusters",
              "cluster_separation", "cluster_spread", "noise"});
  if (j.contains("kind")) {
    const auto k = j.at("kind").get<std::string>();
    if (k == "blobs") b.kind = data::BaseKind::blobs;
    else if (k == "moons") b.kind = data::BaseKind::moons;
    else throw ArgumentError("config: unknown base kind '" + k + "'");
  }
  read(j, "dim", b.dim);
  read(j, "latent_dim", b.latent_dim);
  read(j, "negative_clusters", b.negative_clusters);
  read(j, "positive_clusters", b.positive_clusters);
  read(j, "cluster_separation", b.cluster_separation);
  read(j, "cluster_spread", b.cluster_spread);
  read(j, "noise", b.noise);
  return b;
}

json domain_json(const data::DomainSpec& d) {
  json j = {{"name", d.name},
            {"n_samples", d.n_samples},
            {"positive_ratio", d.positive_ratio},
            {"role", role_name(d.role)},
            {"shift",
             {{"rotation", d.shift.rotation},
              {"translation", d.shift.translation},
              {"noise_scale", d.shift.noise_scale}}}};
  if (d.n_positive) j["n_positive"] = *d.n_positive;
  return j;
}

data::DomainSpec domain_from(const json& j) {
  check_keys(j, "domain", {"name", "n_samples", "positive_ratio", "n_positive", "role", "shift"});
  data::DomainSpec d;
  read(j, "name", d.name);
  read(j, "n_samples", d.n_samples);
  read(j, "positive_ratio", d.positive_ratio);
  if (j.contains("n_positive")) d.n_positive = j.at("n_positive").get<std::size_t>();
  if (j.contains("role")) d.role = parse_role(j.at("role").get<std::string>());
  if (j.contains("shift")) {
    const json& s = j.at("shift");
    check_keys(s, "shift", {"rotation", "translation", "noise_scale"});
    read(s, "rotation", d.shift.rotation);
    read(s, "translation", d.shift.translation);
    read(s, "noise_scale", d.shift.noise_scale);
  }
  return d;
}

json family_json(const data::DomainFamily& f) {
  json domains = json::array();
  for (const auto& d : f.domains) domains.push_back(domain_json(d));
  return {{"seed", f.seed}, {"base", base_json(f.base)}, {"domains", domains}};
}

data::DomainFamily family_from(const json& j) {
  check_keys(j, "family", {"preset", "dim", "seed", "base", "domains"});
  std::size_t dim = 16;
  std::uint64_t seed = 7;
  read(j, "dim", dim);
  read(j, "seed", seed);
  data::DomainFamily f;
  const std::string preset = j.value("preset", std::string(j.contains("domains") ? "none" : "default"));
  if (preset == "default") {
    f = data::default_family(dim, seed);
  } else if (preset == "none") {
    f.seed = seed;
    f.base.dim = dim;
  } else {
    throw ArgumentError("config: unknown family preset '" + preset + "'");
  }
  if (j.contains("base")) f.base = base_from(j.at("base"), f.base);
  if (j.contains("domains")) {
    f.domains.clear();
    for (const json& d : j.at("domains")) f.domains.push_back(domain_from(d));
  }
  return f;
}

}  // namespace

dino::SslConfig ExperimentConfig::desk_ssl_config() {
  dino::SslConfig c;
  c.projector = {64, 32, 64};
  c.stage1 = {10, 0.0, 1e-3, true, dino::LrSchedule::constant};
  c.stage2 = {40, 1e-3, 2e-3, false, dino::LrSchedule::one_cycle};
  c.samples_per_epoch = 2048;
  return c;
}

void ExperimentConfig::validate() const {
  if (datasets.empty()) family.validate();
  if (seeds.empty()) throw ArgumentError("config: at least one seed is required");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw ArgumentError("config: seeds must be distinct");
  std::set<std::string> names;
  for (const GridCell& c : grid) {
    if (!names.insert(c.name()).second) throw ArgumentError("config: duplicate grid cell " + c.name());
  }
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw ArgumentError("config: eval_fraction must lie in (0, 1)");
  }
  if (backbone.dims.size() != backbone.activations.size() + 1 || backbone.dims.size() < 2) {
    throw ArgumentError("config: backbone needs one more dim than activations");
  }
  const std::size_t input = datasets.empty() ? family.base.dim : backbone.dims.front();
  if (backbone.dims.front() != input) {
    throw ArgumentError("config: backbone input dim does not match the data dim");
  }
  if (threads == 0) throw ArgumentError("config: threads must be at least 1");
  if (!(adapt.target_weight >= 0.0) || !(adapt.lambda_max >= 0.0) || !(adapt.lambda_ent >= 0.0) ||
      !(adapt.lr > 0.0)) {
    throw ArgumentError("config: adapt lr must be positive and weights non-negative");
  }
  pretrain.views.validate();
  retrain.views.validate();
}

std::string dump_config(const ExperimentConfig& c) {
  json grid = json::array();
  for (const auto& g : c.grid) grid.push_back(g.name());
  json datasets = json::array();
  for (const auto& d : c.datasets) {
    datasets.push_back({{"name", d.name}, {"path", d.path.string()}, {"role", role_name(d.role)}});
  }
  std::vector<std::string> acts;
  for (Activation a : c.backbone.activations) acts.push_back(activation_name(a));
  json j = {
      {"family", family_json(c.family)},
      {"datasets", datasets},
      {"workflow",
       {{"ssl_pretrain", c.ssl_pretrain},
        {"ssl_retrain", c.ssl_retrain},
        {"uda_dann", c.uda_dann},
        {"ada_from_uda", c.ada_from_uda},
        {"uda_steps", c.uda_steps}}},
      {"backbone", {{"dims", c.backbone.dims}, {"activations", acts}, {"seed", c.backbone.seed}}},
      {"corpus", {{"n", c.corpus.n}, {"clusters", c.corpus.clusters}, {"seed", c.corpus.seed}}},
      {"pretrain", ssl_json(c.pretrain)},
      {"retrain", ssl_json(c.retrain)},
      {"probe", probe_json(c.probe)},
      {"adapt", adapt_json(c.adapt)},
      {"sampler",
       {{"clue_temperature", c.clue_temperature},
        {"aada_mode", c.aada_mode == sampler::AadaMode::top_b ? "top_b" : "proportional"}}},
      {"grid", grid},
      {"budget", c.budget},
      {"rounds", c.rounds},
      {"seeds", c.seeds},
      {"eval_fraction", c.eval_fraction},
      {"split_seed", c.split_seed},
      {"labeler",
       {{"mode", labeler_mode_name(c.labeler.mode)},
        {"host", c.labeler.host},
        {"port", c.labeler.port},
        {"timeout_seconds", c.labeler.timeout_seconds},
        {"journal", c.labeler.journal.string()}}},
      {"threads", c.threads}};
  return j.dump(2) + "\n";
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ArgumentError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"family", "datasets", "workflow", "backbone", "corpus", "pretrain", "retrain", "probe",
              "adapt", "sampler", "grid", "budget", "rounds", "seeds", "eval_fraction", "split_seed",
              "labeler", "threads"});
  ExperimentConfig c;
  if (j.contains("family")) c.family = family_from(j.at("family"));
  if (j.contains("datasets")) {
    for (const json& d : j.at("datasets")) {
      check_keys(d, "datasets[]", {"name", "path", "role"});
      DatasetFile f;
      f.name = d.at("name").get<std::string>();
      f.path = d.at("path").get<std::string>();
      if (d.contains("role")) f.role = parse_role(d.at("role").get<std::string>());
      c.datasets.push_back(std::move(f));
    }
  }
  if (j.contains("workflow")) {
    const json& w = j.at("workflow");
    check_keys(w, "workflow", {"ssl_pretrain", "ssl_retrain", "uda_dann", "ada_from_uda", "uda_steps"});
    read(w, "ssl_pretrain", c.ssl_pretrain);
    read(w, "ssl_retrain", c.ssl_retrain);
    read(w, "uda_dann", c.uda_dann);
    read(w, "ada_from_uda", c.ada_from_uda);
    read(w, "uda_steps", c.uda_steps);
  }
  if (j.contains("backbone")) {
    const json& b = j.at("backbone");
    check_keys(b, "backbone", {"dims", "activations", "seed"});
    read(b, "dims", c.backbone.dims);
    if (b.contains("activations")) {
      c.backbone.activations.clear();
      for (const json& a : b.at("activations")) c.backbone.activations.push_back(parse_activation(a.get<std::string>()));
    }
    read(b, "seed", c.backbone.seed);
  }
  if (j.contains("corpus")) {
    const json& b = j.at("corpus");
    check_keys(b, "corpus", {"n", "clusters", "seed"});
    read(b, "n", c.corpus.n);
    read(b, "clusters", c.corpus.clusters);
    read(b, "seed", c.corpus.seed);
  }
  if (j.contains("pretrain")) c.pretrain = ssl_from(j.at("pretrain"), c.pretrain);
  if (j.contains("retrain")) c.retrain = ssl_from(j.at("retrain"), c.retrain);
  if (j.contains("probe")) c.probe = probe_from(j.at("probe"), c.probe);
  if (j.contains("adapt")) c.adapt = adapt_from(j.at("adapt"), c.adapt);
  if (j.contains("sampler")) {
    const json& s = j.at("sampler");
    check_keys(s, "sampler", {"clue_temperature", "aada_mode"});
    read(s, "clue_temperature", c.clue_temperature);
    if (s.contains("aada_mode")) {
      const auto m = s.at("aada_mode").get<std::string>();
      if (m == "top_b") c.aada_mode = sampler::AadaMode::top_b;
      else if (m == "proportional") c.aada_mode = sampler::AadaMode::proportional;
      else throw ArgumentError("config: unknown aada_mode '" + m + "'");
    }
  }
  if (j.contains("grid")) {
    c.grid.clear();
    for (const json& g : j.at("grid")) c.grid.push_back(GridCell::parse(g.get<std::string>()));
  }
  read(j, "budget", c.budget);
  read(j, "rounds", c.rounds);
  read(j, "seeds", c.seeds);
  read(j, "eval_fraction", c.eval_fraction);
  read(j, "split_seed", c.split_seed);
  if (j.contains("labeler")) {
    const json& l = j.at("labeler");
    check_keys(l, "labeler", {"mode", "host", "port", "timeout_seconds", "journal"});
    if (l.contains("mode")) c.labeler.mode = parse_labeler_mode(l.at("mode").get<std::string>());
    read(l, "host", c.labeler.host);
    read(l, "port", c.labeler.port);
    read(l, "timeout_seconds", c.labeler.timeout_seconds);
    if (l.contains("journal")) c.labeler.journal = l.at("journal").get<std::string>();
  }
  read(j, "threads", c.threads);
  if (c.datasets.empty() && !(j.contains("backbone") && j.at("backbone").contains("dims"))) {
    c.backbone.dims.front() = c.family.base.dim;
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  ExperimentConfig c = parse_config(ss.str());
  for (DatasetFile& f : c.datasets) {
    if (f.path.is_relative()) f.path = path.parent_path() / f.path;
  }
  return c;
}

}  // namespace sslada::harness
