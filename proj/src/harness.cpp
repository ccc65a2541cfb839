#include "sslada/harness.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>
#include <unordered_set>

#include "sslada/rng.hpp"

namespace sslada::harness {
namespace {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. If several calls
/// throw, the exception of the lowest index is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

[[noreturn]] void rethrow_with_context(const std::string& context) {
  try {
    throw;
  } catch (const LabelerTimeout& e) {
    throw LabelerTimeout(context + ": " + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(context + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(context + ": " + e.what());
  } catch (const ArgumentError& e) {
    throw ArgumentError(context + ": " + e.what());
  } catch (const StateError& e) {
    throw StateError(context + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(context + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(context + ": " + e.what());
  }
}

double eval_auprc(const adapt::ProbeModel& model, const data::Pool& eval) {
  return metrics::auprc(model.positive_scores(eval.features), eval.labels);
}

std::string seed_context(std::uint64_t seed) { return "seed " + std::to_string(seed); }

struct SplitSet {
  std::map<std::string, TargetSplit> targets;
};

SplitSet split_all(const ExperimentConfig& cfg, const Dataset& ds) {
  SplitSet s;
  for (const auto& t : ds.targets) s.targets.emplace(t, split_target(cfg, ds, t));
  return s;
}

Tensor retrain_pool(const Dataset& ds, const SplitSet& splits) {
  std::vector<Tensor> parts{ds.pools.at(ds.source).features};
  for (const auto& t : ds.targets) parts.push_back(splits.targets.at(t).query.features);
  return concat_rows(parts);
}

Network retrain(const ExperimentConfig& cfg, const Tensor& pool, const Network& pretrained,
                std::uint64_t seed) {
  if (!cfg.ssl_retrain) return pretrained;
  dino::SslConfig c = cfg.retrain;
  c.seed = derive_seed(cfg.retrain.seed, {seed});
  return dino::pretrain_ssl(pool, pretrained, c, {}).backbone;
}


/// Results of one (seed, target) task.
struct DomainResult {
  double baseline = 0.0;
  std::optional<double> uda;
  std::vector<std::vector<double>> curves;          // per cell, per round
  std::vector<std::vector<std::size_t>> labeled;    // per cell, per round
};

}  // namespace

// ---------------------------------------------------------------- grid cells

std::string GridCell::name() const {
  return std::string(sampler::strategy_name(strategy)) + "+" + adapt::method_name(method);
}

GridCell GridCell::parse(const std::string& text) {
  const auto plus = text.find('+');
  if (plus == std::string::npos) throw ArgumentError("grid cell '" + text + "' is not strategy+method");
  return {sampler::parse_strategy(text.substr(0, plus)), adapt::parse_method(text.substr(plus + 1))};
}

std::vector<GridCell> default_grid() {
  using sampler::Strategy;
  using adapt::Method;
  return {{Strategy::uniform, Method::finetune},
          {Strategy::aada, Method::dann},
          {Strategy::clue, Method::mme},
          {Strategy::badge, Method::finetune},
          {Strategy::clue, Method::finetune}};
}

LabelerMode parse_labeler_mode(const std::string& name) {
  if (name == "oracle") return LabelerMode::oracle;
  if (name == "service") return LabelerMode::service;
  throw ArgumentError("unknown labeler mode '" + name + "'");
}

const char* labeler_mode_name(LabelerMode m) { return m == LabelerMode::service ? "service" : "oracle"; }

// ---------------------------------------------------------------- data

Dataset load_dataset(const ExperimentConfig& cfg) {
  Dataset ds;
  if (cfg.datasets.empty()) {
    for (auto& g : data::gen_family(cfg.family)) {
      if (g.spec.role == data::DomainRole::source) {
        ds.source = g.spec.name;
      } else {
        ds.targets.push_back(g.spec.name);
      }
      ds.pools.emplace(g.spec.name, std::move(g.pool));
    }
    return ds;
  }
  std::optional<std::size_t> dim;
  for (const DatasetFile& f : cfg.datasets) {
    data::Pool pool = data::load_csv(f.path);
    if (pool.size() == 0) throw DataError("dataset " + f.name + " is empty");
    if (pool.labeled_count() != pool.size()) {
      throw DataError("dataset " + f.name + " needs a label on every row (targets keep them for evaluation)");
    }
    if (dim && *dim != pool.dim()) throw DataError("dataset " + f.name + " has a different feature width");
    dim = pool.dim();
    if (ds.pools.count(f.name)) throw DataError("dataset name " + f.name + " is used twice");
    if (f.role == data::DomainRole::source) {
      if (!ds.source.empty()) throw DataError("exactly one source dataset is allowed");
      ds.source = f.name;
    } else {
      ds.targets.push_back(f.name);
    }
    ds.pools.emplace(f.name, std::move(pool));
  }
  if (ds.source.empty()) throw DataError("no source dataset configured");
  return ds;
}

TargetSplit split_target(const ExperimentConfig& cfg, const Dataset& ds, const std::string& domain) {
  const auto it = std::find(ds.targets.begin(), ds.targets.end(), domain);
  if (it == ds.targets.end()) throw ArgumentError("unknown target domain " + domain);
  const auto index = static_cast<std::uint64_t>(it - ds.targets.begin());
  auto [query, eval] = data::split(ds.pools.at(domain), 1.0 - cfg.eval_fraction, cfg.eval_fraction,
                                   derive_seed(cfg.split_seed, {index}));
  return {std::move(query), std::move(eval)};
}

// ---------------------------------------------------------------- labelers

OracleLabeler::OracleLabeler(const Dataset& ds) {
  for (const auto& [name, pool] : ds.pools) {
    for (std::size_t i = 0; i < pool.size(); ++i) truth_[pool.ids[i]] = pool.labels[i];
  }
}

std::vector<int> OracleLabeler::label(const LabelRequest& request) {
  std::vector<int> out;
  out.reserve(request.ids.size());
  for (std::int64_t id : request.ids) {
    auto it = truth_.find(id);
    if (it == truth_.end() || it->second == data::kUnlabeled) {
      throw DataError("oracle has no ground truth for id " + std::to_string(id));
    }
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------- rounds

sampler::QuerySet select_queries(AdaRoundState& state, const RoundContext& ctx) {
  const ExperimentConfig& cfg = *ctx.cfg;
  const data::Pool& unl = state.unlabeled;
  const std::uint64_t seed = derive_seed(ctx.seed, {state.round, 1});
  Rng rng(seed);
  sampler::QuerySet q;
  if (ctx.cell.strategy == sampler::Strategy::uniform) {
    q = sampler::select_uniform(unl.ids, cfg.budget, rng);
  } else {
    sampler::AcquisitionInput in;
    in.ids = unl.ids;
    in.features = state.model.probe.features(unl.features);
    in.class_probs = softmax_rows(state.model.probe.head.predict(in.features));
    if (ctx.cell.strategy == sampler::Strategy::aada) {
      adapt::fit_domain_head(state.model, ctx.source->features, unl.features, cfg.adapt.domain_fit_steps,
                             cfg.adapt.batch_size, cfg.adapt.domain_lr, derive_seed(seed, {2}));
      in.domain_prob_source = state.model.domain_prob_source(unl.features);
    } else {
      in.domain_prob_source.assign(unl.size(), 0.5);
    }
    switch (ctx.cell.strategy) {
      case sampler::Strategy::aada:
        q = sampler::select_aada(in, cfg.budget, cfg.aada_mode, &rng);
        break;
      case sampler::Strategy::clue:
        q = sampler::select_clue(in, cfg.budget, cfg.clue_temperature, derive_seed(seed, {3}));
        break;
      case sampler::Strategy::badge:
        q = sampler::select_badge(in, cfg.budget, rng);
        break;
      case sampler::Strategy::uniform:
        break;
    }
  }
  q.round = state.round;
  return q;
}

AdaRoundState run_ada_round(const AdaRoundState& state, const RoundContext& ctx) {
  if (ctx.cfg == nullptr || ctx.source == nullptr || ctx.eval == nullptr || ctx.labeler == nullptr) {
    throw ArgumentError("round context is incomplete");
  }
  if (state.unlabeled.size() == 0) throw StateError("unlabeled target pool is empty");
  AdaRoundState next = state;
  const sampler::QuerySet q = select_queries(next, ctx);

  std::unordered_set<std::int64_t> eval_ids(ctx.eval->ids.begin(), ctx.eval->ids.end());
  std::vector<std::size_t> rows;
  for (std::int64_t id : q.ids) {
    if (eval_ids.count(id)) throw StateError("label leakage: evaluation id " + std::to_string(id) + " was queried");
    rows.push_back(next.unlabeled.index_of(id));
  }

  LabelRequest req;
  req.domain = ctx.domain;
  req.cell = ctx.cell.name();
  req.seed = ctx.seed;
  req.round = next.round;
  req.ids = q.ids;
  req.features = gather_rows(next.unlabeled.features, rows);
  const std::vector<int> labels = q.ids.empty() ? std::vector<int>{} : ctx.labeler->label(req);
  if (labels.size() != q.ids.size()) throw StateError("labeler returned the wrong number of labels");
  for (int l : labels) {
    if (l != 0 && l != 1) throw StateError("labeler returned a label outside {0, 1}");
  }

  data::Pool queried = next.unlabeled.subset(rows);
  queried.labels = labels;
  next.labeled.append(queried);
  std::vector<bool> taken(next.unlabeled.size(), false);
  for (std::size_t r : rows) taken[r] = true;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < taken.size(); ++i) {
    if (!taken[i]) keep.push_back(i);
  }
  next.unlabeled = next.unlabeled.subset(keep);
  next.queried.insert(next.queried.end(), q.ids.begin(), q.ids.end());

  adapt::AdaptData data{ctx.source, &next.unlabeled, &next.labeled};
  adapt::run_adaptation(ctx.cell.method, next.model, data, ctx.cfg->adapt, derive_seed(ctx.seed, {next.round, 4}));
  next.auprc.push_back(eval_auprc(next.model.probe, *ctx.eval));
  ++next.round;
  return next;
}

// ---------------------------------------------------------------- workflow

Network pretrained_backbone(const ExperimentConfig& cfg) {
  Network init = Network::he_uniform(cfg.backbone.dims, cfg.backbone.activations, cfg.backbone.seed);
  if (!cfg.ssl_pretrain) return init;
  const Tensor corpus = data::generic_corpus(cfg.corpus.n, cfg.backbone.dims.front(), cfg.corpus.clusters,
                                             cfg.corpus.seed);
  return dino::pretrain_ssl(corpus, std::move(init), cfg.pretrain, {}).backbone;
}

Network retrained_backbone(const ExperimentConfig& cfg, const Dataset& ds, const Network& pretrained,
                           std::uint64_t seed) {
  return retrain(cfg, retrain_pool(ds, split_all(cfg, ds)), pretrained, seed);
}

adapt::ProbeModel source_probe(const ExperimentConfig& cfg, const Dataset& ds, Network backbone,
                                 std::uint64_t seed) {
  adapt::ProbeConfig pc = cfg.probe;
  pc.seed = derive_seed(cfg.probe.seed, {seed});
  return adapt::linear_probe(std::move(backbone), ds.pools.at(ds.source), pc).model;
}

ExperimentReport run_workflow(const ExperimentConfig& cfg, const Dataset& ds, Labeler& labeler,
                              const ProgressFn& progress) {
  cfg.validate();
  std::mutex progress_mu;
  auto say = [&](const std::string& msg) {
    if (!progress) return;
    std::lock_guard lock(progress_mu);
    progress(msg);
  };

  const SplitSet splits = split_all(cfg, ds);
  const data::Pool& source = ds.pools.at(ds.source);
  say("pretraining backbone");
  const Network pretrained = pretrained_backbone(cfg);
  const Tensor pool = retrain_pool(ds, splits);

  const std::size_t n_seeds = cfg.seeds.size();
  std::vector<adapt::ProbeModel> probes(n_seeds);
  parallel_for(n_seeds, cfg.threads, [&](std::size_t s) {
    const std::uint64_t seed = cfg.seeds[s];
    try {
      say(seed_context(seed) + ": backbone and source probe");
      probes[s] = source_probe(cfg, ds, retrain(cfg, pool, pretrained, seed), seed);
    } catch (...) {
      rethrow_with_context(seed_context(seed));
    }
  });

  const std::size_t n_targets = ds.targets.size();
  std::vector<DomainResult> results(n_seeds * n_targets);
  parallel_for(n_seeds * n_targets, cfg.threads, [&](std::size_t task) {
    const std::size_t s = task / n_targets, t = task % n_targets;
    const std::uint64_t seed = cfg.seeds[s];
    const std::string& domain = ds.targets[t];
    const TargetSplit& split = splits.targets.at(domain);
    DomainResult& out = results[task];
    std::string context = seed_context(seed) + ", domain " + domain;
    try {
      out.baseline = eval_auprc(probes[s], split.eval);
      const data::Pool query_unlabeled = split.query.unlabeled_copy();

      std::optional<adapt::DannModel> uda_model;
      if (cfg.uda_dann) {
        context += ", method uda-dann";
        uda_model = adapt::make_dann(probes[s], cfg.adapt.domain_hidden, derive_seed(seed, {t, 900}));
        adapt::AdaptConfig ac = cfg.adapt;
        ac.steps = cfg.uda_steps;
        adapt::AdaptData data{&source, &query_unlabeled, nullptr};
        adapt::run_adaptation(adapt::Method::dann, *uda_model, data, ac, derive_seed(seed, {t, 901}));
        out.uda = eval_auprc(uda_model->probe, split.eval);
      }

      for (std::size_t c = 0; c < cfg.grid.size(); ++c) {
        const GridCell& cell = cfg.grid[c];
        context = seed_context(seed) + ", domain " + domain + ", method " + cell.name();
        say(context);
        AdaRoundState state;
        state.model = uda_model && cfg.ada_from_uda
                          ? *uda_model
                          : adapt::make_dann(probes[s], cfg.adapt.domain_hidden, derive_seed(seed, {t, c, 1}));
        state.unlabeled = query_unlabeled;
        state.labeled = data::Pool::empty(query_unlabeled.dim());
        state.auprc.push_back(eval_auprc(state.model.probe, split.eval));
        std::vector<std::size_t> labeled{0};

        RoundContext ctx;
        ctx.cfg = &cfg;
        ctx.source = &source;
        ctx.eval = &split.eval;
        ctx.domain = domain;
        ctx.cell = cell;
        ctx.seed = derive_seed(seed, {t, c, 2});
        ctx.labeler = &labeler;
        for (std::size_t r = 0; r < cfg.rounds && state.unlabeled.size() > 0; ++r) {
          state = run_ada_round(state, ctx);
          labeled.push_back(state.labeled.size());
        }
        out.curves.push_back(state.auprc);
        out.labeled.push_back(std::move(labeled));
      }
    } catch (...) {
      rethrow_with_context(context);
    }
  });

  ExperimentReport report;
  report.seeds = cfg.seeds;
  report.domains = ds.targets;
  if (cfg.uda_dann) report.methods.push_back("uda-dann");
  for (const auto& c : cfg.grid) report.methods.push_back(c.name());
  for (std::size_t t = 0; t < n_targets; ++t) {
    const std::string& domain = ds.targets[t];
    report.eval_sizes[domain] = splits.targets.at(domain).eval.size();
    auto& base = report.baseline[domain];
    auto& cells = report.cells[domain];
    for (const auto& m : report.methods) cells[m];
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const DomainResult& r = results[s * n_targets + t];
      base.push_back(r.baseline);
      if (r.uda) cells["uda-dann"].push_back(*r.uda);
      for (std::size_t c = 0; c < cfg.grid.size(); ++c) {
        cells[cfg.grid[c].name()].push_back(r.curves[c].back());
      }
    }
  }
  for (std::size_t s = 0; s < n_seeds; ++s) {
    for (std::size_t t = 0; t < n_targets; ++t) {
      const DomainResult& r = results[s * n_targets + t];
      for (std::size_t c = 0; c < cfg.grid.size(); ++c) {
        for (std::size_t k = 0; k < r.curves[c].size(); ++k) {
          report.curves.push_back({cfg.seeds[s], ds.targets[t], cfg.grid[c].name(), k, r.labeled[c][k], r.curves[c][k]});
        }
      }
    }
  }
  return report;
}

RetrainComparison compare_retraining(const ExperimentConfig& cfg, const Dataset& ds, const ProgressFn& progress) {
  cfg.validate();
  const SplitSet splits = split_all(cfg, ds);
  if (progress) progress("pretraining backbone");
  const Network pretrained = pretrained_backbone(cfg);
  const Tensor pool = retrain_pool(ds, splits);
  ExperimentConfig with = cfg;
  with.ssl_retrain = true;

  RetrainComparison out;
  out.domains = ds.targets;
  const std::size_t n = cfg.seeds.size();
  std::vector<std::vector<double>> without(n), retrained(n);
  std::mutex mu;
  parallel_for(n, cfg.threads, [&](std::size_t s) {
    const std::uint64_t seed = cfg.seeds[s];
    if (progress) {
      std::lock_guard lock(mu);
      progress(seed_context(seed) + ": retraining");
    }
    try {
      const adapt::ProbeModel p0 = source_probe(cfg, ds, pretrained, seed);
      const adapt::ProbeModel p1 = source_probe(cfg, ds, retrain(with, pool, pretrained, seed), seed);
      for (const auto& t : ds.targets) {
        without[s].push_back(eval_auprc(p0, splits.targets.at(t).eval));
        retrained[s].push_back(eval_auprc(p1, splits.targets.at(t).eval));
      }
    } catch (...) {
      rethrow_with_context(seed_context(seed));
    }
  });
  for (std::size_t t = 0; t < ds.targets.size(); ++t) {
    for (std::size_t s = 0; s < n; ++s) {
      out.without_retrain[ds.targets[t]].push_back(without[s][t]);
      out.with_retrain[ds.targets[t]].push_back(retrained[s][t]);
    }
  }
  return out;
}

}  // namespace sslada::harness
