#include "sslada/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sslada/error.hpp"

namespace sslada::metrics {

std::size_t RankedPredictions::positive_count() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auprc: scores and labels differ in length");
  std::size_t positives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ArgumentError("auprc: labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw NumericError("auprc: non-finite score");
    positives += labels[i] == 1 ? 1 : 0;
  }
  if (positives == 0) throw ArgumentError("auprc undefined: no positive samples");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double total = static_cast<double>(positives);
  double ap = 0.0;
  std::size_t seen = 0, tp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t block_tp = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      block_tp += labels[order[j]] == 1 ? 1 : 0;
      ++j;
    }
    seen += j - i;
    tp += block_tp;
    if (block_tp > 0) {
      const double precision = static_cast<double>(tp) / static_cast<double>(seen);
      ap += (static_cast<double>(block_tp) / total) * precision;
    }
    i = j;
  }
  return ap;
}

double auprc(const RankedPredictions& preds) { return auprc(preds.scores, preds.labels); }

SeedAggregate aggregate(std::span<const double> values) {
  if (values.empty()) throw ArgumentError("aggregate: no values");
  SeedAggregate out;
  out.values.assign(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  // Shifted by the first value so identical inputs give exactly zero spread.
  const double k = values.front();
  double shift_sum = 0.0;
  for (double v : values) shift_sum += v - k;
  const double shift_mean = shift_sum / n;
  out.mean = k + shift_mean;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - k - shift_mean) * (v - k - shift_mean);
    out.std = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

std::vector<DeltaRow> delta_table(const ResultGrid& methods,
                                  const std::map<std::string, std::vector<double>>& baseline) {
  std::vector<DeltaRow> rows;
  for (const auto& [domain, by_method] : methods) {
    auto base = baseline.find(domain);
    if (base == baseline.end()) throw ArgumentError("delta_table: no baseline for domain " + domain);
    const double base_mean = aggregate(base->second).mean;
    for (const auto& [method, values] : by_method) {
      if (values.size() != base->second.size()) {
        throw ArgumentError("delta_table: seed grid mismatch for " + domain + "/" + method);
      }
      DeltaRow row;
      row.domain = domain;
      row.method = method;
      row.method_mean = aggregate(values).mean;
      row.baseline_mean = base_mean;
      row.delta = row.method_mean - row.baseline_mean;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
  if (scores.size() != labels.size() || scores.empty()) throw ArgumentError("accuracy: bad input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    correct += ((scores[i] >= threshold ? 1 : 0) == labels[i]) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

}  // namespace sslada::metrics
