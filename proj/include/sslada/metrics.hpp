#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace sslada::metrics {

/// Scores with binary labels (1 = positive class).
struct RankedPredictions {
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t positive_count() const;
};

/// Average precision (area under the step-wise precision-recall curve).
///
/// Samples are ranked by descending score. Samples with equal scores form a
/// block that is admitted as a whole: each block contributes
/// (positives in block / total positives) * (precision after the block).
/// With distinct scores this is the mean of precision-at-rank over the
/// positives; with every score tied it equals the positive ratio.
/// Throws ArgumentError when there are no positives.
double auprc(const RankedPredictions& preds);
double auprc(std::span<const double> scores, std::span<const int> labels);

/// Mean and sample standard deviation (n - 1 denominator) over seeds. A single
/// value reports a standard deviation of 0.
struct SeedAggregate {
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;
};

SeedAggregate aggregate(std::span<const double> values);

/// One row of a delta table.
struct DeltaRow {
  std::string domain;
  std::string method;
  double method_mean = 0.0;
  double baseline_mean = 0.0;
  double delta = 0.0;
};

/// (domain, method) -> per-seed values.
using ResultGrid = std::map<std::string, std::map<std::string, std::vector<double>>>;

/// Delta of every method mean against the baseline mean per domain.
/// `baseline` maps domain -> per-seed values. Throws ArgumentError when a
/// domain is missing from the baseline or seed counts differ.
std::vector<DeltaRow> delta_table(const ResultGrid& methods,
                                  const std::map<std::string, std::vector<double>>& baseline);

/// Fraction of correct thresholded predictions; debug output only.
double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

}  // namespace sslada::metrics
