#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sslada/rng.hpp"
#include "sslada/tensor.hpp"

namespace sslada::sampler {

enum class Strategy { uniform, aada, clue, badge };

Strategy parse_strategy(const std::string& name);
const char* strategy_name(Strategy s);

/// Model outputs over the unlabeled target pool.
///
/// `domain_prob_source[i]` is the domain classifier's probability that sample
/// i comes from the SOURCE domain. AADA's diversity weight (1 - d) / d is
/// large for samples that look unlike the source; flipping this convention
/// inverts the weight.
struct AcquisitionInput {
  std::vector<std::int64_t> ids;
  Tensor features;     // [n, f]
  Tensor class_probs;  // [n, K]
  std::vector<double> domain_prob_source;

  std::size_t size() const { return ids.size(); }
  /// Checks probability ranges, row sums and id uniqueness.
  void validate() const;
};

struct QuerySet {
  std::vector<std::int64_t> ids;
  Strategy strategy = Strategy::uniform;
  std::size_t round = 0;
};

/// Clamp applied to d before forming (1 - d) / d.
inline constexpr double kDomainProbClamp = 1e-6;

/// Shannon entropy -sum p ln p (0 ln 0 = 0). Throws ArgumentError on
/// negative entries.
double entropy(std::span<const double> p);

/// AADA score ((1 - d) / d) * H(p) with d clamped to [1e-6, 1 - 1e-6].
double score_aada(double domain_prob_source, std::span<const double> p);

/// B ids drawn uniformly without replacement (B clamped to the pool size).
QuerySet select_uniform(std::span<const std::int64_t> ids, std::size_t budget, Rng& rng);

enum class AadaMode { top_b, proportional };

/// Top-B ids by AADA score, ties broken by ascending id. The proportional
/// mode instead samples without replacement with probability proportional to
/// the score (`rng` required).
QuerySet select_aada(const AcquisitionInput& input, std::size_t budget,
                     AadaMode mode = AadaMode::top_b, Rng* rng = nullptr);

/// Uncertainty-weighted k-means (weights = entropy of the temperature-scaled
/// class distribution, k = B, 50 Lloyd iterations at most, seeded k-means++
/// init); returns the distinct sample nearest each centroid. All-zero
/// weights fall back to uniform weights; a pool whose features are all
/// identical falls back to entropy top-B.
QuerySet select_clue(const AcquisitionInput& input, std::size_t budget, double temperature,
                     std::uint64_t seed);

/// Last-layer pseudo-label gradient embedding (p - onehot(argmax p)) (x) f,
/// class-major.
std::vector<double> gradient_embedding(std::span<const double> probs,
                                       std::span<const double> features);

/// k-means++ seeding over gradient embeddings. The origin acts as an initial
/// center, so the first pick is proportional to ||g||^2 and zero embeddings
/// are only taken once every remaining embedding has zero distance (then by
/// ascending id).
QuerySet select_badge(const AcquisitionInput& input, std::size_t budget, Rng& rng);

}  // namespace sslada::sampler
