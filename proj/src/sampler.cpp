#include "sslada/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "sslada/error.hpp"

namespace sslada::sampler {
namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

/// Index order by (key descending, id ascending).
std::vector<std::size_t> rank_desc(std::span<const double> key, std::span<const std::int64_t> ids) {
  std::vector<std::size_t> order(key.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (key[a] != key[b]) return key[a] > key[b];
    return ids[a] < ids[b];
  });
  return order;
}

/// Draws an index with probability mass[i] / sum(mass) over indices not yet
/// taken; returns npos when the remaining mass is zero.
std::size_t draw_weighted(std::span<const double> mass, const std::vector<bool>& taken, Rng& rng) {
  double total = 0.0;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    if (!taken[i]) total += mass[i];
  }
  if (!(total > 0.0)) return std::numeric_limits<std::size_t>::max();
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  std::size_t last = std::numeric_limits<std::size_t>::max();
  for (std::size_t i = 0; i < mass.size(); ++i) {
    if (taken[i] || mass[i] <= 0.0) continue;
    acc += mass[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

/// Untaken index with the smallest id.
std::size_t smallest_free_id(std::span<const std::int64_t> ids, const std::vector<bool>& taken) {
  std::size_t best = std::numeric_limits<std::size_t>::max();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!taken[i] && (best == std::numeric_limits<std::size_t>::max() || ids[i] < ids[best])) best = i;
  }
  return best;
}

}  // namespace

Strategy parse_strategy(const std::string& name) {
  if (name == "uniform" || name == "random") return Strategy::uniform;
  if (name == "aada") return Strategy::aada;
  if (name == "clue") return Strategy::clue;
  if (name == "badge") return Strategy::badge;
  throw ArgumentError("unknown sampling strategy '" + name + "'");
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::uniform: return "uniform";
    case Strategy::aada: return "aada";
    case Strategy::clue: return "clue";
    case Strategy::badge: return "badge";
  }
  return "uniform";
}

void AcquisitionInput::validate() const {
  const std::size_t n = ids.size();
  if (features.rows() != n || class_probs.rows() != n || domain_prob_source.size() != n) {
    if (n != 0) throw DimensionError("acquisition input columns have inconsistent lengths");
  }
  std::unordered_set<std::int64_t> seen;
  for (std::int64_t id : ids) {
    if (!seen.insert(id).second) throw ArgumentError("duplicate id in acquisition input");
  }
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (double p : class_probs.row(i)) {
      if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("class probability outside [0, 1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ArgumentError("class probabilities do not sum to 1");
    const double d = domain_prob_source[i];
    if (!(d >= 0.0 && d <= 1.0)) throw ArgumentError("domain probability outside [0, 1]");
  }
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v < 0.0) throw ArgumentError("entropy: negative probability");
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double score_aada(double domain_prob_source, std::span<const double> p) {
  const double d = std::clamp(domain_prob_source, kDomainProbClamp, 1.0 - kDomainProbClamp);
  return ((1.0 - d) / d) * entropy(p);
}

QuerySet select_uniform(std::span<const std::int64_t> ids, std::size_t budget, Rng& rng) {
  QuerySet q;
  q.strategy = Strategy::uniform;
  std::vector<std::int64_t> pool(ids.begin(), ids.end());
  const std::size_t b = std::min(budget, pool.size());
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, pool.size() - 1)(rng);
    std::swap(pool[i], pool[j]);
    q.ids.push_back(pool[i]);
  }
  return q;
}

QuerySet select_aada(const AcquisitionInput& input, std::size_t budget, AadaMode mode, Rng* rng) {
  input.validate();
  QuerySet q;
  q.strategy = Strategy::aada;
  const std::size_t n = input.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = score_aada(input.domain_prob_source[i], input.class_probs.row(i));
  }
  const std::size_t b = std::min(budget, n);
  if (mode == AadaMode::top_b) {
    const auto order = rank_desc(scores, input.ids);
    for (std::size_t i = 0; i < b; ++i) q.ids.push_back(input.ids[order[i]]);
    return q;
  }
  if (rng == nullptr) throw ArgumentError("proportional AADA sampling needs an rng");
  std::vector<bool> taken(n, false);
  for (std::size_t k = 0; k < b; ++k) {
    std::size_t pick = draw_weighted(scores, taken, *rng);
    if (pick == std::numeric_limits<std::size_t>::max()) pick = smallest_free_id(input.ids, taken);
    taken[pick] = true;
    q.ids.push_back(input.ids[pick]);
  }
  return q;
}

QuerySet select_clue(const AcquisitionInput& input, std::size_t budget, double temperature,
                     std::uint64_t seed) {
  input.validate();
  if (!(temperature > 0.0)) throw ArgumentError("clue: temperature must be positive");
  QuerySet q;
  q.strategy = Strategy::clue;
  const std::size_t n = input.size();
  const std::size_t b = std::min(budget, n);
  if (b == 0) return q;

  std::vector<double> weights(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto p = input.class_probs.row(i);
    std::vector<double> scaled(p.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      scaled[j] = p[j] > 0.0 ? std::pow(p[j], 1.0 / temperature) : 0.0;
      sum += scaled[j];
    }
    for (double& v : scaled) v /= sum;
    weights[i] = entropy(scaled);
  }
  if (std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0.0; })) {
    std::fill(weights.begin(), weights.end(), 1.0);
  }

  const Tensor& x = input.features;
  bool degenerate = true;
  for (std::size_t i = 1; i < n && degenerate; ++i) {
    degenerate = std::equal(x.row(i).begin(), x.row(i).end(), x.row(0).begin());
  }
  if (degenerate) {
    const auto order = rank_desc(weights, input.ids);
    for (std::size_t i = 0; i < b; ++i) q.ids.push_back(input.ids[order[i]]);
    return q;
  }

  // Weighted k-means++ initialization.
  Rng rng(seed);
  const std::size_t f = x.cols();
  Tensor centroids = Tensor::matrix(b, f);
  std::vector<bool> chosen(n, false);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<double> mass(n);
  for (std::size_t c = 0; c < b; ++c) {
    for (std::size_t i = 0; i < n; ++i) mass[i] = c == 0 ? weights[i] : weights[i] * d2[i];
    std::size_t pick = draw_weighted(mass, chosen, rng);
    if (pick == std::numeric_limits<std::size_t>::max()) {
      const auto order = rank_desc(weights, input.ids);
      for (std::size_t i : order) {
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
    }
    chosen[pick] = true;
    std::copy(x.row(pick).begin(), x.row(pick).end(), centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(x.row(i), centroids.row(c)));
  }

  // Weighted Lloyd iterations.
  std::vector<std::size_t> assign(n, 0);
  for (int iter = 0; iter < 50; ++iter) {
    bool changed = iter == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = squared_distance(x.row(i), centroids.row(0));
      for (std::size_t c = 1; c < b; ++c) {
        const double d = squared_distance(x.row(i), centroids.row(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) changed = true;
      assign[i] = best;
    }
    if (!changed) break;
    Tensor sums = Tensor::matrix(b, f);
    std::vector<double> wsum(b, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto s = sums.row(assign[i]);
      auto r = x.row(i);
      for (std::size_t j = 0; j < f; ++j) s[j] += weights[i] * r[j];
      wsum[assign[i]] += weights[i];
    }
    for (std::size_t c = 0; c < b; ++c) {
      if (wsum[c] <= 0.0) continue;
      auto dst = centroids.row(c);
      auto s = sums.row(c);
      for (std::size_t j = 0; j < f; ++j) dst[j] = s[j] / wsum[c];
    }
  }

  std::vector<bool> taken(n, false);
  for (std::size_t c = 0; c < b; ++c) {
    std::size_t best = std::numeric_limits<std::size_t>::max();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double d = squared_distance(x.row(i), centroids.row(c));
      if (d < best_d || (d == best_d && input.ids[i] < input.ids[best])) {
        best_d = d;
        best = i;
      }
    }
    taken[best] = true;
    q.ids.push_back(input.ids[best]);
  }
  return q;
}

std::vector<double> gradient_embedding(std::span<const double> probs,
                                       std::span<const double> features) {
  if (probs.empty()) throw ArgumentError("gradient_embedding: empty probabilities");
  const std::size_t argmax =
      static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  std::vector<double> g;
  g.reserve(probs.size() * features.size());
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double coeff = probs[k] - (k == argmax ? 1.0 : 0.0);
    for (double f : features) g.push_back(coeff * f);
  }
  return g;
}

QuerySet select_badge(const AcquisitionInput& input, std::size_t budget, Rng& rng) {
  input.validate();
  QuerySet q;
  q.strategy = Strategy::badge;
  const std::size_t n = input.size();
  const std::size_t b = std::min(budget, n);
  if (b == 0) return q;

  std::vector<std::vector<double>> emb(n);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) {
    emb[i] = gradient_embedding(input.class_probs.row(i), input.features.row(i));
    d2[i] = 0.0;
    for (double v : emb[i]) d2[i] += v * v;
  }
  std::vector<bool> taken(n, false);
  for (std::size_t k = 0; k < b; ++k) {
    std::size_t pick = draw_weighted(d2, taken, rng);
    if (pick == std::numeric_limits<std::size_t>::max()) pick = smallest_free_id(input.ids, taken);
    taken[pick] = true;
    q.ids.push_back(input.ids[pick]);
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i]) d2[i] = std::min(d2[i], squared_distance(emb[i], emb[pick]));
    }
  }
  return q;
}

}  // namespace sslada::sampler
