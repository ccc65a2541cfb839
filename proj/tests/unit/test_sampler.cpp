#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "sslada/error.hpp"
#include "sslada/sampler.hpp"
#include "support.hpp"

using namespace sslada;
using namespace sslada::sampler;

namespace {

AcquisitionInput make_input(const std::vector<std::vector<double>>& probs, const std::vector<double>& d,
                            const Tensor& features) {
  AcquisitionInput in;
  const std::size_t k = probs.front().size();
  in.class_probs = Tensor::matrix(probs.size(), k);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    in.ids.push_back(static_cast<std::int64_t>(100 + i));
    std::copy(probs[i].begin(), probs[i].end(), in.class_probs.row(i).begin());
  }
  in.domain_prob_source = d;
  in.features = features;
  return in;
}

Tensor zero_features(std::size_t n) { return Tensor::matrix(n, 2, 0.0); }

void check_query(const QuerySet& q, const AcquisitionInput& in, std::size_t expect) {
  CHECK(q.ids.size() == expect);
  const std::set<std::int64_t> distinct(q.ids.begin(), q.ids.end());
  CHECK(distinct.size() == q.ids.size());
  for (auto id : q.ids) CHECK(std::find(in.ids.begin(), in.ids.end(), id) != in.ids.end());
}

AcquisitionInput random_input(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  std::vector<std::vector<double>> probs;
  std::vector<double> d;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = u(rng);
    probs.push_back({p, 1.0 - p});
    d.push_back(u(rng));
  }
  return make_input(probs, d, testing::random_matrix(n, 3, rng));
}

}  // namespace

TEST_CASE("entropy examples") {
  CHECK(entropy(std::vector<double>{0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(entropy(std::vector<double>{1.0, 0.0}) == 0.0);
  CHECK(entropy(std::vector<double>{0.9, 0.1}) == doctest::Approx(0.325083).epsilon(1e-6));
  CHECK(entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK_THROWS_AS(entropy(std::vector<double>{1.1, -0.1}), ArgumentError);
}

TEST_CASE("AADA score examples") {
  const std::vector<double> p{0.3, 0.7};
  CHECK(score_aada(0.5, p) == entropy(p));
  CHECK(score_aada(0.01, std::vector<double>{0.0, 1.0}) == 0.0);
  CHECK(score_aada(0.99, std::vector<double>{1.0, 0.0}) == 0.0);
  CHECK(score_aada(0.2, std::vector<double>{0.5, 0.5}) == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-14));
  // d is clamped to [1e-6, 1 - 1e-6].
  CHECK(score_aada(0.0, std::vector<double>{0.5, 0.5}) ==
        doctest::Approx((1.0 - 1e-6) / 1e-6 * std::log(2.0)).epsilon(1e-12));
  CHECK(std::isfinite(score_aada(0.0, std::vector<double>{0.5, 0.5})));
  CHECK(score_aada(1.0, std::vector<double>{0.5, 0.5}) > 0.0);
}

TEST_CASE("AADA score is monotone in d and in entropy") {
  Rng rng(4);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 200; ++trial) {
    const double p = u(rng), d1 = u(rng), d2 = u(rng);
    if (d1 == d2) continue;
    const std::vector<double> probs{p, 1.0 - p};
    CHECK((score_aada(std::min(d1, d2), probs) > score_aada(std::max(d1, d2), probs)));
    const double q = 0.5 + 0.49 * u(rng), r = 0.5 + 0.49 * u(rng);
    if (q == r) continue;
    // Closer to 0.5 means higher entropy.
    const double hi = std::min(q, r), lo = std::max(q, r);
    CHECK((score_aada(d1, std::vector<double>{hi, 1.0 - hi}) > score_aada(d1, std::vector<double>{lo, 1.0 - lo})));
  }
}

TEST_CASE("AADA ranks five hand-scored samples") {
  // S = (1 - d)/d * H(p):
  //   100: d 0.5, p .5/.5 -> 1 * 0.693147 = 0.693147
  //   101: d 0.2, p .9/.1 -> 4 * 0.325083 = 1.300332
  //   102: d 0.8, p .5/.5 -> 0.25 * 0.693147 = 0.173287
  //   103: d 0.1, p 1/0   -> 0
  //   104: d 0.4, p .7/.3 -> 1.5 * 0.610864 = 0.916296
  const AcquisitionInput in = make_input({{0.5, 0.5}, {0.9, 0.1}, {0.5, 0.5}, {1.0, 0.0}, {0.7, 0.3}},
                                         {0.5, 0.2, 0.8, 0.1, 0.4}, zero_features(5));
  const QuerySet q = select_aada(in, 5);
  CHECK(q.ids == std::vector<std::int64_t>{101, 104, 100, 102, 103});
  CHECK(q.strategy == Strategy::aada);
  CHECK(select_aada(in, 2).ids == std::vector<std::int64_t>{101, 104});
}

TEST_CASE("AADA with d = 0.5 everywhere follows entropy; ties go to the smaller id") {
  const AcquisitionInput in = make_input({{0.6, 0.4}, {0.95, 0.05}, {0.5, 0.5}, {0.4, 0.6}, {0.8, 0.2}},
                                         std::vector<double>(5, 0.5), zero_features(5));
  CHECK(select_aada(in, 5).ids == std::vector<std::int64_t>{102, 100, 103, 104, 101});

  const AcquisitionInput confident = make_input({{1.0, 0.0}, {0.5, 0.5}, {0.0, 1.0}, {1.0, 0.0}},
                                                {0.9, 1e-3, 0.9, 0.9}, zero_features(4));
  CHECK(select_aada(confident, 1).ids == std::vector<std::int64_t>{101});
  CHECK(select_aada(confident, 3).ids == std::vector<std::int64_t>{101, 100, 102});
}

TEST_CASE("AADA selection is unchanged when every diversity weight is scaled") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const AcquisitionInput in = random_input(30, seed);
    for (double c : {0.5, 3.0}) {
      // (1 - d')/d' = c (1 - d)/d
      AcquisitionInput scaled = in;
      for (double& d : scaled.domain_prob_source) d = 1.0 / (1.0 + c * (1.0 - d) / d);
      CHECK(select_aada(scaled, 7).ids == select_aada(in, 7).ids);
    }
  }
}

TEST_CASE("proportional AADA sampling") {
  const AcquisitionInput in = random_input(20, 3);
  Rng a(8), b(8);
  const QuerySet qa = select_aada(in, 5, AadaMode::proportional, &a);
  check_query(qa, in, 5);
  CHECK(select_aada(in, 5, AadaMode::proportional, &b).ids == qa.ids);
  CHECK_THROWS_AS(select_aada(in, 5, AadaMode::proportional, nullptr), ArgumentError);
}

TEST_CASE("uniform selection") {
  std::vector<std::int64_t> ids(10);
  for (std::size_t i = 0; i < 10; ++i) ids[i] = static_cast<std::int64_t>(i);
  Rng rng(77);
  CHECK(select_uniform(ids, 0, rng).ids.empty());
  auto all = select_uniform(ids, 15, rng).ids;
  std::sort(all.begin(), all.end());
  CHECK(all == ids);

  std::vector<int> count(10, 0);
  const int draws = 10000;
  for (int t = 0; t < draws; ++t) ++count[static_cast<std::size_t>(select_uniform(ids, 1, rng).ids[0])];
  double chi2 = 0.0;
  for (int c : count) chi2 += (c - draws / 10.0) * (c - draws / 10.0) / (draws / 10.0);
  CHECK(chi2 < 27.877);  // 9 degrees of freedom, p = 0.001

  // Marginal inclusion probability B / N with B = 3.
  std::vector<int> hits(10, 0);
  for (int t = 0; t < draws; ++t) {
    const auto q = select_uniform(ids, 3, rng).ids;
    CHECK(std::set<std::int64_t>(q.begin(), q.end()).size() == 3);
    for (auto id : q) ++hits[static_cast<std::size_t>(id)];
  }
  const double sigma = std::sqrt(draws * 0.3 * 0.7);
  for (int h : hits) CHECK(std::abs(h - 0.3 * draws) < 4.0 * sigma);
}

TEST_CASE("gradient embedding") {
  const auto g = gradient_embedding(std::vector<double>{0.7, 0.3}, std::vector<double>{1.0, 2.0});
  REQUIRE(g.size() == 4);
  CHECK(g[0] == doctest::Approx(-0.3).epsilon(1e-15));
  CHECK(g[1] == doctest::Approx(-0.6).epsilon(1e-15));
  CHECK(g[2] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(g[3] == doctest::Approx(0.6).epsilon(1e-15));
  for (double v : gradient_embedding(std::vector<double>{0.0, 1.0, 0.0}, std::vector<double>{3.0, -1.0})) {
    CHECK(v == 0.0);
  }
}

TEST_CASE("BADGE picks first in proportion to squared embedding norm") {
  // p = (0.75, 0.25) gives ||g||^2 = 2 * 0.25^2 * ||f||^2 = ||f||^2 / 8.
  Tensor f({2, 2}, {2.0, 2.0, std::sqrt(24.0), 0.0});
  const AcquisitionInput in = make_input({{0.75, 0.25}, {0.75, 0.25}}, {0.5, 0.5}, f);
  const double n1 = 0.125 * 8.0, n2 = 0.125 * 24.0;
  CHECK(n1 == doctest::Approx(1.0));
  CHECK(n2 == doctest::Approx(3.0));
  Rng rng(31);
  int second = 0;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) second += select_badge(in, 1, rng).ids[0] == 101 ? 1 : 0;
  CHECK(std::abs(second / static_cast<double>(trials) - 0.75) < 0.02);
}

TEST_CASE("BADGE takes zero embeddings last") {
  Rng frng(2);
  const Tensor f = testing::random_matrix(6, 3, frng);
  // 100, 102 and 105 are one-hot at their argmax, so their embeddings vanish.
  const AcquisitionInput in = make_input({{1.0, 0.0}, {0.6, 0.4}, {0.0, 1.0}, {0.3, 0.7}, {0.55, 0.45}, {1.0, 0.0}},
                                         std::vector<double>(6, 0.5), f);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto three = select_badge(in, 3, rng).ids;
    CHECK(std::set<std::int64_t>(three.begin(), three.end()) == std::set<std::int64_t>{101, 103, 104});
    Rng rng2(seed);
    const auto five = select_badge(in, 5, rng2).ids;
    check_query(select_badge(in, 5, rng2), in, 5);
    CHECK(five[3] == 100);
    CHECK(five[4] == 102);
  }
}

TEST_CASE("CLUE with one centroid returns the sample nearest the mean") {
  const Tensor f({5, 2}, {0.0, 0.0, 4.0, 0.0, 0.0, 4.0, 1.2, 1.1, 4.0, 4.0});  // mean (1.84, 1.82)
  const AcquisitionInput in = make_input(std::vector<std::vector<double>>(5, {0.5, 0.5}),
                                         std::vector<double>(5, 0.5), f);
  for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(select_clue(in, 1, 1.0, seed).ids == std::vector<std::int64_t>{103});
}

TEST_CASE("CLUE with all-confident predictions falls back to uniform weights") {
  Rng rng(5);
  const Tensor f = testing::random_matrix(40, 3, rng);
  std::vector<std::vector<double>> confident, flat;
  for (std::size_t i = 0; i < 40; ++i) {
    confident.push_back(i % 2 ? std::vector<double>{1.0, 0.0} : std::vector<double>{0.0, 1.0});
    flat.push_back({0.5, 0.5});
  }
  const auto a = make_input(confident, std::vector<double>(40, 0.5), f);
  const auto b = make_input(flat, std::vector<double>(40, 0.5), f);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CHECK(select_clue(a, 4, 1.0, seed).ids == select_clue(b, 4, 1.0, seed).ids);
  }
}

TEST_CASE("CLUE takes one sample from each of two separated blobs") {
  Rng rng(9);
  std::normal_distribution<double> normal(0.0, 0.3);
  Tensor f = Tensor::matrix(60, 2);
  for (std::size_t i = 0; i < 60; ++i) {
    const double c = i < 30 ? -5.0 : 5.0;
    f.at(i, 0) = c + normal(rng);
    f.at(i, 1) = normal(rng);
  }
  const AcquisitionInput in = random_input(60, 4);
  AcquisitionInput blobs = in;
  blobs.features = f;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto q = select_clue(blobs, 2, 1.0, seed);
    check_query(q, blobs, 2);
    const bool first_left = q.ids[0] < 130, second_left = q.ids[1] < 130;
    CHECK(first_left != second_left);
  }
}

TEST_CASE("CLUE on identical features falls back to entropy ranking") {
  const AcquisitionInput in = make_input({{0.9, 0.1}, {0.5, 0.5}, {0.7, 0.3}, {0.99, 0.01}},
                                         std::vector<double>(4, 0.5), Tensor::matrix(4, 3, 1.0));
  CHECK(select_clue(in, 2, 1.0, 0).ids == std::vector<std::int64_t>{101, 102});
}

TEST_CASE("every strategy returns distinct pool members deterministically") {
  const AcquisitionInput in = random_input(50, 12);
  for (std::size_t b : {0u, 1u, 10u, 50u, 80u}) {
    const std::size_t expect = std::min<std::size_t>(b, 50);
    Rng r1(3), r2(3);
    const auto u = select_uniform(in.ids, b, r1);
    check_query(u, in, expect);
    CHECK(select_uniform(in.ids, b, r2).ids == u.ids);
    check_query(select_aada(in, b), in, expect);
    const auto c = select_clue(in, b, 1.0, 6);
    check_query(c, in, expect);
    CHECK(select_clue(in, b, 1.0, 6).ids == c.ids);
    Rng r3(4), r4(4);
    const auto g = select_badge(in, b, r3);
    check_query(g, in, expect);
    CHECK(select_badge(in, b, r4).ids == g.ids);
  }
}

TEST_CASE("acquisition input validation") {
  AcquisitionInput in = make_input({{0.5, 0.5}, {0.2, 0.8}}, {0.5, 0.5}, zero_features(2));
  CHECK_NOTHROW(in.validate());
  AcquisitionInput bad = in;
  bad.class_probs.at(0, 0) = 0.6;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = in;
  bad.domain_prob_source[1] = 1.5;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = in;
  bad.ids[1] = bad.ids[0];
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = in;
  bad.domain_prob_source.pop_back();
  CHECK_THROWS_AS(bad.validate(), DimensionError);
  CHECK(parse_strategy("badge") == Strategy::badge);
  CHECK(std::string(strategy_name(Strategy::clue)) == "clue");
  CHECK_THROWS_AS(parse_strategy("coreset"), ArgumentError);
}
