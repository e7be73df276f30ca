#include <doctest.h>

#include <algorithm>
#include <vector>

#include "driftcov/metrics.hpp"
#include "driftcov/random.hpp"

using namespace driftcov;

TEST_CASE("score: perfect prediction with degenerate intervals") {
  std::vector<double> truth{1.0, 2.0, 3.0};
  auto r = metrics::score(truth, truth, truth, truth);
  CHECK(r.rmse == 0.0);
  CHECK(r.rmspe == 0.0);
  CHECK(r.mae == 0.0);
  CHECK(r.mape == 0.0);
  CHECK(r.width95 == 0.0);
  CHECK(r.coverage95 == 1.0);
}

TEST_CASE("score: hand-computed values") {
  std::vector<double> truth{1.0, 2.0};
  std::vector<double> mean{1.5, 1.0};
  std::vector<double> lo{0.0, 2.5};
  std::vector<double> hi{2.0, 3.5};
  auto r = metrics::score(truth, mean, lo, hi);
  CHECK(r.rmse == doctest::Approx(std::sqrt((0.25 + 1.0) / 2)));
  CHECK(r.mae == doctest::Approx(0.75));
  CHECK(r.rmspe == doctest::Approx(std::sqrt((0.25 + 0.25) / 2)));
  CHECK(r.mape == doctest::Approx(0.5));
  CHECK(r.width95 == doctest::Approx(1.5));
  CHECK(r.coverage95 == doctest::Approx(0.5));
}

TEST_CASE("score: zero truth policy") {
  std::vector<double> truth{0.0, 2.0};
  std::vector<double> mean{0.5, 2.0};
  std::vector<double> lohi{0.0, 2.0};
  CHECK_THROWS_AS(metrics::score(truth, mean, lohi, lohi), std::invalid_argument);
  auto r = metrics::score(truth, mean, lohi, lohi, metrics::ZeroTruthPolicy::SkipPercentage);
  CHECK(r.mape == 0.0);
  CHECK(r.rmse == doctest::Approx(std::sqrt(0.125)));
}

TEST_CASE("score: rmse dominates mae and both are permutation invariant") {
  Rng rng(42);
  std::vector<double> truth(40), mean(40), lo(40), hi(40);
  for (int i = 0; i < 40; ++i) {
    truth[i] = 1.0 + rng.uniform();
    mean[i] = truth[i] + 0.3 * rng.normal();
    lo[i] = mean[i] - rng.uniform();
    hi[i] = mean[i] + rng.uniform();
  }
  auto r = metrics::score(truth, mean, lo, hi);
  CHECK(r.rmse >= r.mae);

  std::vector<int> perm(40);
  for (int i = 0; i < 40; ++i) perm[i] = i;
  std::reverse(perm.begin(), perm.end());
  std::vector<double> t2(40), m2(40), l2(40), h2(40);
  for (int i = 0; i < 40; ++i) {
    t2[i] = truth[perm[i]];
    m2[i] = mean[perm[i]];
    l2[i] = lo[perm[i]];
    h2[i] = hi[perm[i]];
  }
  auto r2 = metrics::score(t2, m2, l2, h2);
  CHECK(r2.rmse == doctest::Approx(r.rmse));
  CHECK(r2.coverage95 == doctest::Approx(r.coverage95));
}

TEST_CASE("score: coverage grows as intervals widen") {
  Rng rng(9);
  std::vector<double> truth(60), mean(60), lo(60), hi(60), lo2(60), hi2(60);
  for (int i = 0; i < 60; ++i) {
    truth[i] = rng.normal();
    mean[i] = truth[i] + 0.5 * rng.normal();
    lo[i] = mean[i] - 0.4;
    hi[i] = mean[i] + 0.4;
    lo2[i] = mean[i] - 1.2;
    hi2[i] = mean[i] + 1.2;
  }
  auto narrow = metrics::score(truth, mean, lo, hi, metrics::ZeroTruthPolicy::SkipPercentage);
  auto wide = metrics::score(truth, mean, lo2, hi2, metrics::ZeroTruthPolicy::SkipPercentage);
  CHECK(wide.coverage95 >= narrow.coverage95);
}

TEST_CASE("mask_uncertain: strict threshold semantics") {
  std::vector<double> sd{0.0, 2.9, 3.0, 3.0000001, 10.0};
  auto mask = metrics::mask_uncertain(sd);
  CHECK(mask == std::vector<bool>{false, false, false, true, true});

  auto none = metrics::mask_uncertain(sd, std::numeric_limits<double>::infinity());
  CHECK(std::none_of(none.begin(), none.end(), [](bool b) { return b; }));

  auto all_positive = metrics::mask_uncertain(sd, 0.0);
  CHECK(all_positive == std::vector<bool>{false, true, true, true, true});

  std::vector<double> bad{-1.0};
  CHECK_THROWS_AS(metrics::mask_uncertain(bad), std::invalid_argument);
}
