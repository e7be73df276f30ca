#include "driftcov/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace driftcov::metrics {

ScoreReport score(std::span<const double> truth, std::span<const double> mean,
                  std::span<const double> lo, std::span<const double> hi, ZeroTruthPolicy policy) {
  const std::size_t n = truth.size();
  if (n == 0) throw std::invalid_argument("score: empty input");
  if (mean.size() != n || lo.size() != n || hi.size() != n)
    throw std::invalid_argument("score: length mismatch");

  double se = 0, spe = 0, ae = 0, ape = 0, width = 0;
  std::size_t covered = 0, pct_n = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double err = mean[i] - truth[i];
    se += err * err;
    ae += std::fabs(err);
    width += hi[i] - lo[i];
    if (lo[i] <= truth[i] && truth[i] <= hi[i]) ++covered;
    if (truth[i] != 0.0) {
      double rel = err / truth[i];
      spe += rel * rel;
      ape += std::fabs(rel);
      ++pct_n;
    } else if (policy == ZeroTruthPolicy::Error) {
      throw std::invalid_argument("score: zero truth with percentage metrics requested");
    }
  }

  ScoreReport r;
  r.rmse = std::sqrt(se / n);
  r.mae = ae / n;
  r.rmspe = pct_n ? std::sqrt(spe / pct_n) : 0.0;
  r.mape = pct_n ? ape / pct_n : 0.0;
  r.width95 = width / n;
  r.coverage95 = static_cast<double>(covered) / n;
  return r;
}

std::vector<bool> mask_uncertain(std::span<const double> sd, double threshold) {
  std::vector<bool> mask(sd.size());
  for (std::size_t i = 0; i < sd.size(); ++i) {
    if (sd[i] < 0) throw std::invalid_argument("mask_uncertain: negative sd");
    mask[i] = sd[i] > threshold;
  }
  return mask;
}

}  // namespace driftcov::metrics
