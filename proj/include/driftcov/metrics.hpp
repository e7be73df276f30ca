#pragma once

#include <span>
#include <vector>

namespace driftcov::metrics {

/// Prediction scores against truth; error metrics averaged across locations,
/// coverage as the covered fraction.
struct ScoreReport {
  double rmse{};
  double rmspe{};
  double mae{};
  double mape{};
  double width95{};
  double coverage95{};
};

enum class ZeroTruthPolicy { Error, SkipPercentage };

/// Computes rmse, rmspe, mae, mape, mean 95% interval width, and empirical
/// coverage. Percentage metrics need nonzero truth; with SkipPercentage those
/// entries are dropped from rmspe/mape only.
ScoreReport score(std::span<const double> truth, std::span<const double> mean,
                  std::span<const double> lo, std::span<const double> hi,
                  ZeroTruthPolicy policy = ZeroTruthPolicy::Error);

/// True where sd exceeds the threshold (strictly greater).
std::vector<bool> mask_uncertain(std::span<const double> sd, double threshold = 3.0);

}  // namespace driftcov::metrics
