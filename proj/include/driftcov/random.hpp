#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace driftcov {

/// Seeded random source with hand-rolled variate transforms.
///
/// The engine (std::mt19937_64) has a standard-mandated output sequence, and all
/// transforms below are written out explicitly, so a given seed produces the same
/// stream on every platform. The std::*_distribution adaptors are deliberately
/// not used; their output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one variate per call).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Gamma(shape, scale) via Marsaglia-Tsang; shape < 1 boosted through shape + 1.
  double gamma(double shape, double scale) {
    if (shape <= 0.0 || scale <= 0.0) throw std::invalid_argument("gamma: shape and scale must be > 0");
    if (shape < 1.0) {
      double u = uniform();
      return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      double v = t * t * t;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return scale * d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return scale * d * v;
    }
  }

  /// Inverse Gaussian(mean, shape) via the Michael-Schucany-Haas transform.
  double inverse_gaussian(double mean, double shape) {
    if (mean <= 0.0 || shape <= 0.0) throw std::invalid_argument("inverse_gaussian: mean and shape must be > 0");
    double z = normal();
    double y = z * z;
    double x = mean + mean * mean * y / (2.0 * shape) -
               mean / (2.0 * shape) * std::sqrt(4.0 * mean * shape * y + mean * mean * y * y);
    if (uniform() <= mean / (mean + x)) return x;
    return mean * mean / x;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace driftcov
