#include "driftcov/spectral.hpp"

#include <Eigen/Dense>
#include <numeric>
#include <stdexcept>

#include "driftcov/errors.hpp"

namespace driftcov::spectral {

Taper dpss(int n, double nw, int order_index) {
  if (n < 8) throw std::invalid_argument("dpss: n must be >= 8");
  if (!(nw > 0.0) || nw >= n / 2.0) throw std::invalid_argument("dpss: need 0 < nw < n/2");
  if (order_index < 0 || order_index >= static_cast<int>(2.0 * nw))
    throw std::invalid_argument("dpss: order_index must be < 2*nw");

  const double w = nw / n;
  const double cos2pw = std::cos(2.0 * M_PI * w);

  // Symmetric tridiagonal operator that commutes with the Slepian
  // concentration kernel; its eigenvectors are the DPSS in the same order.
  Eigen::MatrixXd tri = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    double d = 0.5 * (n - 1 - 2.0 * j);
    tri(j, j) = d * d * cos2pw;
  }
  for (int j = 1; j < n; ++j) {
    double o = 0.5 * j * (n - j);
    tri(j, j - 1) = o;
    tri(j - 1, j) = o;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tri);
  if (es.info() != Eigen::Success) throw numerical_error("dpss: eigensolver failed");

  // Eigen sorts ascending; take the (order_index+1)-th largest.
  const int col = n - 1 - order_index;
  Eigen::VectorXd h = es.eigenvectors().col(col);
  h /= h.norm();

  double s = h.sum();
  if (std::fabs(s) > 1e-8) {
    if (s < 0) h = -h;
  } else {
    for (int j = 0; j < n; ++j) {
      if (std::fabs(h[j]) > 1e-8) {
        if (h[j] < 0) h = -h;
        break;
      }
    }
  }

  Taper t;
  t.h.assign(h.data(), h.data() + n);
  t.nw = nw;
  t.order_index = order_index;
  t.eigenvalue = es.eigenvalues()[col];
  return t;
}

double concentration(const Taper& t) {
  const int n = static_cast<int>(t.h.size());
  const double w = t.nw / n;
  double acc = 0.0;
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k < n; ++k) {
      double a = (j == k) ? 2.0 * w : std::sin(2.0 * M_PI * w * (j - k)) / (M_PI * (j - k));
      acc += t.h[j] * a * t.h[k];
    }
  }
  return acc;
}

SpectrumEstimate tapered_spectrum(std::span<const std::complex<double>> z, double delta,
                                  const Taper& taper) {
  const int n = static_cast<int>(z.size());
  if (n != static_cast<int>(taper.h.size()))
    throw std::invalid_argument("tapered_spectrum: series and taper lengths differ");
  if (!(delta > 0)) throw std::invalid_argument("tapered_spectrum: delta must be > 0");

  const int m_lo = -((n + 1) / 2) + 1;  // -ceil(n/2)+1
  const int m_hi = n / 2;               // floor(n/2)

  SpectrumEstimate out;
  out.delta = delta;
  out.omega.reserve(n);
  out.power.reserve(n);

  std::vector<std::complex<double>> hz(n);
  for (int j = 0; j < n; ++j) hz[j] = taper.h[j] * z[j];

  for (int m = m_lo; m <= m_hi; ++m) {
    const double phase = -2.0 * M_PI * m / n;  // = -omega_m * delta per sample
    std::complex<double> acc{0.0, 0.0};
    for (int j = 0; j < n; ++j) acc += hz[j] * std::polar(1.0, phase * j);
    out.omega.push_back(2.0 * M_PI * m / (n * delta));
    out.power.push_back(delta / n * std::norm(acc));
  }
  return out;
}

double expected_frequency(const SpectrumEstimate& spec) {
  double total = std::accumulate(spec.power.begin(), spec.power.end(), 0.0);
  if (!(total > 0)) throw degenerate_input_error("expected_frequency: all-zero spectrum");
  double weighted = 0.0;
  for (std::size_t k = 0; k < spec.power.size(); ++k)
    weighted += std::fabs(spec.omega[k]) * spec.power[k];
  return weighted / total;
}

std::vector<WindowedEf> rolling_ef(const traj::TrajectorySegment& seg, const RollingEfOptions& opt) {
  if (opt.window_len < 8) throw std::invalid_argument("rolling_ef: window too short");
  if (opt.overlap < 0 || opt.overlap >= opt.window_len)
    throw std::invalid_argument("rolling_ef: overlap must be in [0, window_len)");

  const int n = static_cast<int>(seg.fixes.size());
  std::vector<WindowedEf> out;
  if (n < opt.window_len) return out;

  const auto z = traj::velocities(seg);
  const Taper taper = dpss(opt.window_len, opt.nw, opt.order_index);
  const int stride = opt.window_len - opt.overlap;
  const double seconds_per_day = 86400.0;

  int window_index = 0;
  for (int start = 0; start + opt.window_len <= n; start += stride, ++window_index) {
    std::vector<std::complex<double>> win(z.begin() + start, z.begin() + start + opt.window_len);
    if (opt.remove_mean) {
      std::complex<double> mean{0.0, 0.0};
      for (const auto& v : win) mean += v;
      mean /= static_cast<double>(win.size());
      for (auto& v : win) v -= mean;
    }
    auto spec = tapered_spectrum(win, seg.delta_s, taper);
    double ef;
    try {
      ef = expected_frequency(spec);
    } catch (const degenerate_input_error&) {
      continue;  // stationary drifter inside this window
    }
    const traj::Fix& mid = seg.fixes[start + opt.window_len / 2];
    out.push_back({seg.segment_id, window_index, mid.lon, mid.lat, mid.time_s,
                   ef * seconds_per_day});
  }
  return out;
}

double diffusivity(std::span<const std::complex<double>> z, double delta, int max_lag) {
  const int n = static_cast<int>(z.size());
  if (max_lag < 0) throw std::invalid_argument("diffusivity: max_lag must be >= 0");
  if (n <= 2 * max_lag) throw std::invalid_argument("diffusivity: series too short for max_lag");

  // Biased sample autocovariance; the sum over +/-tau is real by conjugate symmetry.
  double total = 0.0;
  for (int j = 0; j < n; ++j) total += std::norm(z[j]);
  total /= n;

  for (int tau = 1; tau <= max_lag; ++tau) {
    std::complex<double> acc{0.0, 0.0};
    for (int j = 0; j + tau < n; ++j) acc += z[j + tau] * std::conj(z[j]);
    total += 2.0 * acc.real() / n;
  }
  return delta / 4.0 * total;
}

}  // namespace driftcov::spectral
