#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

#include "driftcov/trajectory.hpp"

namespace driftcov::spectral {

/// Discrete prolate spheroidal sequence, unit l2 norm.
struct Taper {
  std::vector<double> h;
  double nw{};
  int order_index{};
  double eigenvalue{};  // of the tridiagonal Slepian operator (ordering only)
};

/// Solves the symmetric tridiagonal Slepian eigenproblem and returns the
/// eigenvector of the (order_index+1)-th largest eigenvalue, sign-normalized
/// so that sum(h) > 0 (first significant element > 0 for odd tapers).
Taper dpss(int n, double nw, int order_index);

/// Spectral concentration of the taper in [-W, W]: h' A h with
/// A_jk = sin(2 pi W (j-k)) / (pi (j-k)). Close to 1 for low orders.
double concentration(const Taper& t);

struct SpectrumEstimate {
  std::vector<double> omega;  // rad per time unit, ascending Fourier grid
  std::vector<double> power;
  double delta{};
};

/// Tapered estimate S(w_k) = (delta/n) |sum_j h_j z_j e^{-i j w_k delta}|^2 on
/// the grid w_k = 2 pi m / (n delta), m = -ceil(n/2)+1 .. floor(n/2).
SpectrumEstimate tapered_spectrum(std::span<const std::complex<double>> z, double delta,
                                  const Taper& taper);

/// Spectrum-weighted mean absolute frequency, sum |w| S / sum S.
/// Throws degenerate_input_error on an all-zero spectrum.
double expected_frequency(const SpectrumEstimate& spec);

struct WindowedEf {
  std::string segment_id;
  int window_index{};
  double mid_lon{};
  double mid_lat{};
  double mid_time_s{};
  double ef_rad_per_day{};
};

struct RollingEfOptions {
  int window_len = 121;    // samples
  int overlap = 60;        // samples; stride = window_len - overlap
  double nw = 4.0;
  int order_index = 0;
  bool remove_mean = true; // subtract the window mean velocity before tapering
};

/// Expected frequency over rolling windows of a segment; one value per
/// window, located at the mid-window fix. Empty when the segment is shorter
/// than one window.
std::vector<WindowedEf> rolling_ef(const traj::TrajectorySegment& seg,
                                   const RollingEfOptions& opt = {});

/// Lateral diffusivity estimate (delta/4) * sum_{|tau| <= max_lag} acov(tau)
/// from the biased sample autocovariance of a zero-mean velocity series.
/// Units m^2/s for z in m/s and delta in seconds.
double diffusivity(std::span<const std::complex<double>> z, double delta, int max_lag);

}  // namespace driftcov::spectral
