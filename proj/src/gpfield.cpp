#include "driftcov/gpfield.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "driftcov/errors.hpp"
#include "driftcov/optim.hpp"

namespace driftcov::gpfield {

double matern_cov(double h, const MaternParams& p) {
  p.validate();
  if (h < 0) throw std::invalid_argument("matern_cov: negative distance");
  if (h == 0.0) return p.sigma2;
  const double kh = p.kappa * h;
  double c = p.sigma2 * std::pow(2.0, 1.0 - p.nu) / std::tgamma(p.nu) * std::pow(kh, p.nu) *
             std::cyl_bessel_k(p.nu, kh);
  // (kh)^nu K_nu underflows jointly for large kh; the limit is 0.
  return std::isfinite(c) ? c : 0.0;
}

namespace {

// Cubic-Hermite interpolant of g(t) = sigma2 * 2^(1-nu)/Gamma(nu) * t^nu K_nu(t)
// on a sqrt-warped grid. Node values and the exact derivative
// g'(t) = -c * t^nu K_{nu-1}(t) keep the interpolation error below 1e-10 of
// sigma2, removing the Bessel evaluation from the covariance-matrix hot loop.
class MaternInterpolant {
 public:
  MaternInterpolant(const MaternParams& p, double t_max) : p_(p) {
    t_cap_ = std::min(std::max(t_max, 1e-3), 45.0);
    const double c = p.sigma2 * std::pow(2.0, 1.0 - p.nu) / std::tgamma(p.nu);
    t_.resize(kNodes + 1);
    g_.resize(kNodes + 1);
    dg_.resize(kNodes + 1);
    for (int i = 0; i <= kNodes; ++i) {
      double frac = static_cast<double>(i) / kNodes;
      double t = t_cap_ * frac * frac;
      t_[i] = t;
      if (t == 0.0) {
        g_[i] = p.sigma2;
        dg_[i] = 0.0;  // slope of the even extension; the first node spacing is ~1e-9 t_cap
      } else {
        g_[i] = c * std::pow(t, p.nu) * std::cyl_bessel_k(p.nu, t);
        // K_{nu-1} = K_{1-nu}; cyl_bessel_k wants a nonnegative order.
        dg_[i] = -c * std::pow(t, p.nu) * std::cyl_bessel_k(std::fabs(p.nu - 1.0), t);
        if (!std::isfinite(g_[i])) g_[i] = 0.0;
        if (!std::isfinite(dg_[i])) dg_[i] = 0.0;
      }
    }
  }

  double operator()(double t) const {
    if (t <= 0.0) return p_.sigma2;
    if (t >= t_cap_) return matern_cov(t / p_.kappa, p_);  // far tail, effectively zero
    int i = static_cast<int>(std::sqrt(t / t_cap_) * kNodes);
    i = std::min(i, kNodes - 1);
    while (i > 0 && t < t_[i]) --i;
    while (i + 1 < kNodes && t >= t_[i + 1]) ++i;
    const double h = t_[i + 1] - t_[i];
    const double s = (t - t_[i]) / h;
    const double s2 = s * s, s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * g_[i] + (s3 - 2 * s2 + s) * h * dg_[i] +
           (-2 * s3 + 3 * s2) * g_[i + 1] + (s3 - s2) * h * dg_[i + 1];
  }

 private:
  static constexpr int kNodes = 4096;
  MaternParams p_;
  double t_cap_;
  std::vector<double> t_, g_, dg_;
};

}  // namespace

Eigen::MatrixXd matern_covariance(const std::vector<geo::LocalPoint>& pts, const MaternParams& p) {
  p.validate();
  const int n = static_cast<int>(pts.size());
  Eigen::MatrixXd cov(n, n);
  double d_max = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < i; ++j) {
      double d = geo::distance(pts[i], pts[j]);
      cov(i, j) = d;
      d_max = std::max(d_max, d);
    }
  MaternInterpolant interp(p, p.kappa * d_max);
  for (int i = 0; i < n; ++i) {
    cov(i, i) = p.sigma2;
    for (int j = 0; j < i; ++j) {
      double c = interp(p.kappa * cov(i, j));
      cov(i, j) = c;
      cov(j, i) = c;
    }
  }
  return cov;
}

Eigen::LLT<Eigen::MatrixXd> robust_llt(Eigen::MatrixXd cov) {
  const double scale = cov.diagonal().mean();
  for (double jitter = 1e-8; jitter <= 1.1e-4; jitter *= 10.0) {
    Eigen::MatrixXd attempt = cov;
    attempt.diagonal().array() += jitter * scale;
    Eigen::LLT<Eigen::MatrixXd> llt(attempt);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw numerical_error("robust_llt: matrix not positive definite after jitter escalation");
}

Eigen::VectorXd simulate_gp(const std::vector<geo::LocalPoint>& pts, const MaternParams& p, Rng& rng) {
  p.validate();
  auto llt = robust_llt(matern_covariance(pts, p));
  Eigen::VectorXd z(pts.size());
  for (int i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return llt.matrixL() * z;
}

Eigen::VectorXd simulate_gp(const std::vector<geo::LocalPoint>& pts, const MaternParams& p,
                            std::uint64_t seed) {
  Rng rng(seed);
  return simulate_gp(pts, p, rng);
}

namespace {

struct ProfiledFit {
  double beta0, sigma2_phi, sigma2_eps, nll;
};

// Negative log likelihood with beta0 and the overall variance profiled out.
// theta = (log kappa, log delta), delta = sigma2_eps / sigma2_phi.
class KrigingObjective {
 public:
  KrigingObjective(const std::vector<geo::LocalPoint>& sites, const Eigen::MatrixXd& y, double nu,
                   double log_box)
      : sites_(sites), y_(y), nu_(nu), log_box_(log_box) {}

  double operator()(const Eigen::VectorXd& theta) const {
    ProfiledFit fit;
    return evaluate(theta, fit);
  }

  double evaluate(const Eigen::VectorXd& theta, ProfiledFit& fit) const {
    const double log_kappa = theta[0], log_delta = theta[1];
    if (std::fabs(log_kappa) > log_box_ || std::fabs(log_delta) > 2.0 * log_box_) return 1e30;
    const double kappa = std::exp(log_kappa);
    const double delta = std::exp(log_delta);

    const int n = static_cast<int>(sites_.size());
    const int m = static_cast<int>(y_.cols());
    Eigen::MatrixXd corr = matern_covariance(sites_, {nu_, kappa, 1.0});
    corr.diagonal().array() += delta;

    Eigen::LLT<Eigen::MatrixXd> llt(corr);
    if (llt.info() != Eigen::Success) return 1e30;

    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    const Eigen::VectorXd kinv_one = llt.solve(ones);
    const double denom = ones.dot(kinv_one);

    double num = 0.0;
    for (int r = 0; r < m; ++r) num += kinv_one.dot(y_.col(r));
    const double beta0 = num / (m * denom);

    double quad = 0.0;
    for (int r = 0; r < m; ++r) {
      Eigen::VectorXd resid = y_.col(r).array() - beta0;
      quad += resid.dot(llt.solve(resid));
    }
    // Floor keeps degenerate (e.g. constant) data finite instead of sending
    // the profiled likelihood to -inf.
    const double sigma2 = std::max(quad, 1e-12) / (n * m);
    if (!std::isfinite(sigma2)) return 1e30;

    double logdet = 0.0;
    for (int i = 0; i < n; ++i) logdet += std::log(llt.matrixL()(i, i));
    logdet *= 2.0;

    fit.beta0 = beta0;
    fit.sigma2_phi = sigma2;
    fit.sigma2_eps = delta * sigma2;
    fit.nll = 0.5 * m * logdet + 0.5 * n * m * (std::log(2.0 * M_PI * sigma2) + 1.0);
    return fit.nll;
  }

 private:
  const std::vector<geo::LocalPoint>& sites_;
  const Eigen::MatrixXd& y_;
  double nu_;
  double log_box_;
};

double median_pairwise_distance(const std::vector<geo::LocalPoint>& pts) {
  std::vector<double> d;
  const std::size_t n = pts.size();
  const std::size_t stride = std::max<std::size_t>(1, n * n / 4000);  // subsample large sets
  std::size_t counter = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (counter++ % stride == 0) d.push_back(geo::distance(pts[i], pts[j]));
  if (d.empty()) return 1.0;
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  return d[d.size() / 2];
}

}  // namespace

KrigingModel fit_kriging_replicated(const std::vector<geo::LocalPoint>& sites,
                                    const Eigen::MatrixXd& y, const KrigingOptions& opt) {
  if (static_cast<int>(sites.size()) != y.rows())
    throw std::invalid_argument("fit_kriging: sites/observations length mismatch");
  if (sites.size() < 10) throw std::invalid_argument("fit_kriging: need at least 10 sites");

  KrigingObjective objective(sites, y, opt.nu, opt.log_box);

  // Starts: variogram-flavoured data start, a wider prior-centred one, and a
  // perturbation of the first. A caller-provided warm start replaces the list
  // head so bootstrap refits converge in a handful of steps.
  const double med = std::max(1e-12, median_pairwise_distance(sites));
  const double kappa_data = std::sqrt(8.0 * opt.nu) / med;
  std::vector<Eigen::Vector2d> starts;
  if (opt.warm_start) starts.push_back(*opt.warm_start);
  starts.push_back({std::log(kappa_data), std::log(0.05)});
  starts.push_back({std::log(kappa_data / 4.0), std::log(0.5)});
  starts.push_back({std::log(kappa_data * 4.0), std::log(0.01)});
  starts.resize(std::clamp<std::size_t>(opt.n_starts, 1, starts.size()));

  optim::NelderMeadOptions nm;
  nm.max_evaluations = opt.max_evaluations;
  nm.x_tol = 1e-9;

  optim::NelderMeadResult best;
  for (const auto& s : starts) {
    auto r = optim::nelder_mead(objective, s, nm);
    if (r.value < best.value) best = r;
  }

  ProfiledFit fit;
  objective.evaluate(best.x, fit);

  KrigingModel model;
  model.beta0 = fit.beta0;
  model.sigma2_eps = fit.sigma2_eps;
  model.theta = {opt.nu, std::exp(best.x[0]), fit.sigma2_phi};
  model.sites = sites;
  model.y = y;
  model.log_likelihood = -fit.nll;
  model.grad_norm = optim::fd_gradient(objective, best.x).norm();
  model.converged = model.grad_norm < 1e-5 || best.simplex_size < 1e-8;

  if (!model.converged && opt.throw_on_nonconvergence)
    throw fit_error("fit_kriging: no start converged (grad norm " +
                        std::to_string(model.grad_norm) + ")",
                    model);
  return model;
}

KrigingModel fit_kriging(const std::vector<geo::LocalPoint>& sites, const Eigen::VectorXd& y,
                         const KrigingOptions& opt) {
  if (static_cast<int>(sites.size()) != y.size())
    throw std::invalid_argument("fit_kriging: sites/observations length mismatch");

  // Average duplicate locations.
  std::map<std::pair<double, double>, std::pair<double, int>> agg;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    auto& slot = agg[{sites[i].x, sites[i].y}];
    slot.first += y[i];
    slot.second += 1;
  }
  std::vector<geo::LocalPoint> usites;
  Eigen::VectorXd uy(agg.size());
  int k = 0;
  for (const auto& [key, val] : agg) {
    usites.push_back({key.first, key.second});
    uy[k++] = val.first / val.second;
  }
  return fit_kriging_replicated(usites, uy, opt);
}

Prediction krige_predict(const KrigingModel& model, const std::vector<geo::LocalPoint>& targets) {
  const int n = static_cast<int>(model.sites.size());
  const int m = static_cast<int>(model.y.cols());
  Eigen::MatrixXd cov = matern_covariance(model.sites, model.theta);
  cov.diagonal().array() += model.sigma2_eps;
  auto llt = robust_llt(std::move(cov));

  Eigen::VectorXd mean_resid = Eigen::VectorXd::Zero(n);
  for (int r = 0; r < m; ++r) mean_resid += model.y.col(r);
  mean_resid = mean_resid / m;
  mean_resid.array() -= model.beta0;
  const Eigen::VectorXd alpha = llt.solve(mean_resid);

  Prediction out;
  out.mean.resize(targets.size());
  out.sd.resize(targets.size());

  // Chunked batch solves keep large raster predictions tractable.
  const std::size_t chunk = 512;
  Eigen::MatrixXd cross(n, chunk);
  for (std::size_t start = 0; start < targets.size(); start += chunk) {
    const std::size_t count = std::min(chunk, targets.size() - start);
    for (std::size_t t = 0; t < count; ++t)
      for (int i = 0; i < n; ++i)
        cross(i, t) = matern_cov(geo::distance(targets[start + t], model.sites[i]), model.theta);
    auto block = cross.leftCols(count);
    Eigen::MatrixXd solved = llt.solve(block);
    for (std::size_t t = 0; t < count; ++t) {
      out.mean[start + t] = model.beta0 + block.col(t).dot(alpha);
      double var = model.theta.sigma2 - block.col(t).dot(solved.col(t));
      out.sd[start + t] = std::sqrt(std::max(0.0, var));
    }
  }
  return out;
}

}  // namespace driftcov::gpfield
