#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "driftcov/geo.hpp"
#include "driftcov/random.hpp"

namespace driftcov::gpfield {

/// Matern hyperparameters; the range rho = sqrt(8 nu) / kappa is where the
/// correlation has dropped to roughly 0.1.
struct MaternParams {
  double nu{1.0};
  double kappa{};
  double sigma2{1.0};

  double range() const { return std::sqrt(8.0 * nu) / kappa; }
  static MaternParams from_range(double nu, double range, double sigma2) {
    return {nu, std::sqrt(8.0 * nu) / range, sigma2};
  }
  void validate() const {
    if (!(nu > 0) || !(kappa > 0) || !(sigma2 > 0))
      throw std::invalid_argument("MaternParams: nu, kappa, sigma2 must be > 0");
  }
};

/// Matern covariance sigma^2 * 2^(1-nu)/Gamma(nu) * (kappa h)^nu K_nu(kappa h);
/// returns sigma^2 at h = 0 (the analytic limit).
double matern_cov(double h, const MaternParams& p);

/// Dense covariance matrix over a point set.
Eigen::MatrixXd matern_covariance(const std::vector<geo::LocalPoint>& pts, const MaternParams& p);

/// Cholesky with an escalating jitter ladder (1e-8 .. 1e-4 of the mean
/// diagonal); throws numerical_error if the matrix stays indefinite.
Eigen::LLT<Eigen::MatrixXd> robust_llt(Eigen::MatrixXd cov);

/// Draw from the zero-mean Gaussian field at the given locations.
Eigen::VectorXd simulate_gp(const std::vector<geo::LocalPoint>& pts, const MaternParams& p, Rng& rng);
Eigen::VectorXd simulate_gp(const std::vector<geo::LocalPoint>& pts, const MaternParams& p,
                            std::uint64_t seed);

struct KrigingModel {
  double beta0{};
  double sigma2_eps{};
  MaternParams theta;
  std::vector<geo::LocalPoint> sites;
  Eigen::MatrixXd y;  // one column per replicate sharing the sites
  double log_likelihood{};
  bool converged{};
  double grad_norm{};
};

struct KrigingOptions {
  double nu = 1.0;
  int n_starts = 3;
  int max_evaluations = 400;  // per start
  double log_box = std::log(1e6);  // |log kappa|, |log sigma2|, |log sigma2_eps| bound
  bool throw_on_nonconvergence = true;
  const Eigen::Vector2d* warm_start = nullptr;  // (log kappa, log delta)
};

class fit_error : public std::runtime_error {
 public:
  fit_error(const std::string& msg, KrigingModel best)
      : std::runtime_error(msg), best_(std::move(best)) {}
  const KrigingModel& best() const { return best_; }

 private:
  KrigingModel best_;
};

/// Maximum-likelihood fit of y(s) = beta0 + phi(s) + eps over (beta0,
/// sigma2_eps, kappa, sigma2), nu fixed. beta0 and the variance scale are
/// profiled analytically; (log kappa, log noise ratio) are optimized by
/// multi-start Nelder-Mead. Duplicate sites are averaged first.
KrigingModel fit_kriging(const std::vector<geo::LocalPoint>& sites, const Eigen::VectorXd& y,
                         const KrigingOptions& opt = {});

/// Same model with m independent replicates observed at shared sites
/// (joint likelihood, shared hyperparameters).
KrigingModel fit_kriging_replicated(const std::vector<geo::LocalPoint>& sites,
                                    const Eigen::MatrixXd& y_replicates,
                                    const KrigingOptions& opt = {});

struct Prediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
};

/// Noise-free conditional mean and SD of beta0 + phi(s) at the targets.
Prediction krige_predict(const KrigingModel& model, const std::vector<geo::LocalPoint>& targets);

}  // namespace driftcov::gpfield
