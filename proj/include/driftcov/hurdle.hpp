#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "driftcov/geo.hpp"
#include "driftcov/metrics.hpp"
#include "driftcov/random.hpp"

namespace driftcov::hurdle {

/// Hyperparameters of one AR(1)-in-time, Matern-in-space latent field.
struct FieldHyper {
  double range{0.2};   // rho of the per-time innovations
  double sigma{0.5};   // marginal SD of the innovations
  double alpha{0.0};   // AR(1) coefficient, |alpha| < 1
};

/// Hyperparameters of the two-part model.
struct HurdleHyper {
  double k{10.0};      // Gamma shape
  double gamma{0.3};   // copy factor scaling psi inside the biomass predictor
  FieldHyper psi;      // shared presence/biomass field
  FieldHyper xi;       // biomass-only field
  double nu{1.0};      // Matern smoothness, fixed during fitting
  double beta_prior_sd{100.0};
};

/// Full generative specification: fixed effects (intercept first) plus
/// hyperparameters.
struct HurdleModelSpec {
  Eigen::VectorXd beta_z;
  Eigen::VectorXd beta_y;
  HurdleHyper hyper;
};

/// Default simulation configuration used by the bundled studies.
HurdleModelSpec default_simulation_spec();

/// Observations on a site x time lattice, stored time-major:
/// cell index of (site i, time t) is t * n_sites + i.
struct Dataset {
  std::vector<geo::LocalPoint> sites;
  std::vector<std::string> site_ids;     // optional; empty or size n_sites
  int n_times{1};
  Eigen::MatrixXd covariates;            // (n*T) x p, no intercept column
  std::vector<std::string> cov_names;
  std::vector<signed char> z;            // 0/1, -1 marks an unobserved cell
  Eigen::VectorXd y;                     // positive where z == 1, NaN elsewhere

  int n_sites() const { return static_cast<int>(sites.size()); }
  long n_cells() const { return static_cast<long>(n_sites()) * n_times; }
  long cell(int site, int time) const { return static_cast<long>(time) * n_sites() + site; }
  void validate() const;
};

struct LatentTruth {
  Eigen::MatrixXd psi, xi;  // n x T
  Eigen::MatrixXd pi, mu;   // n x T
};

struct SimulationOutput {
  Dataset data;
  LatentTruth truth;
};

struct CovariateConfig {
  int count{1};
  double range{0.2};
  double sigma2{1.0};
  double nu{1.0};
};

/// Simulates the two-part dataset: AR(1) x Matern latents with stationary
/// initialisation, Bernoulli presence, Gamma(k, k/mu) positives, and Matern
/// covariates drawn independently at each time.
SimulationOutput simulate_hurdle(const HurdleModelSpec& spec,
                                 const std::vector<geo::LocalPoint>& sites, int n_times,
                                 const CovariateConfig& covariates, std::uint64_t seed);

/// Column transform recorded so predictions can reuse it.
struct Standardization {
  Eigen::VectorXd mean, sd;  // population sd
  bool applied{false};
};

/// Column-wise (x - mean) / sd in place; throws data_error naming any
/// zero-variance column.
Standardization standardize(Eigen::MatrixXd& covariates, const std::vector<std::string>& names);

enum class Structure { SpatioTemporal, SpatialOnly };

struct FitConfig {
  Structure structure{Structure::SpatioTemporal};
  bool standardize_covariates{true};
  int n_starts{4};
  int max_evaluations{200};  // outer Nelder-Mead budget per start
  int polish_evaluations{150};
  int max_newton_iterations{60};
  double newton_tol{1e-8};
  bool fix_gamma{false};
  double fixed_gamma{0.0};
  double nu{1.0};
  double beta_prior_sd{100.0};
  bool compute_hyper_sd{true};
  // Weak penalised-complexity-type hyperpriors on the field SDs and ranges;
  // keeps the optimiser off the improper flat ridges of the Laplace marginal.
  bool regularize_hyper{true};
};

struct FitResult {
  Structure structure{Structure::SpatioTemporal};
  HurdleHyper hyper;      // point estimates
  HurdleHyper hyper_sd;   // delta-method SDs (NaN when unavailable)
  Eigen::VectorXd beta_z, beta_y;        // intercept first
  Eigen::VectorXd beta_z_sd, beta_y_sd;
  double log_marginal{};
  bool converged{};
  bool hessian_pd{};
  bool gamma_fixed{};
  bool has_gamma_part{};       // false when the data held no positives
  bool presence_degenerate{};  // every observed z was 1; psi and gamma frozen out
  bool regularized_hyper{};    // fitted under the weak hyperpriors
  bool identifiability_warning{};
  Standardization standardization;
  Dataset data;                // training data with transformed covariates
  Eigen::VectorXd latent_mode; // layout below
};

/// Laplace-approximated empirical-Bayes fit: hyperparameters maximise the
/// Laplace marginal likelihood (multi-start Nelder-Mead on log/atanh
/// transforms); the latent block -- both fields plus the beta vectors under
/// vague Gaussian priors -- is Gaussian-approximated at its conditional mode.
/// Spatial-only structure fixes both AR(1) coefficients at zero. Throws
/// hurdle::fit_error when the inner Newton cannot converge at the optimum.
FitResult fit_hurdle(const Dataset& data, const FitConfig& config = {});

class fit_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Latent vector layout shared by fit, predict, and the gradient check:
/// T blocks of [psi_t (n), xi_t (n)] followed by [beta_z, beta_y]; the xi and
/// beta_y parts are absent when the dataset has no positive observations.
long latent_dimension(const Dataset& data);

/// Joint log posterior (likelihood plus latent Gaussian prior, additive
/// constants included) of the latent vector at fixed hyperparameters, with
/// optional analytic gradient.
double joint_log_posterior(const Dataset& data, const HurdleHyper& hyper,
                           const Eigen::VectorXd& latent, Eigen::VectorXd* gradient = nullptr);

/// Bernoulli and Gamma contributions of the likelihood, separately.
void log_likelihood_parts(const Dataset& data, const HurdleHyper& hyper,
                          const Eigen::VectorXd& latent, double& bernoulli_part,
                          double& gamma_part);

/// Laplace-approximated log marginal likelihood at fixed hyperparameters
/// (a fresh inner Newton solve; the quantity fit_hurdle maximises).
double laplace_log_marginal(const Dataset& data, const HurdleHyper& hyper);

struct SummaryStat {
  double mean{}, sd{}, q025{}, q975{};
};

struct PosteriorSummary {
  std::vector<SummaryStat> pi, mu, hurdle_mean;  // per target cell, time-major
  std::vector<double> sd_log_mu;
  std::vector<bool> masked;
  Eigen::MatrixXd pi_samples, mu_samples;  // n_samples x n_cells when kept
};

struct PredictTargets {
  std::vector<geo::LocalPoint> sites;
  Eigen::MatrixXd covariates;  // raw (n_targets * T) x p, training column order
};

struct PredictOptions {
  int n_samples{500};
  double mask_sd_threshold{3.0};
  std::uint64_t seed{1};
  bool keep_samples{false};
  // Hyperparameter-uncertainty propagation: probe each transformed
  // hyperparameter axis outwards from the optimum and mix the per-point
  // Gaussian approximations, weighted by their Laplace marginals.
  bool integrate_hyper{true};
  double axis_step{0.7};
  int max_axis_steps{8};
  double integration_drop{4.0};  // stop probing once the marginal falls this far
};

/// Posterior summaries of pi, mu, and the hurdle mean pi*mu at the targets,
/// over the training time range. Target sites matching a training site reuse
/// its latent values; new sites are conditioned through the Matern fields.
/// Covariates are standardized with the training transform; a column-count
/// mismatch throws.
PosteriorSummary predict(const FitResult& fit, const PredictTargets& targets,
                         const PredictOptions& opt = {});

/// Mean aggregation of z*y (and covariates) into lon/lat cells across all
/// times; cell centroids become the new sites. Cell sizes <= 0 aggregate
/// per site (temporal collapse only). Result has n_times = 1.
Dataset aggregate_cells(const Dataset& data, double cell_lon = 0.0, double cell_lat = 0.0);

struct ComparisonResult {
  Eigen::VectorXd truth;                       // per site, time-averaged pi*mu
  Eigen::VectorXd st_mean, st_lo, st_hi;
  Eigen::VectorXd sp_mean, sp_lo, sp_hi;
  metrics::ScoreReport st_score, sp_score;
};

/// Time-averaged-mean comparison between a spatio-temporal fit and a
/// spatial-only fit of the aggregated data, scored against the simulation
/// truth. Both fits must share the site set of `truth`.
ComparisonResult time_averaged_comparison(const FitResult& st_fit, const FitResult& sp_fit,
                                          const LatentTruth& truth, int n_samples = 500,
                                          std::uint64_t seed = 7);

/// Dataset CSV: header site_id,lon,lat,t,z,y,cov_1..cov_p with empty y where
/// z != 1 and empty z for unobserved cells; t is 1-based. All rows of one
/// site_id must agree on lon/lat.
void write_dataset_csv(const Dataset& data, const std::string& path);
Dataset read_dataset_csv(const std::string& path);

/// Latent-truth CSV written next to simulated datasets:
/// site_id,lon,lat,t,psi,xi,pi,mu.
void write_truth_csv(const Dataset& data, const LatentTruth& truth, const std::string& path);
LatentTruth read_truth_csv(const std::string& path, const Dataset& data);

}  // namespace driftcov::hurdle
