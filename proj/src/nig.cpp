#include "driftcov/nig.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "driftcov/errors.hpp"
#include "driftcov/optim.hpp"

namespace driftcov::nig {

void NigParams::validate() const {
  if (!(sigma > 0) || !(nu_nig > 0))
    throw std::invalid_argument("NigParams: sigma and nu_nig must be > 0");
  if (!std::isfinite(delta) || !std::isfinite(mu))
    throw std::invalid_argument("NigParams: non-finite parameter");
}

namespace {

// log K_1(x), switching to the asymptotic expansion before K_1 underflows.
double log_bessel_k1(double x) {
  if (x < 600.0) return std::log(std::cyl_bessel_k(1.0, x));
  return 0.5 * std::log(M_PI / (2.0 * x)) - x + std::log1p(3.0 / (8.0 * x));
}

}  // namespace

double nig_logpdf(double x, const NigParams& p) {
  p.validate();
  const double d = x - p.delta;
  const double s2 = p.sigma * p.sigma;
  const double a = p.nu_nig * s2 + d * d;
  const double arg = std::sqrt(a * (p.mu * p.mu / (s2 * s2) + p.nu_nig / s2));
  return p.nu_nig + p.mu * d / s2 - std::log(M_PI) - 0.5 * std::log(a) +
         0.5 * std::log(p.nu_nig * p.mu * p.mu / s2 + p.nu_nig * p.nu_nig) + log_bessel_k1(arg);
}

double nig_pdf(double x, const NigParams& p) { return std::exp(nig_logpdf(x, p)); }

double nig_sample(const NigParams& p, Rng& rng) {
  p.validate();
  double lambda = rng.inverse_gaussian(1.0, p.nu_nig);
  return p.delta + p.mu * lambda + p.sigma * std::sqrt(lambda) * rng.normal();
}

std::vector<double> nig_sample(const NigParams& p, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("nig_sample: n must be >= 1");
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& x : out) x = nig_sample(p, rng);
  return out;
}

MaternNigSim simulate_matern_nig(const MaternNigConfig& cfg, std::uint64_t seed) {
  if (cfg.n_sites < 2) throw std::invalid_argument("simulate_matern_nig: need at least 2 sites");
  cfg.matern.validate();
  cfg.noise.validate();

  Rng rng(seed);
  MaternNigSim sim;
  sim.sites.reserve(cfg.n_sites);
  for (int i = 0; i < cfg.n_sites; ++i) sim.sites.push_back({rng.uniform(), rng.uniform()});

  gpfield::MaternParams corr = cfg.matern;
  corr.sigma2 = 1.0;
  auto llt = gpfield::robust_llt(gpfield::matern_covariance(sim.sites, corr));
  const Eigen::MatrixXd lower = llt.matrixL();

  sim.fields.resize(cfg.n_sites, cfg.m_replicates);
  sim.observations.resize(cfg.n_sites, cfg.m_replicates);
  Eigen::VectorXd innov(cfg.n_sites);
  for (int r = 0; r < cfg.m_replicates; ++r) {
    for (int i = 0; i < cfg.n_sites; ++i) innov[i] = nig_sample(cfg.noise, rng);
    sim.fields.col(r) = lower * innov;
    for (int i = 0; i < cfg.n_sites; ++i)
      sim.observations(i, r) = sim.fields(i, r) + cfg.sigma_eps * rng.normal();
  }
  return sim;
}

namespace {

// Exact likelihood of the coloured construction with the observation noise
// ignored (it is two orders of magnitude below the field scale here):
// y = beta0 + L(kappa) e, e_i iid NIG.
struct NigFieldObjective {
  const std::vector<geo::LocalPoint>& sites;
  const Eigen::MatrixXd& y;

  double operator()(const Eigen::VectorXd& theta) const {
    const double beta0 = theta[0];
    if (std::fabs(theta[1]) > 12 || std::fabs(theta[2]) > 12 || std::fabs(theta[3]) > 12)
      return 1e30;
    const double kappa = std::exp(theta[1]);
    NigParams noise{0.0, 0.0, std::exp(theta[2]), std::exp(theta[3])};

    Eigen::MatrixXd corr = gpfield::matern_covariance(sites, {1.0, kappa, 1.0});
    Eigen::LLT<Eigen::MatrixXd> llt(corr);
    if (llt.info() != Eigen::Success) return 1e30;
    Eigen::MatrixXd lower = llt.matrixL();
    double logdet = lower.diagonal().array().log().sum();

    double nll = y.cols() * logdet;
    for (int r = 0; r < y.cols(); ++r) {
      Eigen::VectorXd e = lower.triangularView<Eigen::Lower>().solve(
          (y.col(r).array() - beta0).matrix());
      for (int i = 0; i < e.size(); ++i) nll -= nig_logpdf(e[i], noise);
    }
    return std::isfinite(nll) ? nll : 1e30;
  }
};

struct GaussianFitValues {
  double kappa, sigma;
  Eigen::Vector2d internal;  // (log kappa, log delta) for warm starts
};

GaussianFitValues fit_gaussian(const std::vector<geo::LocalPoint>& sites, const Eigen::MatrixXd& y,
                               const gpfield::KrigingOptions& opt) {
  auto model = gpfield::fit_kriging_replicated(sites, y, opt);
  return {model.theta.kappa, std::sqrt(model.theta.sigma2),
          {std::log(model.theta.kappa), std::log(model.sigma2_eps / model.theta.sigma2)}};
}

}  // namespace

std::vector<SensitivityRow> sensitivity_experiment(const SensitivityConfig& cfg, std::uint64_t seed) {
  MaternNigConfig sim_cfg = cfg.sim;
  sim_cfg.n_sites = std::max(sim_cfg.n_sites, *std::max_element(cfg.sizes.begin(), cfg.sizes.end()));
  MaternNigSim sim = simulate_matern_nig(sim_cfg, seed);

  Rng subsample_rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<SensitivityRow> rows;

  for (int n : cfg.sizes) {
    if (n < 10 || n > sim_cfg.n_sites)
      throw std::invalid_argument("sensitivity_experiment: bad sample size " + std::to_string(n));

    // Seeded Fisher-Yates prefix: a random subset of the master locations.
    std::vector<int> idx(sim_cfg.n_sites);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < n; ++i) {
      int j = i + static_cast<int>(subsample_rng.uniform() * (sim_cfg.n_sites - i));
      std::swap(idx[i], idx[std::min(j, sim_cfg.n_sites - 1)]);
    }
    std::vector<geo::LocalPoint> sites(n);
    Eigen::MatrixXd y(n, sim_cfg.m_replicates);
    for (int i = 0; i < n; ++i) {
      sites[i] = sim.sites[idx[i]];
      y.row(i) = sim.observations.row(idx[i]);
    }

    auto push = [&](const std::string& model, const std::string& par, double truth, double est,
                    double sd, bool ok, const std::string& err) {
      rows.push_back({model, n, par, truth, est, sd, ok, err});
    };

    gpfield::KrigingOptions gopt;
    gopt.throw_on_nonconvergence = false;
    try {
      auto fit = fit_gaussian(sites, y, gopt);

      double sd_kappa = std::numeric_limits<double>::quiet_NaN();
      double sd_sigma = std::numeric_limits<double>::quiet_NaN();
      if (cfg.bootstrap_resamples > 0) {
        Rng boot_rng(seed ^ (0xb5297a4d3456a7c9ull + n));
        std::vector<double> bk, bs;
        gpfield::KrigingOptions warm = gopt;
        warm.warm_start = &fit.internal;
        warm.n_starts = 1;
        warm.max_evaluations = 200;
        for (int b = 0; b < cfg.bootstrap_resamples; ++b) {
          Eigen::MatrixXd yb(n, sim_cfg.m_replicates);
          for (int r = 0; r < sim_cfg.m_replicates; ++r) {
            int pick = static_cast<int>(boot_rng.uniform() * sim_cfg.m_replicates);
            yb.col(r) = y.col(std::min(pick, sim_cfg.m_replicates - 1));
          }
          try {
            auto bf = fit_gaussian(sites, yb, warm);
            bk.push_back(bf.kappa);
            bs.push_back(bf.sigma);
          } catch (const std::exception&) {
            // skip failed resamples
          }
        }
        auto sd_of = [](const std::vector<double>& v) {
          if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
          double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
          double s = 0;
          for (double x : v) s += (x - m) * (x - m);
          return std::sqrt(s / (v.size() - 1));
        };
        sd_kappa = sd_of(bk);
        sd_sigma = sd_of(bs);
      }

      push("gaussian", "sigma", cfg.sim.noise.sigma, fit.sigma, sd_sigma, true, "");
      push("gaussian", "kappa", cfg.sim.matern.kappa, fit.kappa, sd_kappa, true, "");
    } catch (const std::exception& e) {
      push("gaussian", "sigma", cfg.sim.noise.sigma, std::numeric_limits<double>::quiet_NaN(),
           std::numeric_limits<double>::quiet_NaN(), false, e.what());
      push("gaussian", "kappa", cfg.sim.matern.kappa, std::numeric_limits<double>::quiet_NaN(),
           std::numeric_limits<double>::quiet_NaN(), false, e.what());
    }

    if (cfg.fit_nig) {
      try {
        NigFieldObjective obj{sites, y};
        Eigen::VectorXd start(4);
        start << y.mean(), std::log(10.0), 0.0, std::log(10.0);
        optim::NelderMeadOptions nm;
        nm.max_evaluations = 800;
        auto r = optim::nelder_mead([&](const Eigen::VectorXd& t) { return obj(t); }, start, nm);
        push("nig", "sigma", cfg.sim.noise.sigma, std::exp(r.x[2]),
             std::numeric_limits<double>::quiet_NaN(), true, "");
        push("nig", "kappa", cfg.sim.matern.kappa, std::exp(r.x[1]),
             std::numeric_limits<double>::quiet_NaN(), true, "");
      } catch (const std::exception& e) {
        push("nig", "sigma", cfg.sim.noise.sigma, std::numeric_limits<double>::quiet_NaN(),
             std::numeric_limits<double>::quiet_NaN(), false, e.what());
        push("nig", "kappa", cfg.sim.matern.kappa, std::numeric_limits<double>::quiet_NaN(),
             std::numeric_limits<double>::quiet_NaN(), false, e.what());
      }
    }
  }
  return rows;
}

}  // namespace driftcov::nig
