// driftcov: derive gridded covariates from drifter trajectories, interpolate
// them with Matern kriging, and run the bundled hurdle-model simulation
// studies. All commands are deterministic given --seed and their inputs.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "driftcov/errors.hpp"
#include "driftcov/geo.hpp"
#include "driftcov/gpfield.hpp"
#include "driftcov/grid.hpp"
#include "driftcov/hurdle.hpp"
#include "driftcov/metrics.hpp"
#include "driftcov/nig.hpp"
#include "driftcov/occupancy.hpp"
#include "driftcov/spectral.hpp"
#include "driftcov/trajectory.hpp"

namespace {

using namespace driftcov;
using nlohmann::json;

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

geo::Region parse_region(const std::vector<double>& v) {
  geo::Region r{v[0], v[1], v[2], v[3]};
  r.validate();
  return r;
}

std::set<int> parse_months(const std::string& text) {
  std::set<int> months;
  if (text.empty() || text == "all") return months;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    int m = std::stoi(tok);
    if (m < 1 || m > 12) throw CLI::ValidationError("--months entries must be in 1..12");
    months.insert(m);
  }
  return months;
}

// Flat key=value parameter files; '#' starts a comment line.
std::map<std::string, double> read_params_file(const std::string& path,
                                               const std::map<std::string, double>& defaults) {
  auto values = defaults;
  if (path.empty()) return values;
  std::ifstream in(path);
  if (!in) throw data_error("cannot read parameter file " + path);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos) throw parse_error("expected key=value", lineno);
    auto strip = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = strip(line.substr(0, eq));
    std::string val = strip(line.substr(eq + 1));
    if (!defaults.count(key)) {
      std::string known;
      for (const auto& [k, unused] : defaults) known += (known.empty() ? "" : ", ") + k;
      throw CLI::ValidationError("unknown parameter '" + key + "'; valid keys: " + known);
    }
    values[key] = std::stod(val);
  }
  return values;
}

std::string params_digest(const std::map<std::string, double>& params) {
  std::string flat;
  for (const auto& [k, v] : params) flat += k + "=" + format_value(v) + ";";
  return flat;
}

// ---------------------------------------------------------------------------
// derive
// ---------------------------------------------------------------------------

struct DeriveArgs {
  std::string input, product, out;
  std::vector<double> region;
  double delta = 3600.0;
  int window = 121, overlap = 60, taper_order = 0;
  bool keep_mean = false;
  double radius = 50.0;
  int nx = 20, ny = 25;
  double cell = 0.25;
  std::string months = "12,1,2";
  double period_years = 0.0;  // 0: infer from the data span
  bool per_km2 = false;
};

int run_derive(const DeriveArgs& a) {
  geo::Region region = parse_region(a.region);
  std::ifstream in(a.input);
  if (!in) throw data_error("cannot read " + a.input);
  auto records = traj::ingest(in, a.delta);
  traj::SegmentationReport report;
  auto segments = traj::segment(records, region, a.delta, &report);

  const std::string digest = sha256_file(a.input);
  const std::string params = "product=" + a.product + ";delta=" + format_value(a.delta);

  if (segments.empty() && a.product != "density")
    std::cerr << "warning: no usable segments inside the region; output will be empty\n";

  if (a.product == "speed") {
    auto speed = occupancy::surface_speed_samples(segments, parse_months(a.months));
    std::vector<Sample> samples;
    for (const auto& s : speed) samples.push_back({s.lon, s.lat, s.speed_ms});
    write_samples_csv(samples, a.out, "surface_speed", "m s-1", "derive", params, digest);
    if (samples.empty()) std::cerr << "warning: empty speed output\n";
    return 0;
  }

  if (a.product == "ef") {
    spectral::RollingEfOptions opt;
    opt.window_len = a.window;
    opt.overlap = a.overlap;
    opt.order_index = a.taper_order;
    opt.remove_mean = !a.keep_mean;
    std::vector<Sample> samples;
    for (const auto& seg : segments)
      for (const auto& w : spectral::rolling_ef(seg, opt))
        samples.push_back({w.mid_lon, w.mid_lat, w.ef_rad_per_day});
    write_samples_csv(samples, a.out, "expected_frequency", "rad day-1", "derive", params, digest);
    if (samples.empty()) std::cerr << "warning: empty expected-frequency output\n";
    return 0;
  }

  if (a.product == "residence" || a.product == "flux") {
    auto grid = occupancy::CircleGrid::make(region, a.radius, a.nx, a.ny);
    // Raster whose cell centres sit exactly on the circle centres.
    const double step_lon = (region.lon_max - region.lon_min) / (a.nx - 1);
    const double step_lat = (region.lat_max - region.lat_min) / (a.ny - 1);
    geo::Region expanded{region.lon_min - step_lon / 2, region.lon_max + step_lon / 2,
                         region.lat_min - step_lat / 2, region.lat_max + step_lat / 2};
    GridField field = GridField::create(
        expanded, step_lon, step_lat, a.product,
        a.product == "flux" ? "segments yr-1 km-2" : (a.per_km2 ? "min km-2" : "min"));

    if (a.product == "residence") {
      if (segments.empty()) {
        std::cerr << "warning: no segments; residence grid is all missing\n";
      } else {
        auto rt = occupancy::residence_time(segments, grid, {.per_km2 = a.per_km2});
        for (int i = 0; i < grid.size(); ++i)
          if (rt[i]) field.values[i] = *rt[i];
      }
    } else {
      double period = a.period_years;
      if (period <= 0) {
        double lo = std::numeric_limits<double>::max(), hi = std::numeric_limits<double>::lowest();
        for (const auto& rec : records)
          for (const auto& f : rec.fixes) {
            lo = std::min(lo, f.time_s);
            hi = std::max(hi, f.time_s);
          }
        period = lo < hi ? (hi - lo) / (365.25 * 86400.0) : 1.0;
      }
      auto flux = occupancy::mass_flux(segments, grid, period);
      for (int i = 0; i < grid.size(); ++i) field.values[i] = flux[i];
    }
    write_grid_csv(field, a.out, "derive", params, digest);
    return 0;
  }

  if (a.product == "density") {
    auto grid = occupancy::CellGrid::make(region, a.cell, a.cell);
    std::vector<traj::Fix> fixes;
    for (const auto& rec : records)
      for (const auto& f : rec.fixes) fixes.push_back(f);
    auto dens = occupancy::drifter_density(fixes, grid, a.delta);
    GridField field = GridField::create(region, a.cell, a.cell, "drifter_density", "h km-2");
    for (int i = 0; i < grid.size(); ++i) field.values[i] = dens[i];
    write_grid_csv(field, a.out, "derive", params, digest);
    return 0;
  }

  throw CLI::ValidationError("unknown product '" + a.product + "'");
}

// ---------------------------------------------------------------------------
// interpolate
// ---------------------------------------------------------------------------

int run_interpolate(const std::string& samples_path, const std::vector<double>& region_v,
                    double res, const std::string& out, double nu, int max_samples) {
  geo::Region region = parse_region(region_v);
  auto samples = read_samples_csv(samples_path);
  if (samples.size() < 10) throw data_error("interpolate: need at least 10 samples");

  // The dense GP is desk-scale; thin large sample sets evenly and
  // deterministically in file order.
  if (max_samples > 0 && samples.size() > static_cast<std::size_t>(max_samples)) {
    std::vector<Sample> thinned;
    thinned.reserve(max_samples);
    const double stride = static_cast<double>(samples.size()) / max_samples;
    for (int i = 0; i < max_samples; ++i)
      thinned.push_back(samples[static_cast<std::size_t>(i * stride)]);
    std::cerr << "note: thinned " << samples.size() << " samples to " << max_samples << "\n";
    samples = std::move(thinned);
  }

  geo::Projection proj = geo::Projection::about_centre(region);
  std::vector<geo::LocalPoint> sites;
  Eigen::VectorXd y(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    sites.push_back(proj.project(samples[i].lon, samples[i].lat));
    y[i] = samples[i].value;
  }

  gpfield::KrigingOptions opt;
  opt.nu = nu;
  gpfield::KrigingModel model;
  try {
    model = gpfield::fit_kriging(sites, y, opt);
  } catch (const gpfield::fit_error& e) {
    json diag{{"error", e.what()},
              {"best",
               {{"kappa", e.best().theta.kappa},
                {"sigma2", e.best().theta.sigma2},
                {"sigma2_eps", e.best().sigma2_eps},
                {"beta0", e.best().beta0},
                {"grad_norm", e.best().grad_norm}}}};
    std::ofstream diag_out(out + ".diag.json");
    diag_out << diag.dump(2) << "\n";
    throw numerical_error(std::string("interpolate: kriging fit did not converge: ") + e.what());
  }

  GridField mean = GridField::create(region, res, res, "interpolated_mean", "");
  GridField sd = GridField::create(region, res, res, "interpolated_sd", "");
  std::vector<geo::LocalPoint> targets;
  for (int row = 0; row < mean.n_lat; ++row)
    for (int col = 0; col < mean.n_lon; ++col)
      targets.push_back(proj.project(mean.lon_at(col), mean.lat_at(row)));
  auto pred = gpfield::krige_predict(model, targets);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    mean.values[i] = pred.mean[i];
    sd.values[i] = pred.sd[i];
  }

  const std::string digest = sha256_file(samples_path);
  const std::string params = "res=" + format_value(res) + ";nu=" + format_value(nu) +
                             ";kappa=" + format_value(model.theta.kappa) +
                             ";sigma2=" + format_value(model.theta.sigma2) +
                             ";sigma2_eps=" + format_value(model.sigma2_eps) +
                             ";beta0=" + format_value(model.beta0);
  write_grid_csv(mean, out, "interpolate", params, digest);
  std::filesystem::path sd_path(out);
  sd_path.replace_extension(".sd" + sd_path.extension().string());
  write_grid_csv(sd, sd_path.string(), "interpolate", params, digest);
  return 0;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

const std::map<std::string, double> kHurdleDefaults = {
    {"n_sites", 100},  {"n_times", 10},     {"beta0_z", 0.5},    {"beta1_z", 0.3},
    {"beta0_y", 1.0},  {"beta1_y", -0.4},   {"k", 10.0},         {"gamma", 0.3},
    {"rho_psi", 0.25}, {"sigma_psi", 0.44}, {"alpha_psi", 0.40}, {"rho_xi", 0.20},
    {"sigma_xi", 0.14}, {"alpha_xi", 0.20}, {"cov_count", 1},    {"cov_rho", 0.2},
    {"cov_sigma2", 1.0}};

const std::map<std::string, double> kNigDefaults = {
    {"n", 1000},    {"m", 10},      {"kappa", 10.0}, {"nu_matern", 1.0}, {"sigma", 1.0},
    {"delta", 0.0}, {"mu", 0.0},    {"nu_nig", 10.0}, {"sigma_eps", 0.01}};

int run_simulate(const std::string& study, const std::string& params_path, std::uint64_t seed,
                 const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  if (study == "st-hurdle") {
    auto p = read_params_file(params_path, kHurdleDefaults);
    hurdle::HurdleModelSpec spec;
    const int n_cov = static_cast<int>(p.at("cov_count"));
    if (n_cov != 1)
      throw CLI::ValidationError("st-hurdle simulation supports cov_count=1 (beta1 keys)");
    spec.beta_z = Eigen::Vector2d(p.at("beta0_z"), p.at("beta1_z"));
    spec.beta_y = Eigen::Vector2d(p.at("beta0_y"), p.at("beta1_y"));
    spec.hyper.k = p.at("k");
    spec.hyper.gamma = p.at("gamma");
    spec.hyper.psi = {p.at("rho_psi"), p.at("sigma_psi"), p.at("alpha_psi")};
    spec.hyper.xi = {p.at("rho_xi"), p.at("sigma_xi"), p.at("alpha_xi")};

    Rng site_rng(seed ^ 0xa076bb5a0a0f3f01ull);
    std::vector<geo::LocalPoint> sites(static_cast<std::size_t>(p.at("n_sites")));
    for (auto& s : sites) s = {site_rng.uniform(), site_rng.uniform()};

    hurdle::CovariateConfig cov;
    cov.count = n_cov;
    cov.range = p.at("cov_rho");
    cov.sigma2 = p.at("cov_sigma2");
    auto sim = hurdle::simulate_hurdle(spec, sites, static_cast<int>(p.at("n_times")), cov, seed);

    hurdle::write_dataset_csv(sim.data, out_dir + "/dataset.csv");
    hurdle::write_truth_csv(sim.data, sim.truth, out_dir + "/truth.csv");

    json prov{{"command", "simulate"},
              {"study", "st-hurdle"},
              {"seed", seed},
              {"params", params_digest(p)}};
    std::ofstream(out_dir + "/provenance.json") << prov.dump(2) << "\n";
    return 0;
  }
  if (study == "nig") {
    auto p = read_params_file(params_path, kNigDefaults);
    nig::MaternNigConfig cfg;
    cfg.n_sites = static_cast<int>(p.at("n"));
    cfg.m_replicates = static_cast<int>(p.at("m"));
    cfg.matern = {p.at("nu_matern"), p.at("kappa"), 1.0};
    cfg.noise = {p.at("delta"), p.at("mu"), p.at("sigma"), p.at("nu_nig")};
    cfg.sigma_eps = p.at("sigma_eps");
    auto sim = nig::simulate_matern_nig(cfg, seed);

    std::ofstream out(out_dir + "/nig_fields.csv");
    out << "x,y,replicate,field,observation\n";
    for (int r = 0; r < cfg.m_replicates; ++r)
      for (int i = 0; i < cfg.n_sites; ++i)
        out << format_value(sim.sites[i].x) << ',' << format_value(sim.sites[i].y) << ','
            << (r + 1) << ',' << format_value(sim.fields(i, r)) << ','
            << format_value(sim.observations(i, r)) << '\n';

    json prov{{"command", "simulate"},
              {"study", "nig"},
              {"seed", seed},
              {"params", params_digest(p)}};
    std::ofstream(out_dir + "/provenance.json") << prov.dump(2) << "\n";
    return 0;
  }
  throw CLI::ValidationError("unknown study '" + study + "' (expected st-hurdle or nig)");
}

// ---------------------------------------------------------------------------
// fit / predict / score / sensitivity
// ---------------------------------------------------------------------------

json field_json(const hurdle::FieldHyper& f) {
  return {{"range", f.range}, {"sigma", f.sigma}, {"alpha", f.alpha}};
}

hurdle::FieldHyper field_from_json(const json& j) {
  return {j.at("range"), j.at("sigma"), j.at("alpha")};
}

json vector_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Eigen::VectorXd vector_from_json(const json& arr) {
  Eigen::VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) v[i] = arr[i];
  return v;
}

int run_fit(const std::string& data_path, const std::string& structure, const std::string& out,
            const std::string& summaries, int starts, int evals, bool no_standardize,
            bool fix_gamma, double fixed_gamma, std::uint64_t seed, int n_samples) {
  auto data = hurdle::read_dataset_csv(data_path);
  hurdle::FitConfig cfg;
  cfg.structure =
      structure == "spatial" ? hurdle::Structure::SpatialOnly : hurdle::Structure::SpatioTemporal;
  cfg.standardize_covariates = !no_standardize;
  cfg.n_starts = starts;
  cfg.max_evaluations = evals;
  cfg.fix_gamma = fix_gamma;
  cfg.fixed_gamma = fixed_gamma;

  hurdle::FitResult fit;
  try {
    fit = hurdle::fit_hurdle(data, cfg);
  } catch (const hurdle::fit_error& e) {
    throw numerical_error(e.what());
  }

  json j{{"structure", structure},
         {"hyper",
          {{"k", fit.hyper.k},
           {"gamma", fit.hyper.gamma},
           {"nu", fit.hyper.nu},
           {"beta_prior_sd", fit.hyper.beta_prior_sd},
           {"psi", field_json(fit.hyper.psi)},
           {"xi", field_json(fit.hyper.xi)}}},
         {"hyper_sd",
          {{"k", fit.hyper_sd.k},
           {"gamma", fit.hyper_sd.gamma},
           {"psi", field_json(fit.hyper_sd.psi)},
           {"xi", field_json(fit.hyper_sd.xi)}}},
         {"beta_z", vector_json(fit.beta_z)},
         {"beta_z_sd", vector_json(fit.beta_z_sd)},
         {"beta_y", vector_json(fit.beta_y)},
         {"beta_y_sd", vector_json(fit.beta_y_sd)},
         {"log_marginal", fit.log_marginal},
         {"converged", fit.converged},
         {"hessian_pd", fit.hessian_pd},
         {"has_gamma_part", fit.has_gamma_part},
         {"presence_degenerate", fit.presence_degenerate},
         {"regularized_hyper", fit.regularized_hyper},
         {"gamma_fixed", fit.gamma_fixed},
         {"identifiability_warning", fit.identifiability_warning},
         {"standardization",
          {{"applied", fit.standardization.applied},
           {"mean", vector_json(fit.standardization.mean)},
           {"sd", vector_json(fit.standardization.sd)}}},
         {"latent_mode", vector_json(fit.latent_mode)},
         {"train", {{"path", data_path}, {"sha256", sha256_file(data_path)}}}};
  std::ofstream(out) << j.dump(2) << "\n";

  if (!summaries.empty()) {
    hurdle::PredictTargets targets;
    targets.sites = data.sites;
    targets.covariates = data.covariates;  // raw scale; predict applies the transform
    hurdle::PredictOptions popt;
    popt.n_samples = n_samples;
    popt.seed = seed;
    auto post = hurdle::predict(fit, targets, popt);

    std::ofstream s(summaries);
    s << "site_id,lon,lat,t,pi_mean,pi_sd,pi_q025,pi_q975,mu_mean,mu_sd,mu_q025,mu_q975,"
         "hm_mean,hm_sd,hm_q025,hm_q975,sd_log_mu,masked\n";
    for (int t = 0; t < data.n_times; ++t)
      for (int i = 0; i < data.n_sites(); ++i) {
        long c = data.cell(i, t);
        auto row = [&](const hurdle::SummaryStat& st) {
          return format_value(st.mean) + "," + format_value(st.sd) + "," + format_value(st.q025) +
                 "," + format_value(st.q975);
        };
        s << data.site_ids[i] << ',' << format_value(data.sites[i].x) << ','
          << format_value(data.sites[i].y) << ',' << (t + 1) << ',' << row(post.pi[c]) << ','
          << row(post.mu[c]) << ',' << row(post.hurdle_mean[c]) << ','
          << format_value(post.sd_log_mu[c]) << ',' << (post.masked[c] ? 1 : 0) << '\n';
      }
  }
  return 0;
}

hurdle::FitResult load_fit(const std::string& fit_path, const std::string& train_path) {
  std::ifstream in(fit_path);
  if (!in) throw data_error("cannot read " + fit_path);
  json j = json::parse(in);

  std::string path = train_path.empty() ? j.at("train").at("path").get<std::string>() : train_path;
  std::string digest = sha256_file(path);
  if (digest != j.at("train").at("sha256").get<std::string>())
    throw data_error("training data '" + path + "' does not match the digest stored in " +
                     fit_path);
  auto data = hurdle::read_dataset_csv(path);

  hurdle::FitResult fit;
  fit.structure = j.at("structure") == "spatial" ? hurdle::Structure::SpatialOnly
                                                 : hurdle::Structure::SpatioTemporal;
  fit.hyper.k = j.at("hyper").at("k");
  fit.hyper.gamma = j.at("hyper").at("gamma");
  fit.hyper.nu = j.at("hyper").at("nu");
  fit.hyper.beta_prior_sd = j.at("hyper").at("beta_prior_sd");
  fit.hyper.psi = field_from_json(j.at("hyper").at("psi"));
  fit.hyper.xi = field_from_json(j.at("hyper").at("xi"));
  fit.beta_z = vector_from_json(j.at("beta_z"));
  fit.beta_y = vector_from_json(j.at("beta_y"));
  fit.has_gamma_part = j.at("has_gamma_part");
  fit.presence_degenerate = j.value("presence_degenerate", false);
  fit.regularized_hyper = j.value("regularized_hyper", true);
  fit.standardization.applied = j.at("standardization").at("applied");
  fit.standardization.mean = vector_from_json(j.at("standardization").at("mean"));
  fit.standardization.sd = vector_from_json(j.at("standardization").at("sd"));
  fit.latent_mode = vector_from_json(j.at("latent_mode"));

  if (fit.standardization.applied)
    for (int col = 0; col < data.covariates.cols(); ++col)
      data.covariates.col(col) =
          (data.covariates.col(col).array() - fit.standardization.mean[col]) /
          fit.standardization.sd[col];
  fit.data = std::move(data);
  return fit;
}

int run_predict(const std::string& fit_path, const std::string& train_path,
                const std::string& targets_path, const std::string& out, int n_samples,
                double mask_sd, std::uint64_t seed, const std::string& time_average_out) {
  auto fit = load_fit(fit_path, train_path);

  hurdle::PredictTargets targets;
  std::vector<std::string> ids;
  int n_times = fit.data.n_times;
  if (targets_path.empty()) {
    targets.sites = fit.data.sites;
    targets.covariates = fit.data.covariates;
    if (fit.standardization.applied)  // hand predict the raw scale it expects
      for (int col = 0; col < targets.covariates.cols(); ++col)
        targets.covariates.col(col) =
            targets.covariates.col(col).array() * fit.standardization.sd[col] +
            fit.standardization.mean[col];
    ids = fit.data.site_ids;
  } else {
    auto tdata = hurdle::read_dataset_csv(targets_path);
    if (tdata.n_times != n_times)
      throw data_error("targets must cover the training time range 1.." + std::to_string(n_times));
    targets.sites = tdata.sites;
    targets.covariates = tdata.covariates;
    ids = tdata.site_ids;
  }

  hurdle::PredictOptions popt;
  popt.n_samples = n_samples;
  popt.mask_sd_threshold = mask_sd;
  popt.seed = seed;
  popt.keep_samples = !time_average_out.empty();
  auto post = hurdle::predict(fit, targets, popt);

  const int m = static_cast<int>(targets.sites.size());
  std::ofstream s(out);
  s << "site_id,lon,lat,t,pi_mean,pi_sd,pi_q025,pi_q975,mu_mean,mu_sd,mu_q025,mu_q975,"
       "hm_mean,hm_sd,hm_q025,hm_q975,sd_log_mu,masked\n";
  for (int t = 0; t < n_times; ++t)
    for (int i = 0; i < m; ++i) {
      long c = static_cast<long>(t) * m + i;
      auto row = [&](const hurdle::SummaryStat& st) {
        return format_value(st.mean) + "," + format_value(st.sd) + "," + format_value(st.q025) +
               "," + format_value(st.q975);
      };
      s << (i < static_cast<int>(ids.size()) ? ids[i] : "t" + std::to_string(i + 1)) << ','
        << format_value(targets.sites[i].x) << ',' << format_value(targets.sites[i].y) << ','
        << (t + 1) << ',' << row(post.pi[c]) << ',' << row(post.mu[c]) << ','
        << row(post.hurdle_mean[c]) << ',' << format_value(post.sd_log_mu[c]) << ','
        << (post.masked[c] ? 1 : 0) << '\n';
    }

  if (!time_average_out.empty()) {
    // Per-site posterior of the time-averaged hurdle mean.
    std::ofstream ta(time_average_out);
    ta << "site_id,lon,lat,theta_mean,theta_sd,theta_q025,theta_q975\n";
    std::vector<double> buf(n_samples);
    for (int i = 0; i < m; ++i) {
      for (int sx = 0; sx < n_samples; ++sx) {
        double acc = 0;
        for (int t = 0; t < n_times; ++t) {
          long c = static_cast<long>(t) * m + i;
          acc += post.pi_samples(sx, c) * post.mu_samples(sx, c);
        }
        buf[sx] = acc / n_times;
      }
      std::sort(buf.begin(), buf.end());
      double mean = 0;
      for (double v : buf) mean += v;
      mean /= n_samples;
      double var = 0;
      for (double v : buf) var += (v - mean) * (v - mean);
      auto quantile = [&](double q) {
        double pos = q * (n_samples - 1);
        int lo = static_cast<int>(pos);
        double frac = pos - lo;
        return lo + 1 < n_samples ? buf[lo] * (1 - frac) + buf[lo + 1] * frac : buf[lo];
      };
      ta << (i < static_cast<int>(ids.size()) ? ids[i] : "t" + std::to_string(i + 1)) << ','
         << format_value(targets.sites[i].x) << ',' << format_value(targets.sites[i].y) << ','
         << format_value(mean) << ',' << format_value(std::sqrt(var / (n_samples - 1))) << ','
         << format_value(quantile(0.025)) << ',' << format_value(quantile(0.975)) << '\n';
    }
  }
  return 0;
}

int run_score(const std::string& input, const std::string& out, bool skip_zero_truth) {
  std::ifstream in(input);
  if (!in) throw data_error("cannot read " + input);
  std::string line;
  if (!std::getline(in, line)) throw parse_error("missing header", 1);
  std::stringstream hs(line);
  std::vector<std::string> header;
  std::string tok;
  while (std::getline(hs, tok, ',')) header.push_back(tok);
  auto col_of = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw data_error("score: input is missing column '" + name + "'");
  };
  int c_truth = col_of("truth"), c_mean = col_of("mean"), c_lo = col_of("lo"), c_hi = col_of("hi");

  std::vector<double> truth, mean, lo, hi;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::vector<std::string> cells;
    while (std::getline(ls, tok, ',')) cells.push_back(tok);
    try {
      truth.push_back(std::stod(cells.at(c_truth)));
      mean.push_back(std::stod(cells.at(c_mean)));
      lo.push_back(std::stod(cells.at(c_lo)));
      hi.push_back(std::stod(cells.at(c_hi)));
    } catch (const std::exception&) {
      throw parse_error("cannot parse row", lineno);
    }
  }
  auto r = metrics::score(truth, mean, lo, hi,
                          skip_zero_truth ? metrics::ZeroTruthPolicy::SkipPercentage
                                          : metrics::ZeroTruthPolicy::Error);
  std::ofstream o(out);
  o << "rmse,rmspe,mae,mape,width95,coverage95\n";
  o << format_value(r.rmse) << ',' << format_value(r.rmspe) << ',' << format_value(r.mae) << ','
    << format_value(r.mape) << ',' << format_value(r.width95) << ','
    << format_value(r.coverage95) << '\n';
  return 0;
}

int run_sensitivity(const std::string& out, std::uint64_t seed, const std::string& sizes_text,
                    int bootstrap, bool with_nig, int n_master) {
  nig::SensitivityConfig cfg;
  cfg.sizes.clear();
  std::stringstream ss(sizes_text);
  std::string tok;
  while (std::getline(ss, tok, ',')) cfg.sizes.push_back(std::stoi(tok));
  cfg.bootstrap_resamples = bootstrap;
  cfg.fit_nig = with_nig;
  cfg.sim.n_sites = n_master;
  auto rows = nig::sensitivity_experiment(cfg, seed);

  std::ofstream o(out);
  o << "model,n,parameter,true,estimate,sd\n";
  for (const auto& r : rows) {
    o << r.model << ',' << r.n << ',' << r.parameter << ',' << format_value(r.truth) << ','
      << format_value(r.estimate) << ',' << format_value(r.sd) << '\n';
    if (!r.ok)
      std::cerr << "warning: " << r.model << " n=" << r.n << " failed: " << r.error << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"drifter-derived spatial covariates and hurdle-model simulation studies"};
  app.require_subcommand(1);

  // derive
  DeriveArgs d;
  auto* derive = app.add_subcommand("derive", "compute a drifter product from trajectory CSV");
  derive->add_option("--input", d.input, "trajectory CSV (id,time,lon,lat[,u,v])")->required();
  derive->add_option("--region", d.region, "lon_min,lon_max,lat_min,lat_max")
      ->required()
      ->delimiter(',')
      ->expected(4);
  derive->add_option("--product", d.product, "speed|ef|residence|flux|density")->required();
  derive->add_option("--out", d.out, "output CSV")->required();
  derive->add_option("--delta", d.delta, "sampling interval, seconds");
  derive->add_option("--window", d.window, "EF window length, samples");
  derive->add_option("--overlap", d.overlap, "EF window overlap, samples");
  derive->add_option("--taper-order", d.taper_order, "Slepian order index");
  derive->add_flag("--keep-mean", d.keep_mean, "skip window mean-velocity removal");
  derive->add_option("--radius", d.radius, "circle radius, km");
  derive->add_option("--nx", d.nx, "circle centres along longitude");
  derive->add_option("--ny", d.ny, "circle centres along latitude");
  derive->add_option("--cell", d.cell, "density cell size, degrees");
  derive->add_option("--months", d.months, "UTC month filter for speed (e.g. 12,1,2; 'all')");
  derive->add_option("--period-years", d.period_years, "flux period (default: data span)");
  derive->add_flag("--per-km2", d.per_km2, "residence time per km^2");

  // interpolate
  std::string i_samples, i_out;
  std::vector<double> i_region;
  double i_res = 0.01, i_nu = 1.0;
  int i_max_samples = 1000;
  auto* interp = app.add_subcommand("interpolate", "krige scattered samples onto a lon/lat grid");
  interp->add_option("--samples", i_samples, "samples CSV (lon,lat,value)")->required();
  interp->add_option("--region", i_region, "lon_min,lon_max,lat_min,lat_max")
      ->required()
      ->delimiter(',')
      ->expected(4);
  interp->add_option("--res", i_res, "grid resolution, degrees");
  interp->add_option("--out", i_out, "output grid CSV (sd raster gets a .sd suffix)")->required();
  interp->add_option("--nu", i_nu, "Matern smoothness");
  interp->add_option("--max-samples", i_max_samples, "thin to at most this many samples (0 = keep all)");

  // simulate
  std::string s_study, s_params, s_out;
  std::uint64_t s_seed = 1;
  auto* sim = app.add_subcommand("simulate", "run a bundled simulation study");
  sim->add_option("--study", s_study, "st-hurdle|nig")->required();
  sim->add_option("--params", s_params, "key=value parameter file (defaults embedded)");
  sim->add_option("--seed", s_seed, "random seed");
  sim->add_option("--out", s_out, "output directory")->required();

  // fit
  std::string f_data, f_structure = "st", f_out, f_summaries;
  int f_starts = 3, f_evals = 200, f_samples = 500;
  bool f_no_std = false, f_fix_gamma = false;
  double f_gamma = 0.0;
  std::uint64_t f_seed = 1;
  auto* fit = app.add_subcommand("fit", "fit the hurdle model to a dataset CSV");
  fit->add_option("--data", f_data, "dataset CSV")->required();
  fit->add_option("--structure", f_structure, "st|spatial");
  fit->add_option("--out", f_out, "fit JSON")->required();
  fit->add_option("--summaries", f_summaries, "optional posterior-summary CSV");
  fit->add_option("--starts", f_starts, "optimizer starts");
  fit->add_option("--evals", f_evals, "optimizer budget per start");
  fit->add_option("--n-samples", f_samples, "posterior samples for --summaries");
  fit->add_option("--seed", f_seed, "sampling seed for --summaries");
  fit->add_flag("--no-standardize", f_no_std, "skip covariate standardization");
  fit->add_option("--fix-gamma", f_gamma, "fix the copy factor at this value")
      ->expected(1)
      ->each([&f_fix_gamma](const std::string&) { f_fix_gamma = true; });

  // predict
  std::string p_fit, p_train, p_targets, p_out, p_ta;
  int p_samples = 500;
  double p_mask = 3.0;
  std::uint64_t p_seed = 1;
  auto* pred = app.add_subcommand("predict", "posterior prediction from a stored fit");
  pred->add_option("--fit", p_fit, "fit JSON from 'fit'")->required();
  pred->add_option("--train", p_train, "training dataset CSV (defaults to the stored path)");
  pred->add_option("--targets", p_targets, "target CSV (site_id,lon,lat,t,cov_*)");
  pred->add_option("--out", p_out, "prediction CSV")->required();
  pred->add_option("--n-samples", p_samples, "posterior sample count");
  pred->add_option("--mask-sd", p_mask, "mask threshold on sd of log mu");
  pred->add_option("--seed", p_seed, "sampling seed");
  pred->add_option("--time-average", p_ta, "optional per-site time-averaged-mean CSV");

  // score
  std::string sc_in, sc_out;
  bool sc_skip_zero = false;
  auto* score = app.add_subcommand("score", "six-metric score of predictions against truth");
  score->add_option("--input", sc_in, "CSV with columns truth,mean,lo,hi")->required();
  score->add_option("--out", sc_out, "one-row score CSV")->required();
  score->add_flag("--skip-zero-truth", sc_skip_zero,
                  "drop zero-truth rows from percentage metrics");

  // sensitivity
  std::string se_out, se_sizes = "50,100,500,1000";
  std::uint64_t se_seed = 1;
  int se_bootstrap = 200, se_master = 1000;
  bool se_nig = false;
  auto* sens =
      app.add_subcommand("sensitivity", "hyperparameter recovery under model misspecification");
  sens->add_option("--out", se_out, "table CSV")->required();
  sens->add_option("--seed", se_seed, "random seed");
  sens->add_option("--sizes", se_sizes, "comma-separated sample sizes");
  sens->add_option("--bootstrap", se_bootstrap, "bootstrap resamples for SDs (0 disables)");
  sens->add_flag("--with-nig", se_nig, "also run the experimental correctly-specified fit");
  sens->add_option("--n-master", se_master, "master location count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*derive) return run_derive(d);
    if (*interp) return run_interpolate(i_samples, i_region, i_res, i_out, i_nu, i_max_samples);
    if (*sim) return run_simulate(s_study, s_params, s_seed, s_out);
    if (*fit)
      return run_fit(f_data, f_structure, f_out, f_summaries, f_starts, f_evals, f_no_std,
                     f_fix_gamma, f_gamma, f_seed, f_samples);
    if (*pred)
      return run_predict(p_fit, p_train, p_targets, p_out, p_samples, p_mask, p_seed, p_ta);
    if (*score) return run_score(sc_in, sc_out, sc_skip_zero);
    if (*sens) return run_sensitivity(se_out, se_seed, se_sizes, se_bootstrap, se_nig, se_master);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const parse_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const data_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const degenerate_input_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const numerical_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
