#include <doctest.h>

#include <cmath>

#include "driftcov/errors.hpp"
#include "driftcov/gpfield.hpp"
#include "driftcov/random.hpp"

using namespace driftcov;
using gpfield::MaternParams;

TEST_CASE("matern_cov: value at zero distance and the range identity") {
  MaternParams p{1.0, 10.0, 2.5};
  CHECK(gpfield::matern_cov(0.0, p) == 2.5);
  CHECK(p.range() == doctest::Approx(std::sqrt(8.0) / 10.0).epsilon(1e-14));
  CHECK(MaternParams::from_range(1.0, 0.2, 1.0).kappa * 0.2 == doctest::Approx(std::sqrt(8.0)));
  CHECK_THROWS_AS(gpfield::matern_cov(-0.1, p), std::invalid_argument);
}

TEST_CASE("matern_cov: nu = 1/2 closed form") {
  MaternParams p{0.5, 3.0, 2.0};
  CHECK(gpfield::matern_cov(0.4, p) == doctest::Approx(2.0 * std::exp(-1.2)).epsilon(1e-12));
  for (int i = 1; i <= 100; ++i) {
    double h = (10.0 / p.kappa) * i / 100.0;
    CHECK(std::fabs(gpfield::matern_cov(h, p) - 2.0 * std::exp(-p.kappa * h)) < 1e-10);
  }
}

TEST_CASE("matern_cov: monotone decreasing and continuous at zero") {
  MaternParams p{1.0, 5.0, 1.0};
  double prev = gpfield::matern_cov(0.0, p);
  for (int i = 1; i <= 200; ++i) {
    double c = gpfield::matern_cov(0.01 * i, p);
    CHECK(c < prev);
    prev = c;
  }
  CHECK(gpfield::matern_cov(1e-12, p) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("simulate_gp: single-site draws have the marginal variance") {
  MaternParams p{1.0, 10.0, 1.7};
  Rng rng(314);
  double sum = 0, sum2 = 0;
  const int reps = 10000;
  for (int r = 0; r < reps; ++r) {
    auto v = gpfield::simulate_gp({{0.3, 0.7}}, p, rng);
    sum += v[0];
    sum2 += v[0] * v[0];
  }
  double var = sum2 / reps - (sum / reps) * (sum / reps);
  CHECK(var == doctest::Approx(1.7).epsilon(0.05));
}

TEST_CASE("simulate_gp: correlation at the range distance matches the kernel") {
  MaternParams p{1.0, std::sqrt(8.0) / 0.25, 1.0};  // range 0.25
  const double expected = gpfield::matern_cov(0.25, p);
  CHECK(expected == doctest::Approx(0.1385).epsilon(0.01));  // Matern nu=1 at the range

  Rng rng(2718);
  std::vector<geo::LocalPoint> pts{{0.0, 0.0}, {0.25, 0.0}};
  double acc = 0;
  const int reps = 20000;
  for (int r = 0; r < reps; ++r) {
    auto v = gpfield::simulate_gp(pts, p, rng);
    acc += v[0] * v[1];
  }
  CHECK(std::fabs(acc / reps - expected) < 0.05);
}

TEST_CASE("simulate_gp: sample covariance converges to the kernel matrix") {
  Rng rng(55);
  std::vector<geo::LocalPoint> pts;
  Rng site_rng(1);
  for (int i = 0; i < 20; ++i) pts.push_back({site_rng.uniform(), site_rng.uniform()});
  MaternParams p{1.0, std::sqrt(8.0) / 0.3, 2.0};
  Eigen::MatrixXd target = gpfield::matern_covariance(pts, p);

  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(20, 20);
  const int reps = 10000;
  for (int r = 0; r < reps; ++r) {
    Eigen::VectorXd v = gpfield::simulate_gp(pts, p, rng);
    acc.noalias() += v * v.transpose();
  }
  acc /= reps;
  CHECK((acc - target).norm() / target.norm() < 0.10);
}

TEST_CASE("simulate_gp: deterministic given the seed") {
  std::vector<geo::LocalPoint> pts{{0, 0}, {0.5, 0.2}, {0.1, 0.9}};
  MaternParams p{1.0, 8.0, 1.0};
  auto a = gpfield::simulate_gp(pts, p, 42u);
  auto b = gpfield::simulate_gp(pts, p, 42u);
  CHECK((a - b).norm() == 0.0);
}

TEST_CASE("fit_kriging: constant data collapses to the intercept") {
  Rng rng(8);
  std::vector<geo::LocalPoint> pts;
  Eigen::VectorXd y(25);
  for (int i = 0; i < 25; ++i) {
    pts.push_back({rng.uniform(), rng.uniform()});
    y[i] = 3.25;
  }
  gpfield::KrigingOptions opt;
  opt.throw_on_nonconvergence = false;
  auto model = gpfield::fit_kriging(pts, y, opt);
  CHECK(model.beta0 == doctest::Approx(3.25).epsilon(1e-6));
  CHECK(model.theta.sigma2 < 1e-8);
}

TEST_CASE("fit_kriging: rejects tiny sample and mismatched lengths") {
  std::vector<geo::LocalPoint> pts{{0, 0}, {1, 1}};
  Eigen::VectorXd y(2);
  y << 0.0, 1.0;
  CHECK_THROWS_AS(gpfield::fit_kriging(pts, y), std::invalid_argument);
  Eigen::VectorXd y3 = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(gpfield::fit_kriging(pts, y3), std::invalid_argument);
}

TEST_CASE("fit_kriging: duplicate sites are averaged") {
  Rng rng(77);
  std::vector<geo::LocalPoint> pts;
  std::vector<double> vals;
  for (int i = 0; i < 12; ++i) {
    pts.push_back({0.08 * i, 0.05 * i + 0.01});
    vals.push_back(rng.normal());
  }
  // Duplicate one site; the pair should collapse to a single averaged sample.
  pts.push_back(pts[3]);
  vals.push_back(vals[3] + 0.5);
  Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(vals.data(), vals.size());
  gpfield::KrigingOptions opt;
  opt.throw_on_nonconvergence = false;
  auto model = gpfield::fit_kriging(pts, y, opt);
  CHECK(model.sites.size() == 12);
}

TEST_CASE("fit_kriging: hyperparameter recovery on simulated fields") {
  // Smaller, faster sibling of the acceptance-scale check.
  Rng site_rng(101);
  std::vector<geo::LocalPoint> pts;
  for (int i = 0; i < 220; ++i) pts.push_back({site_rng.uniform(), site_rng.uniform()});
  MaternParams truth{1.0, std::sqrt(8.0) / 0.2, 1.0};

  int ok = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    Eigen::VectorXd y = gpfield::simulate_gp(pts, truth, rng);
    for (int i = 0; i < y.size(); ++i) y[i] += 1.5 + 0.05 * rng.normal();
    gpfield::KrigingOptions opt;
    opt.throw_on_nonconvergence = false;
    auto model = gpfield::fit_kriging(pts, y, opt);
    double rho_hat = model.theta.range();
    if (std::fabs(rho_hat - 0.2) / 0.2 < 0.35) ++ok;
  }
  CHECK(ok >= 2);
}

TEST_CASE("fit_kriging: permuting the samples leaves the fit unchanged") {
  Rng rng(31);
  std::vector<geo::LocalPoint> pts;
  Eigen::VectorXd y(40);
  for (int i = 0; i < 40; ++i) {
    pts.push_back({rng.uniform(), rng.uniform()});
    y[i] = std::sin(3 * pts[i].x) + 0.3 * rng.normal();
  }
  gpfield::KrigingOptions opt;
  opt.throw_on_nonconvergence = false;
  auto a = gpfield::fit_kriging(pts, y, opt);

  std::vector<geo::LocalPoint> pts2(pts.rbegin(), pts.rend());
  Eigen::VectorXd y2 = y.reverse();
  auto b = gpfield::fit_kriging(pts2, y2, opt);
  CHECK(a.theta.kappa == doctest::Approx(b.theta.kappa).epsilon(1e-6));
  CHECK(a.beta0 == doctest::Approx(b.beta0).epsilon(1e-6));
}

TEST_CASE("krige_predict: interpolation, reversion, and bounded variance") {
  // Hand-built model; no fitting involved.
  gpfield::KrigingModel model;
  model.beta0 = 0.7;
  model.sigma2_eps = 1e-8;
  model.theta = {1.0, std::sqrt(8.0) / 0.3, 1.2};
  Rng rng(4);
  for (int i = 0; i < 30; ++i) model.sites.push_back({rng.uniform(), rng.uniform()});
  model.y = gpfield::simulate_gp(model.sites, model.theta, rng);
  model.y.array() += model.beta0;

  auto at_sites = gpfield::krige_predict(model, model.sites);
  for (int i = 0; i < 30; ++i) {
    CHECK(at_sites.mean[i] == doctest::Approx(model.y(i, 0)).epsilon(1e-4));
    CHECK(at_sites.sd[i] >= 0.0);
  }

  auto far = gpfield::krige_predict(model, {{50.0, 50.0}});
  CHECK(far.mean[0] == doctest::Approx(model.beta0).epsilon(1e-6));
  CHECK(far.sd[0] == doctest::Approx(std::sqrt(1.2)).epsilon(1e-6));

  Rng target_rng(6);
  std::vector<geo::LocalPoint> targets;
  for (int i = 0; i < 50; ++i) targets.push_back({target_rng.uniform(), target_rng.uniform()});
  auto pred = gpfield::krige_predict(model, targets);
  for (int i = 0; i < 50; ++i)
    CHECK(pred.sd[i] * pred.sd[i] <= model.theta.sigma2 + model.sigma2_eps + 1e-9);
}

TEST_CASE("matern_covariance: matrix entries match the scalar kernel") {
  Rng rng(13);
  for (double range : {0.05, 0.2, 1.5}) {
    MaternParams p{1.0, std::sqrt(8.0) / range, 2.3};
    std::vector<geo::LocalPoint> pts;
    for (int i = 0; i < 60; ++i) pts.push_back({rng.uniform(), rng.uniform()});
    Eigen::MatrixXd cov = gpfield::matern_covariance(pts, p);
    double worst = 0;
    for (int i = 0; i < 60; ++i)
      for (int j = 0; j < 60; ++j) {
        double exact = gpfield::matern_cov(geo::distance(pts[i], pts[j]), p);
        worst = std::max(worst, std::fabs(cov(i, j) - exact));
      }
    CHECK(worst < 1e-9 * p.sigma2);
  }
  // nu = 0.5 exercises the half-integer Bessel branch of the interpolant.
  MaternParams half{0.5, 3.0, 1.0};
  std::vector<geo::LocalPoint> pts{{0, 0}, {0.1, 0}, {0.5, 0.4}, {2.0, 1.0}};
  Eigen::MatrixXd cov = gpfield::matern_covariance(pts, half);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double exact = std::exp(-half.kappa * geo::distance(pts[i], pts[j]));
      CHECK(std::fabs(cov(i, j) - exact) < 1e-9);
    }
}

TEST_CASE("robust_llt: escalating jitter rescues a borderline matrix") {
  // Two nearly identical sites make the kernel matrix numerically singular.
  std::vector<geo::LocalPoint> pts{{0, 0}, {1e-13, 0}, {0.5, 0.5}};
  MaternParams p{1.0, 5.0, 1.0};
  CHECK_NOTHROW(gpfield::robust_llt(gpfield::matern_covariance(pts, p)));
}
