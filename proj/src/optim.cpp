#include "driftcov/optim.hpp"

#include <algorithm>
#include <vector>

namespace driftcov::optim {

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x0, const NelderMeadOptions& opt) {
  const int n = static_cast<int>(x0.size());
  NelderMeadResult res;
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    double v = f(x);
    return std::isfinite(v) ? v : 1e30;
  };

  std::vector<Eigen::VectorXd> xs(n + 1, x0);
  std::vector<double> fs(n + 1);
  for (int i = 1; i <= n; ++i) xs[i][i - 1] += opt.initial_step;
  for (int i = 0; i <= n; ++i) fs[i] = eval(xs[i]);

  auto order = [&] {
    std::vector<int> idx(n + 1);
    for (int i = 0; i <= n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fs[a] < fs[b]; });
    std::vector<Eigen::VectorXd> xs2(n + 1);
    std::vector<double> fs2(n + 1);
    for (int i = 0; i <= n; ++i) {
      xs2[i] = xs[idx[i]];
      fs2[i] = fs[idx[i]];
    }
    xs.swap(xs2);
    fs.swap(fs2);
  };

  const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;
  while (evals < opt.max_evaluations) {
    order();
    double diam = 0.0;
    for (int i = 1; i <= n; ++i) diam = std::max(diam, (xs[i] - xs[0]).norm());
    double spread = fs[n] - fs[0];
    if (diam < opt.x_tol || spread < opt.f_tol) {
      res.converged = true;
      res.simplex_size = diam;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) centroid += xs[i];
    centroid /= n;

    Eigen::VectorXd xr = centroid + alpha * (centroid - xs[n]);
    double fr = eval(xr);
    if (fr < fs[0]) {
      Eigen::VectorXd xe = centroid + gamma * (centroid - xs[n]);
      double fe = eval(xe);
      if (fe < fr) {
        xs[n] = xe;
        fs[n] = fe;
      } else {
        xs[n] = xr;
        fs[n] = fr;
      }
    } else if (fr < fs[n - 1]) {
      xs[n] = xr;
      fs[n] = fr;
    } else {
      Eigen::VectorXd xc = centroid + rho * (xs[n] - centroid);
      double fc = eval(xc);
      if (fc < fs[n]) {
        xs[n] = xc;
        fs[n] = fc;
      } else {
        for (int i = 1; i <= n; ++i) {
          xs[i] = xs[0] + sigma * (xs[i] - xs[0]);
          fs[i] = eval(xs[i]);
        }
      }
    }
  }

  order();
  if (!res.converged) {
    double diam = 0.0;
    for (int i = 1; i <= n; ++i) diam = std::max(diam, (xs[i] - xs[0]).norm());
    res.simplex_size = diam;
  }
  res.x = xs[0];
  res.value = fs[0];
  res.evaluations = evals;
  return res;
}

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (int i = 0; i < x.size(); ++i) {
    double x0 = x[i];
    xp[i] = x0 + h;
    double fp = f(xp);
    xp[i] = x0 - h;
    double fm = f(xp);
    xp[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Eigen::MatrixXd fd_hessian(const std::function<double(const Eigen::VectorXd&)>& f,
                           const Eigen::VectorXd& x, double h) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd H(n, n);
  Eigen::VectorXd xp = x;
  const double f0 = f(x);
  for (int i = 0; i < n; ++i) {
    xp[i] = x[i] + h;
    double fp = f(xp);
    xp[i] = x[i] - h;
    double fm = f(xp);
    xp[i] = x[i];
    H(i, i) = (fp - 2.0 * f0 + fm) / (h * h);
    for (int j = i + 1; j < n; ++j) {
      xp[i] = x[i] + h;
      xp[j] = x[j] + h;
      double fpp = f(xp);
      xp[j] = x[j] - h;
      double fpm = f(xp);
      xp[i] = x[i] - h;
      double fmm = f(xp);
      xp[j] = x[j] + h;
      double fmp = f(xp);
      xp[i] = x[i];
      xp[j] = x[j];
      H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
    }
  }
  return H;
}

}  // namespace driftcov::optim
