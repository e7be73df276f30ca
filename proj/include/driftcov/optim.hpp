#pragma once

#include <Eigen/Dense>
#include <functional>
#include <limits>

namespace driftcov::optim {

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  double simplex_size = std::numeric_limits<double>::infinity();
  bool converged = false;
};

struct NelderMeadOptions {
  int max_evaluations = 2000;
  double x_tol = 1e-9;   // simplex diameter
  double f_tol = 1e-12;  // spread of simplex values
  double initial_step = 0.5;
};

/// Plain Nelder-Mead simplex minimization; deterministic for a given start.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x0, const NelderMeadOptions& opt = {});

/// Central finite-difference gradient.
Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x, double h = 1e-5);

/// Central finite-difference Hessian (symmetrized).
Eigen::MatrixXd fd_hessian(const std::function<double(const Eigen::VectorXd&)>& f,
                           const Eigen::VectorXd& x, double h = 1e-4);

}  // namespace driftcov::optim
