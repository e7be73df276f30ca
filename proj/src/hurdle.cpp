#include "driftcov/hurdle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>

#include "driftcov/errors.hpp"
#include "driftcov/gpfield.hpp"
#include "driftcov/grid.hpp"
#include "driftcov/optim.hpp"

namespace driftcov::hurdle {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// Problem layout
// ---------------------------------------------------------------------------

// Latent vector: T blocks of [psi_t, xi_t] (xi absent without positives),
// then the border [beta_z, beta_y].
struct Design {
  const Dataset* data{};
  int n{}, T{}, p{};     // p includes the intercept column
  bool has_gamma{};      // any positive observation
  Eigen::MatrixXd X;     // (nT) x p

  int block_size() const { return has_gamma ? 2 * n : n; }
  int border_size() const { return has_gamma ? 2 * p : p; }
  long dim() const { return static_cast<long>(T) * block_size() + border_size(); }

  long psi_at(int i, int t) const { return static_cast<long>(t) * block_size() + i; }
  long xi_at(int i, int t) const { return static_cast<long>(t) * block_size() + n + i; }
  long beta_z_at(int j) const { return static_cast<long>(T) * block_size() + j; }
  long beta_y_at(int j) const { return static_cast<long>(T) * block_size() + p + j; }
};

Design make_design(const Dataset& data) {
  data.validate();
  Design d;
  d.data = &data;
  d.n = data.n_sites();
  d.T = data.n_times;
  d.p = static_cast<int>(data.covariates.cols()) + 1;
  d.has_gamma = std::any_of(data.z.begin(), data.z.end(), [](signed char v) { return v == 1; });
  d.X.resize(data.n_cells(), d.p);
  d.X.col(0).setOnes();
  d.X.rightCols(d.p - 1) = data.covariates;
  return d;
}

// Per-evaluation prior pieces for one latent field.
struct FieldPrior {
  Eigen::MatrixXd Qs;   // spatial precision (inverse Matern covariance)
  double ldet_Qs{};
  double alpha{};

  // Coefficient of Qs in the (t,t) prior block.
  double diag_coeff(int t, int T) const {
    if (T == 1) return 1.0 - alpha * alpha;
    return (t == 0 || t == T - 1) ? 1.0 : 1.0 + alpha * alpha;
  }
};

FieldPrior make_field_prior(const std::vector<geo::LocalPoint>& sites, const FieldHyper& h,
                            double nu) {
  if (!(h.range > 0) || !(h.sigma > 0) || !(std::fabs(h.alpha) < 1))
    throw std::invalid_argument("FieldHyper: need range > 0, sigma > 0, |alpha| < 1");
  auto params = gpfield::MaternParams::from_range(nu, h.range, h.sigma * h.sigma);
  auto llt = gpfield::robust_llt(gpfield::matern_covariance(sites, params));
  const int n = static_cast<int>(sites.size());
  FieldPrior prior;
  prior.Qs = llt.solve(Eigen::MatrixXd::Identity(n, n));
  prior.ldet_Qs = -2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  prior.alpha = h.alpha;
  return prior;
}

// ---------------------------------------------------------------------------
// Block-tridiagonal Cholesky with a dense border (the beta block)
// ---------------------------------------------------------------------------

class BlockTriSolver {
 public:
  // D[t] diagonal blocks, E[t] = block (t, t+1), Bm[t] border coupling,
  // C border block. Throws numerical_error when a pivot is indefinite.
  void factor(std::vector<Eigen::MatrixXd> D, const std::vector<Eigen::MatrixXd>& E,
              const std::vector<Eigen::MatrixXd>& Bm, const Eigen::MatrixXd& C) {
    T_ = static_cast<int>(D.size());
    B_ = static_cast<int>(D[0].rows());
    P_ = static_cast<int>(C.rows());
    L_.resize(T_);
    M_.assign(T_ > 0 ? T_ - 1 : 0, {});
    W_.resize(T_);

    for (int t = 0; t < T_; ++t) {
      Eigen::MatrixXd S = std::move(D[t]);
      if (t > 0) S.noalias() -= M_[t - 1] * M_[t - 1].transpose();
      Eigen::LLT<Eigen::MatrixXd> llt(S);
      if (llt.info() != Eigen::Success)
        throw numerical_error("BlockTriSolver: indefinite pivot at block " + std::to_string(t));
      L_[t] = llt.matrixL();
      if (t + 1 < T_)
        M_[t] = L_[t].triangularView<Eigen::Lower>().solve(E[t]).transpose();
      W_[t] = Bm[t];
      if (t > 0) W_[t].noalias() -= M_[t - 1] * W_[t - 1];
      W_[t] = L_[t].triangularView<Eigen::Lower>().solve(W_[t]);
    }

    Eigen::MatrixXd S = C;
    for (int t = 0; t < T_; ++t) S.noalias() -= W_[t].transpose() * W_[t];
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success)
      throw numerical_error("BlockTriSolver: indefinite border block");
    LS_ = llt.matrixL();
  }

  double logdet() const {
    double acc = 2.0 * LS_.diagonal().array().log().sum();
    for (const auto& L : L_) acc += 2.0 * L.diagonal().array().log().sum();
    return acc;
  }

  long dim() const { return static_cast<long>(T_) * B_ + P_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    std::vector<Eigen::VectorXd> y(T_);
    for (int t = 0; t < T_; ++t) {
      Eigen::VectorXd r = rhs.segment(static_cast<long>(t) * B_, B_);
      if (t > 0) r.noalias() -= M_[t - 1] * y[t - 1];
      y[t] = L_[t].triangularView<Eigen::Lower>().solve(r);
    }
    Eigen::VectorXd rb = rhs.tail(P_);
    for (int t = 0; t < T_; ++t) rb.noalias() -= W_[t].transpose() * y[t];
    Eigen::VectorXd xb = LS_.triangularView<Eigen::Lower>().solve(rb);
    xb = LS_.transpose().triangularView<Eigen::Upper>().solve(xb);

    Eigen::VectorXd x(dim());
    x.tail(P_) = xb;
    Eigen::VectorXd carry;
    for (int t = T_ - 1; t >= 0; --t) {
      Eigen::VectorXd v = y[t] - W_[t] * xb;
      if (t + 1 < T_) v.noalias() -= M_[t].transpose() * carry;
      carry = L_[t].transpose().triangularView<Eigen::Upper>().solve(v);
      x.segment(static_cast<long>(t) * B_, B_) = carry;
    }
    return x;
  }

  // Draw from N(0, H^{-1}) by solving L^T x = standard normal.
  Eigen::VectorXd sample(Rng& rng) const {
    Eigen::VectorXd zb(P_);
    for (int j = 0; j < P_; ++j) zb[j] = rng.normal();
    Eigen::VectorXd xb = LS_.transpose().triangularView<Eigen::Upper>().solve(zb);

    Eigen::VectorXd x(dim());
    x.tail(P_) = xb;
    Eigen::VectorXd carry;
    for (int t = T_ - 1; t >= 0; --t) {
      Eigen::VectorXd v(B_);
      for (int j = 0; j < B_; ++j) v[j] = rng.normal();
      v.noalias() -= W_[t] * xb;
      if (t + 1 < T_) v.noalias() -= M_[t].transpose() * carry;
      carry = L_[t].transpose().triangularView<Eigen::Upper>().solve(v);
      x.segment(static_cast<long>(t) * B_, B_) = carry;
    }
    return x;
  }

  // Marginal variances: diagonal of H^{-1}, via the block Takahashi recursion
  // plus the low-rank border correction.
  Eigen::VectorXd diag_inverse() const {
    Eigen::MatrixXd Sb = LS_.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(P_, P_));
    Sb = Sb.transpose() * Sb;  // (C - W'W)^{-1}

    // V = A^{-1} B = L_A^{-T} W, backward pass.
    std::vector<Eigen::MatrixXd> V(T_);
    Eigen::MatrixXd carry;
    for (int t = T_ - 1; t >= 0; --t) {
      Eigen::MatrixXd rhs = W_[t];
      if (t + 1 < T_) rhs.noalias() -= M_[t].transpose() * carry;
      carry = L_[t].transpose().triangularView<Eigen::Upper>().solve(rhs);
      V[t] = carry;
    }

    Eigen::VectorXd d(dim());
    d.tail(P_) = Sb.diagonal();

    Eigen::MatrixXd sigma_next;
    for (int t = T_ - 1; t >= 0; --t) {
      Eigen::MatrixXd Linv =
          L_[t].triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(B_, B_));
      Eigen::MatrixXd sigma = Linv.transpose() * Linv;
      if (t + 1 < T_) {
        Eigen::MatrixXd Bt = M_[t].transpose() * Linv;  // L_{t+1,t} L_t^{-1}
        sigma.noalias() += Bt.transpose() * sigma_next * Bt;
      }
      // border correction: diag of V_t Sb V_t'
      Eigen::VectorXd corr = ((V[t] * Sb).cwiseProduct(V[t])).rowwise().sum();
      d.segment(static_cast<long>(t) * B_, B_) = sigma.diagonal() + corr;
      sigma_next = std::move(sigma);
    }
    return d;
  }

 private:
  int T_ = 0, B_ = 0, P_ = 0;
  std::vector<Eigen::MatrixXd> L_;  // diagonal Cholesky blocks
  std::vector<Eigen::MatrixXd> M_;  // subdiagonal Cholesky blocks
  std::vector<Eigen::MatrixXd> W_;  // L_A^{-1} * border
  Eigen::MatrixXd LS_;              // Cholesky of the border Schur complement
};

// ---------------------------------------------------------------------------
// Likelihood, prior, and the inner Newton mode finder
// ---------------------------------------------------------------------------

struct LikelihoodEval {
  double bernoulli{};
  double gamma{};
  double total() const { return bernoulli + gamma; }
};

LikelihoodEval log_likelihood(const Design& d, const HurdleHyper& hyper, const Eigen::VectorXd& u,
                              Eigen::VectorXd* grad) {
  const Dataset& data = *d.data;
  const double k = hyper.k, gamma = hyper.gamma;
  const double lgk = std::lgamma(k);
  LikelihoodEval ll;
  if (grad) grad->setZero(d.dim());

  auto beta_z = u.segment(d.beta_z_at(0), d.p);
  for (int t = 0; t < d.T; ++t) {
    for (int i = 0; i < d.n; ++i) {
      const long c = data.cell(i, t);
      const signed char zc = data.z[c];
      if (zc < 0) continue;
      const auto x = d.X.row(c);
      const double eta_z = x.dot(beta_z) + u[d.psi_at(i, t)];
      ll.bernoulli += zc * eta_z - softplus(eta_z);
      if (grad) {
        const double gz = zc - sigmoid(eta_z);
        (*grad)[d.psi_at(i, t)] += gz;
        for (int j = 0; j < d.p; ++j) (*grad)[d.beta_z_at(j)] += gz * x[j];
      }
      if (zc == 1 && d.has_gamma) {
        const auto beta_y = u.segment(d.beta_y_at(0), d.p);
        const double yv = data.y[c];
        const double eta_y = x.dot(beta_y) + gamma * u[d.psi_at(i, t)] + u[d.xi_at(i, t)];
        ll.gamma += k * std::log(k) - lgk + (k - 1.0) * std::log(yv) - k * eta_y -
                    k * yv * std::exp(-eta_y);
        if (grad) {
          const double gy = -k + k * yv * std::exp(-eta_y);
          (*grad)[d.psi_at(i, t)] += gamma * gy;
          (*grad)[d.xi_at(i, t)] += gy;
          for (int j = 0; j < d.p; ++j) (*grad)[d.beta_y_at(j)] += gy * x[j];
        }
      }
    }
  }
  return ll;
}

// One field's contribution to u' Q u and optionally to the gradient of
// -0.5 u' Q u; `at` maps (i, t) to the latent index.
template <typename At>
double prior_quad_field(const Design& d, const FieldPrior& prior, const Eigen::VectorXd& u,
                        Eigen::VectorXd* grad, At at) {
  const int n = d.n, T = d.T;
  const double alpha = prior.alpha;
  Eigen::VectorXd psi_t(n);
  std::vector<Eigen::VectorXd> cols(T);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < n; ++i) psi_t[i] = u[at(i, t)];
    cols[t] = prior.Qs * psi_t;
  }
  double quad = 0.0;
  for (int t = 0; t < T; ++t) {
    const double a_t = prior.diag_coeff(t, T);
    for (int i = 0; i < n; ++i) {
      const double psi_it = u[at(i, t)];
      double qi = a_t * cols[t][i];
      if (t > 0) qi -= alpha * cols[t - 1][i];
      if (t + 1 < T) qi -= alpha * cols[t + 1][i];
      quad += psi_it * qi;
      if (grad) (*grad)[at(i, t)] -= qi;
    }
  }
  return quad;
}

struct PriorEval {
  double quad{};     // u' Q u
  double logdet{};   // log det Q
};

PriorEval prior_eval(const Design& d, const HurdleHyper& hyper, const FieldPrior& psi,
                     const FieldPrior* xi, const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
  PriorEval out;
  out.quad = prior_quad_field(d, psi, u, grad, [&](int i, int t) { return d.psi_at(i, t); });
  out.logdet = d.n * std::log1p(-psi.alpha * psi.alpha) + d.T * psi.ldet_Qs;
  if (d.has_gamma) {
    out.quad += prior_quad_field(d, *xi, u, grad, [&](int i, int t) { return d.xi_at(i, t); });
    out.logdet += d.n * std::log1p(-xi->alpha * xi->alpha) + d.T * xi->ldet_Qs;
  }
  const double tau = 1.0 / (hyper.beta_prior_sd * hyper.beta_prior_sd);
  const int P = d.border_size();
  auto beta = u.tail(P);
  out.quad += tau * beta.squaredNorm();
  out.logdet += P * std::log(tau);
  if (grad) grad->tail(P) -= tau * beta;
  return out;
}

// Assemble the negative Hessian of the joint log posterior at u and factor it.
void assemble_and_factor(const Design& d, const HurdleHyper& hyper, const FieldPrior& psi,
                         const FieldPrior* xi, const Eigen::VectorXd& u, BlockTriSolver& solver) {
  const Dataset& data = *d.data;
  const int n = d.n, T = d.T, p = d.p;
  const int B = d.block_size(), P = d.border_size();
  const double k = hyper.k, gamma = hyper.gamma;
  const double tau = 1.0 / (hyper.beta_prior_sd * hyper.beta_prior_sd);

  Eigen::MatrixXd Eblock = Eigen::MatrixXd::Zero(B, B);
  Eblock.topLeftCorner(n, n) = -psi.alpha * psi.Qs;
  if (d.has_gamma) Eblock.bottomRightCorner(n, n) = -xi->alpha * xi->Qs;
  std::vector<Eigen::MatrixXd> E(T > 0 ? T - 1 : 0, Eblock);

  std::vector<Eigen::MatrixXd> D(T);
  std::vector<Eigen::MatrixXd> Bm(T);
  Eigen::MatrixXd C = tau * Eigen::MatrixXd::Identity(P, P);

  auto beta_z = u.segment(d.beta_z_at(0), p);
  for (int t = 0; t < T; ++t) {
    D[t] = Eigen::MatrixXd::Zero(B, B);
    D[t].topLeftCorner(n, n) = psi.diag_coeff(t, T) * psi.Qs;
    if (d.has_gamma) D[t].bottomRightCorner(n, n) = xi->diag_coeff(t, T) * xi->Qs;
    Bm[t] = Eigen::MatrixXd::Zero(B, P);

    for (int i = 0; i < n; ++i) {
      const long c = data.cell(i, t);
      const signed char zc = data.z[c];
      if (zc < 0) continue;
      const auto x = d.X.row(c);
      const double s = sigmoid(x.dot(beta_z) + u[d.psi_at(i, t)]);
      const double wz = s * (1.0 - s);
      D[t](i, i) += wz;
      Bm[t].row(i).head(p) += wz * x;
      C.topLeftCorner(p, p).noalias() += wz * x.transpose() * x;

      if (zc == 1 && d.has_gamma) {
        auto beta_y = u.segment(d.beta_y_at(0), p);
        const double eta_y = x.dot(beta_y) + gamma * u[d.psi_at(i, t)] + u[d.xi_at(i, t)];
        const double wy = k * data.y[c] * std::exp(-eta_y);
        D[t](i, i) += gamma * gamma * wy;
        D[t](i, n + i) += gamma * wy;
        D[t](n + i, i) += gamma * wy;
        D[t](n + i, n + i) += wy;
        Bm[t].row(i).tail(p) += gamma * wy * x;
        Bm[t].row(n + i).tail(p) += wy * x;
        C.bottomRightCorner(p, p).noalias() += wy * x.transpose() * x;
      }
    }
  }
  solver.factor(std::move(D), E, Bm, C);
}

struct NewtonResult {
  Eigen::VectorXd mode;
  double loglik_at_mode{};
  double quad_at_mode{};
  double prior_logdet{};
  double hessian_logdet{};
  bool converged{};
};

NewtonResult newton_mode(const Design& d, const HurdleHyper& hyper, const FieldPrior& psi,
                         const FieldPrior* xi, Eigen::VectorXd u, BlockTriSolver& solver,
                         int max_iter, double tol) {
  Eigen::VectorXd grad(d.dim());
  auto objective = [&](const Eigen::VectorXd& v, Eigen::VectorXd* g) {
    LikelihoodEval ll = log_likelihood(d, hyper, v, g);
    PriorEval prior = prior_eval(d, hyper, psi, xi, v, g);
    return std::make_pair(ll.total() - 0.5 * prior.quad, prior);
  };

  if (u.size() != d.dim() || !u.allFinite()) u = Eigen::VectorXd::Zero(d.dim());
  auto [f, prior] = objective(u, &grad);
  if (!std::isfinite(f)) {
    u.setZero();
    std::tie(f, prior) = objective(u, &grad);
  }

  NewtonResult res;
  res.converged = false;
  for (int it = 0; it < max_iter; ++it) {
    assemble_and_factor(d, hyper, psi, xi, u, solver);
    Eigen::VectorXd step = solver.solve(grad);
    double decrement = 0.5 * grad.dot(step);
    if (!std::isfinite(decrement)) throw numerical_error("newton_mode: non-finite step");
    if (decrement < tol) {
      res.converged = true;
      break;
    }
    double scale = 1.0;
    bool accepted = false;
    for (int half = 0; half < 40; ++half, scale *= 0.5) {
      Eigen::VectorXd cand = u + scale * step;
      auto [fc, priorc] = objective(cand, nullptr);
      if (std::isfinite(fc) && fc > f - 1e-12) {
        u = std::move(cand);
        f = fc;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;  // stalled on a flat spot; treat current point as mode
    std::tie(f, prior) = objective(u, &grad);
  }
  if (!res.converged) {
    // A final factor at the stopping point keeps the marginal well-defined.
    assemble_and_factor(d, hyper, psi, xi, u, solver);
    Eigen::VectorXd step = solver.solve(grad);
    res.converged = 0.5 * grad.dot(step) < 10.0 * tol;
  }

  LikelihoodEval ll = log_likelihood(d, hyper, u, nullptr);
  PriorEval pe = prior_eval(d, hyper, psi, xi, u, nullptr);
  res.mode = std::move(u);
  res.loglik_at_mode = ll.total();
  res.quad_at_mode = pe.quad;
  res.prior_logdet = pe.logdet;
  res.hessian_logdet = solver.logdet();
  return res;
}

// log p(data | hyper) by Laplace approximation at the latent mode.
double laplace_log_marginal(const NewtonResult& r) {
  return r.loglik_at_mode - 0.5 * r.quad_at_mode + 0.5 * r.prior_logdet - 0.5 * r.hessian_logdet;
}

// ---------------------------------------------------------------------------
// Hyperparameter transform packing
// ---------------------------------------------------------------------------

struct HyperLayout {
  int k = -1, gamma = -1;
  int rho_psi = -1, sigma_psi = -1, alpha_psi = -1;
  int rho_xi = -1, sigma_xi = -1, alpha_xi = -1;
  int size = 0;

  // `psi_active` is false when the presence data are degenerate (all observed
  // z equal one): the shared field is then unidentified through the Bernoulli
  // part and is frozen out together with gamma, leaving the fixed effects to
  // carry the (saturated) presence model.
  static HyperLayout make(Structure structure, bool has_gamma, bool fix_gamma, bool psi_active) {
    HyperLayout l;
    int idx = 0;
    if (has_gamma) {
      l.k = idx++;
      if (!fix_gamma && psi_active) l.gamma = idx++;
    }
    if (psi_active) {
      l.rho_psi = idx++;
      l.sigma_psi = idx++;
      if (structure == Structure::SpatioTemporal) l.alpha_psi = idx++;
    }
    if (has_gamma) {
      l.rho_xi = idx++;
      l.sigma_xi = idx++;
      if (structure == Structure::SpatioTemporal) l.alpha_xi = idx++;
    }
    l.size = idx;
    return l;
  }

  Eigen::VectorXd pack(const HurdleHyper& h) const {
    Eigen::VectorXd v(size);
    if (k >= 0) v[k] = std::log(h.k);
    if (gamma >= 0) v[gamma] = h.gamma;
    if (rho_psi >= 0) v[rho_psi] = std::log(h.psi.range);
    if (sigma_psi >= 0) v[sigma_psi] = std::log(h.psi.sigma);
    if (alpha_psi >= 0) v[alpha_psi] = std::atanh(h.psi.alpha);
    if (rho_xi >= 0) v[rho_xi] = std::log(h.xi.range);
    if (sigma_xi >= 0) v[sigma_xi] = std::log(h.xi.sigma);
    if (alpha_xi >= 0) v[alpha_xi] = std::atanh(h.xi.alpha);
    return v;
  }

  HurdleHyper unpack(const Eigen::VectorXd& v, const HurdleHyper& base) const {
    HurdleHyper h = base;
    if (k >= 0) h.k = std::exp(v[k]);
    if (gamma >= 0) h.gamma = v[gamma];
    if (rho_psi >= 0) h.psi.range = std::exp(v[rho_psi]);
    if (sigma_psi >= 0) h.psi.sigma = std::exp(v[sigma_psi]);
    h.psi.alpha = alpha_psi >= 0 ? std::tanh(v[alpha_psi]) : base.psi.alpha;
    if (rho_xi >= 0) h.xi.range = std::exp(v[rho_xi]);
    if (sigma_xi >= 0) h.xi.sigma = std::exp(v[sigma_xi]);
    h.xi.alpha = alpha_xi >= 0 ? std::tanh(v[alpha_xi]) : base.xi.alpha;
    return h;
  }

  bool in_box(const Eigen::VectorXd& v) const {
    for (int i = 0; i < size; ++i) {
      double bound = (i == alpha_psi || i == alpha_xi) ? 6.0 : (i == gamma ? 50.0 : 12.0);
      if (std::fabs(v[i]) > bound) return false;
    }
    return true;
  }
};

double median_site_distance(const std::vector<geo::LocalPoint>& sites) {
  std::vector<double> d;
  for (std::size_t i = 0; i < sites.size(); ++i)
    for (std::size_t j = i + 1; j < sites.size(); ++j)
      d.push_back(geo::distance(sites[i], sites[j]));
  if (d.empty()) return 1.0;
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  return d[d.size() / 2];
}

// Weakly informative penalised-complexity-type hyperpriors. Exponential tails
// on the field SDs (P(sigma > 2.5) = 0.05) and on the inverse ranges
// (P(rho < med_dist/20) = 0.05) keep the optimiser off the two improper flat
// ridges -- sigma -> 0 with the field folded into the noise, and
// range -> 0/inf with the field degenerating into iid dummies or a duplicate
// intercept -- where the unpenalised Laplace marginal plateaus. Densities are
// evaluated on the transformed (log) scale the optimiser works in.
struct HyperPrior {
  bool active{true};
  double lambda_sigma{3.0 / 2.5};
  double lambda_rho{};  // 3 * rho0 with rho0 = med_dist / 20

  static HyperPrior make(bool active, double med_dist) {
    HyperPrior p;
    p.active = active;
    p.lambda_rho = 3.0 * med_dist / 20.0;
    return p;
  }

  double field_log_density(const FieldHyper& f) const {
    // log pi(log sigma) = c - lambda_s * sigma + log sigma
    // log pi(log rho)   = c - lambda_r / rho  - log rho
    return -lambda_sigma * f.sigma + std::log(f.sigma) - lambda_rho / f.range -
           std::log(f.range);
  }

  double log_density(const HurdleHyper& h, bool psi_active, bool xi_active) const {
    if (!active) return 0.0;
    double acc = 0.0;
    if (psi_active) acc += field_log_density(h.psi);
    if (xi_active) acc += field_log_density(h.xi);
    return acc;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Public surface
// ---------------------------------------------------------------------------

void Dataset::validate() const {
  if (sites.empty()) throw std::invalid_argument("Dataset: no sites");
  if (n_times < 1) throw std::invalid_argument("Dataset: n_times must be >= 1");
  if (!site_ids.empty() && static_cast<int>(site_ids.size()) != n_sites())
    throw std::invalid_argument("Dataset: site_ids size mismatch");
  const long cells = n_cells();
  if (covariates.rows() != cells || static_cast<long>(z.size()) != cells || y.size() != cells)
    throw std::invalid_argument("Dataset: covariates/z/y must have n_sites * n_times rows");
  if (!covariates.allFinite()) throw std::invalid_argument("Dataset: non-finite covariate");
  for (long c = 0; c < cells; ++c) {
    if (z[c] != 0 && z[c] != 1 && z[c] != -1)
      throw std::invalid_argument("Dataset: z entries must be 0, 1, or -1");
    if (z[c] == 1 && !(y[c] > 0))
      throw std::invalid_argument("Dataset: y must be > 0 exactly where z == 1");
    if (z[c] != 1 && std::isfinite(y[c]))
      throw std::invalid_argument("Dataset: y must be absent where z != 1");
  }
}

HurdleModelSpec default_simulation_spec() {
  HurdleModelSpec spec;
  spec.beta_z = Eigen::Vector2d(0.5, 0.3);
  spec.beta_y = Eigen::Vector2d(1.0, -0.4);
  spec.hyper.k = 10.0;
  spec.hyper.gamma = 0.3;
  spec.hyper.psi = {0.25, 0.44, 0.40};
  spec.hyper.xi = {0.20, 0.14, 0.20};
  return spec;
}

Standardization standardize(Eigen::MatrixXd& covariates, const std::vector<std::string>& names) {
  const long n = covariates.rows();
  Standardization s;
  s.mean.resize(covariates.cols());
  s.sd.resize(covariates.cols());
  for (int j = 0; j < covariates.cols(); ++j) {
    const double mean = covariates.col(j).mean();
    const double var = (covariates.col(j).array() - mean).square().sum() / n;  // population sd
    if (!(var > 0)) {
      std::string name = j < static_cast<int>(names.size()) ? names[j] : "cov_" + std::to_string(j + 1);
      throw data_error("standardize: zero-variance column '" + name + "'");
    }
    s.mean[j] = mean;
    s.sd[j] = std::sqrt(var);
    covariates.col(j) = (covariates.col(j).array() - mean) / s.sd[j];
  }
  s.applied = true;
  return s;
}

SimulationOutput simulate_hurdle(const HurdleModelSpec& spec,
                                 const std::vector<geo::LocalPoint>& sites, int n_times,
                                 const CovariateConfig& covariates, std::uint64_t seed) {
  const int n = static_cast<int>(sites.size());
  const int T = n_times;
  if (n < 1 || T < 1) throw std::invalid_argument("simulate_hurdle: need sites and n_times >= 1");
  const int p = covariates.count;
  if (spec.beta_z.size() != p + 1 || spec.beta_y.size() != p + 1)
    throw std::invalid_argument("simulate_hurdle: beta length must be covariate count + 1");

  Rng rng(seed);

  // Cholesky factors reused across times.
  auto chol_of = [&](double range, double sigma2, double nu) {
    auto params = gpfield::MaternParams::from_range(nu, range, sigma2);
    return Eigen::MatrixXd(
        gpfield::robust_llt(gpfield::matern_covariance(sites, params)).matrixL());
  };
  Eigen::MatrixXd L_cov = chol_of(covariates.range, covariates.sigma2, covariates.nu);
  Eigen::MatrixXd L_psi = chol_of(spec.hyper.psi.range,
                                  spec.hyper.psi.sigma * spec.hyper.psi.sigma, spec.hyper.nu);
  Eigen::MatrixXd L_xi =
      chol_of(spec.hyper.xi.range, spec.hyper.xi.sigma * spec.hyper.xi.sigma, spec.hyper.nu);

  auto draw_field = [&](const Eigen::MatrixXd& L) {
    Eigen::VectorXd zvec(n);
    for (int i = 0; i < n; ++i) zvec[i] = rng.normal();
    return Eigen::VectorXd(L * zvec);
  };

  // AR(1) over iid Matern innovations, stationary start.
  auto draw_ar_field = [&](const Eigen::MatrixXd& L, double alpha) {
    Eigen::MatrixXd field(n, T);
    field.col(0) = draw_field(L) / std::sqrt(1.0 - alpha * alpha);
    for (int t = 1; t < T; ++t) field.col(t) = alpha * field.col(t - 1) + draw_field(L);
    return field;
  };

  SimulationOutput out;
  out.truth.psi = draw_ar_field(L_psi, spec.hyper.psi.alpha);
  out.truth.xi = draw_ar_field(L_xi, spec.hyper.xi.alpha);
  out.truth.pi.resize(n, T);
  out.truth.mu.resize(n, T);

  Dataset& data = out.data;
  data.sites = sites;
  data.n_times = T;
  data.covariates.resize(static_cast<long>(n) * T, p);
  data.z.assign(static_cast<long>(n) * T, 0);
  data.y = Eigen::VectorXd::Constant(static_cast<long>(n) * T, kNaN);
  for (int j = 0; j < p; ++j) data.cov_names.push_back("cov_" + std::to_string(j + 1));
  data.site_ids.resize(n);
  for (int i = 0; i < n; ++i) data.site_ids[i] = "s" + std::to_string(i + 1);

  for (int t = 0; t < T; ++t) {
    Eigen::MatrixXd cov_t(n, p);
    for (int j = 0; j < p; ++j) cov_t.col(j) = draw_field(L_cov);
    for (int i = 0; i < n; ++i) {
      const long c = data.cell(i, t);
      data.covariates.row(c) = cov_t.row(i);
      double eta_z = spec.beta_z[0] + spec.beta_z.tail(p).dot(cov_t.row(i)) + out.truth.psi(i, t);
      double eta_y = spec.beta_y[0] + spec.beta_y.tail(p).dot(cov_t.row(i)) +
                     spec.hyper.gamma * out.truth.psi(i, t) + out.truth.xi(i, t);
      const double pi = sigmoid(eta_z);
      const double mu = std::exp(eta_y);
      out.truth.pi(i, t) = pi;
      out.truth.mu(i, t) = mu;
      if (rng.bernoulli(pi)) {
        data.z[c] = 1;
        data.y[c] = rng.gamma(spec.hyper.k, mu / spec.hyper.k);
      }
    }
  }
  return out;
}

long latent_dimension(const Dataset& data) { return make_design(data).dim(); }

double joint_log_posterior(const Dataset& data, const HurdleHyper& hyper,
                           const Eigen::VectorXd& latent, Eigen::VectorXd* gradient) {
  Design d = make_design(data);
  if (latent.size() != d.dim())
    throw std::invalid_argument("joint_log_posterior: latent vector has wrong size");
  FieldPrior psi = make_field_prior(data.sites, hyper.psi, hyper.nu);
  FieldPrior xi;
  if (d.has_gamma) xi = make_field_prior(data.sites, hyper.xi, hyper.nu);

  LikelihoodEval ll = log_likelihood(d, hyper, latent, gradient);
  PriorEval prior = prior_eval(d, hyper, psi, d.has_gamma ? &xi : nullptr, latent, gradient);
  return ll.total() - 0.5 * prior.quad + 0.5 * prior.logdet -
         0.5 * d.dim() * std::log(2.0 * M_PI);
}

void log_likelihood_parts(const Dataset& data, const HurdleHyper& hyper,
                          const Eigen::VectorXd& latent, double& bernoulli_part,
                          double& gamma_part) {
  Design d = make_design(data);
  if (latent.size() != d.dim())
    throw std::invalid_argument("log_likelihood_parts: latent vector has wrong size");
  LikelihoodEval ll = log_likelihood(d, hyper, latent, nullptr);
  bernoulli_part = ll.bernoulli;
  gamma_part = ll.gamma;
}

double laplace_log_marginal(const Dataset& data, const HurdleHyper& hyper) {
  Design d = make_design(data);
  FieldPrior psi = make_field_prior(data.sites, hyper.psi, hyper.nu);
  FieldPrior xi;
  if (d.has_gamma) xi = make_field_prior(data.sites, hyper.xi, hyper.nu);
  BlockTriSolver solver;
  NewtonResult nr = newton_mode(d, hyper, psi, d.has_gamma ? &xi : nullptr,
                                Eigen::VectorXd::Zero(d.dim()), solver, 100, 1e-10);
  return laplace_log_marginal(nr);
}

FitResult fit_hurdle(const Dataset& input, const FitConfig& config) {
  FitResult fit;
  fit.structure = config.structure;
  fit.data = input;
  fit.data.validate();
  if (config.standardize_covariates && fit.data.covariates.cols() > 0)
    fit.standardization = standardize(fit.data.covariates, fit.data.cov_names);

  Design d = make_design(fit.data);
  fit.has_gamma_part = d.has_gamma;
  fit.gamma_fixed = config.fix_gamma;

  // Saturated presence data (all observed z equal) identify neither the
  // shared field nor gamma; freeze both and let the fixed effects carry the
  // degenerate z part.
  bool any_zero = false, any_one = false;
  for (long c = 0; c < fit.data.n_cells(); ++c) {
    any_zero |= fit.data.z[c] == 0;
    any_one |= fit.data.z[c] == 1;
  }
  const bool psi_active = any_zero && any_one;
  fit.presence_degenerate = !psi_active;
  fit.regularized_hyper = config.regularize_hyper;

  const HyperLayout layout =
      HyperLayout::make(config.structure, d.has_gamma, config.fix_gamma, psi_active);

  // Data-driven start ingredients.
  double med_dist = median_site_distance(fit.data.sites);

  HurdleHyper base;
  base.nu = config.nu;
  base.beta_prior_sd = config.beta_prior_sd;
  base.gamma = config.fix_gamma ? config.fixed_gamma : 0.0;
  base.psi.alpha = base.xi.alpha = 0.0;
  if (!psi_active) {
    base.gamma = 0.0;
    base.psi = {med_dist, 1e-3, 0.0};  // negligible frozen field
  }
  double k0 = 5.0, sd_logy = 0.5;
  {
    std::vector<double> pos;
    for (long c = 0; c < fit.data.n_cells(); ++c)
      if (fit.data.z[c] == 1) pos.push_back(fit.data.y[c]);
    if (pos.size() > 4) {
      double m = std::accumulate(pos.begin(), pos.end(), 0.0) / pos.size();
      double v = 0, lm = 0, lv = 0;
      for (double x : pos) {
        v += (x - m) * (x - m);
        lm += std::log(x);
      }
      v /= pos.size();
      lm /= pos.size();
      for (double x : pos) lv += (std::log(x) - lm) * (std::log(x) - lm);
      lv /= pos.size();
      if (v > 0) k0 = std::clamp(m * m / v, 0.5, 50.0);
      sd_logy = std::sqrt(std::max(lv, 1e-4));
    }
  }

  auto make_start = [&](double k, double gamma, double rho, double s_psi, double s_xi,
                        double alpha) {
    HurdleHyper h = base;
    h.k = k;
    if (!config.fix_gamma) h.gamma = gamma;
    h.psi = {rho, s_psi, alpha};
    h.xi = {rho * 0.8, s_xi, alpha};
    return layout.pack(h);
  };
  std::vector<Eigen::VectorXd> starts;
  starts.push_back(make_start(5.0, 0.1, med_dist / 2.0, 0.7, 0.3, 0.2));       // prior-centred
  starts.push_back(make_start(k0, 0.2, med_dist / 3.0, 1.0, 0.5 * sd_logy, 0.3));  // data-driven
  starts.push_back(make_start(k0 * 2.0, 0.0, med_dist, 0.4, sd_logy, 0.1));    // perturbed
  // Decoupled: gamma off, psi nearly flat, xi carrying the positive part.
  // Covers the mode where the shared field would otherwise be recruited by
  // the Gamma likelihood on weakly informative presence data.
  starts.push_back(make_start(k0, 0.0, med_dist / 3.0, 0.1, sd_logy, 0.1));
  starts.resize(std::clamp(config.n_starts, 1, static_cast<int>(starts.size())));

  FieldPrior psi_prior, xi_prior;
  BlockTriSolver solver;
  Eigen::VectorXd warm = Eigen::VectorXd::Zero(d.dim());
  NewtonResult last_newton;
  const HyperPrior hyper_prior = HyperPrior::make(config.regularize_hyper, med_dist);

  auto negative_marginal = [&](const Eigen::VectorXd& v) -> double {
    if (!layout.in_box(v)) return 1e30;
    HurdleHyper h = layout.unpack(v, base);
    try {
      psi_prior = make_field_prior(fit.data.sites, h.psi, h.nu);
      if (d.has_gamma) xi_prior = make_field_prior(fit.data.sites, h.xi, h.nu);
      last_newton = newton_mode(d, h, psi_prior, d.has_gamma ? &xi_prior : nullptr, warm, solver,
                                config.max_newton_iterations, config.newton_tol);
      warm = last_newton.mode;
      return -laplace_log_marginal(last_newton) -
             hyper_prior.log_density(h, psi_active, d.has_gamma);
    } catch (const numerical_error&) {
      return 1e30;
    } catch (const std::invalid_argument&) {
      return 1e30;
    }
  };

  optim::NelderMeadOptions nm;
  nm.max_evaluations = config.max_evaluations;
  nm.initial_step = 0.4;
  nm.x_tol = 1e-3;

  optim::NelderMeadResult best;
  for (const auto& s : starts) {
    warm.setZero();
    auto r = optim::nelder_mead(negative_marginal, s, nm);
    if (r.value < best.value) best = r;
  }

  optim::NelderMeadOptions polish;
  polish.max_evaluations = config.polish_evaluations;
  polish.initial_step = 0.08;
  polish.x_tol = 2e-4;
  auto polished = optim::nelder_mead(negative_marginal, best.x, polish);
  if (polished.value > best.value) polished = best;

  // Final evaluation pins all cached state (priors, solver, mode) to the optimum.
  double neg_marginal = negative_marginal(polished.x);
  if (neg_marginal >= 1e30)
    throw fit_error("fit_hurdle: inner Newton failed at the selected optimum");
  if (!last_newton.converged)
    throw fit_error("fit_hurdle: latent mode did not converge at the optimum");

  fit.hyper = layout.unpack(polished.x, base);
  fit.log_marginal = -neg_marginal;
  fit.converged = polished.converged || best.converged;
  fit.latent_mode = last_newton.mode;

  fit.beta_z = fit.latent_mode.segment(d.beta_z_at(0), d.p);
  if (d.has_gamma) fit.beta_y = fit.latent_mode.segment(d.beta_y_at(0), d.p);
  Eigen::VectorXd latent_sd = solver.diag_inverse().cwiseMax(0.0).cwiseSqrt();
  fit.beta_z_sd = latent_sd.segment(d.beta_z_at(0), d.p);
  if (d.has_gamma) fit.beta_y_sd = latent_sd.segment(d.beta_y_at(0), d.p);

  // Approximate hyperparameter SDs from the finite-difference Hessian of the
  // negative log marginal on the transformed scale.
  fit.hyper_sd.k = fit.hyper_sd.gamma = kNaN;
  fit.hyper_sd.psi = {kNaN, kNaN, kNaN};
  fit.hyper_sd.xi = {kNaN, kNaN, kNaN};
  fit.hessian_pd = false;
  if (config.compute_hyper_sd) {
    Eigen::MatrixXd H = optim::fd_hessian(negative_marginal, polished.x, 0.04);
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() == Eigen::Success) {
      fit.hessian_pd = true;
      Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(layout.size, layout.size));
      auto tsd = [&](int idx) { return idx >= 0 ? std::sqrt(std::max(0.0, cov(idx, idx))) : kNaN; };
      fit.hyper_sd.k = fit.hyper.k * tsd(layout.k);  // delta method through the transforms
      fit.hyper_sd.gamma = tsd(layout.gamma);
      fit.hyper_sd.psi.range = fit.hyper.psi.range * tsd(layout.rho_psi);
      fit.hyper_sd.psi.sigma = fit.hyper.psi.sigma * tsd(layout.sigma_psi);
      fit.hyper_sd.psi.alpha =
          (1.0 - fit.hyper.psi.alpha * fit.hyper.psi.alpha) * tsd(layout.alpha_psi);
      fit.hyper_sd.xi.range = fit.hyper.xi.range * tsd(layout.rho_xi);
      fit.hyper_sd.xi.sigma = fit.hyper.xi.sigma * tsd(layout.sigma_xi);
      fit.hyper_sd.xi.alpha =
          (1.0 - fit.hyper.xi.alpha * fit.hyper.xi.alpha) * tsd(layout.alpha_xi);
    }
    // Re-pin cached state to the optimum after the FD sweep.
    negative_marginal(polished.x);
  }

  fit.identifiability_warning =
      d.has_gamma && !config.fix_gamma &&
      std::fabs(fit.hyper.psi.range - fit.hyper.xi.range) <
          0.2 * std::max(fit.hyper.psi.range, fit.hyper.xi.range) &&
      std::isfinite(fit.hyper_sd.gamma) && fit.hyper_sd.gamma > std::fabs(fit.hyper.gamma);
  return fit;
}

namespace {

SummaryStat summarize(std::vector<double>& samples) {
  SummaryStat s;
  const std::size_t n = samples.size();
  double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double var = 0;
  for (double x : samples) var += (x - mean) * (x - mean);
  std::sort(samples.begin(), samples.end());
  auto quantile = [&](double q) {
    double pos = q * (n - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    double frac = pos - lo;
    return lo + 1 < n ? samples[lo] * (1 - frac) + samples[lo + 1] * frac : samples[lo];
  };
  s.mean = mean;
  s.sd = std::sqrt(var / (n > 1 ? n - 1 : 1));
  s.q025 = quantile(0.025);
  s.q975 = quantile(0.975);
  return s;
}

}  // namespace

namespace {

struct FieldConditional {
  Eigen::MatrixXd kriging;  // m_new x n
  Eigen::MatrixXd chol;     // Cholesky of the conditional innovation covariance
};

FieldConditional make_conditional(const std::vector<geo::LocalPoint>& data_sites,
                                  const std::vector<geo::LocalPoint>& new_sites,
                                  const FieldHyper& h, double nu, const Eigen::MatrixXd& Qs) {
  FieldConditional c;
  const int mn = static_cast<int>(new_sites.size());
  const int n = static_cast<int>(data_sites.size());
  auto params = gpfield::MaternParams::from_range(nu, h.range, h.sigma * h.sigma);
  Eigen::MatrixXd cross(mn, n);
  for (int a = 0; a < mn; ++a)
    for (int i = 0; i < n; ++i)
      cross(a, i) = gpfield::matern_cov(geo::distance(new_sites[a], data_sites[i]), params);
  Eigen::MatrixXd prior = gpfield::matern_covariance(new_sites, params);
  c.kriging = cross * Qs;
  Eigen::MatrixXd cond = prior - c.kriging * cross.transpose();
  cond.diagonal().array() += 1e-10 * params.sigma2;
  c.chol = gpfield::robust_llt(std::move(cond)).matrixL();
  return c;
}

// Gaussian approximation (plus new-site conditionals) at one hyperparameter
// configuration, ready to emit joint posterior samples.
struct HyperPointApprox {
  HurdleHyper hyper;
  double log_marginal{};
  int n_samples{};
  FieldPrior psi, xi;
  BlockTriSolver solver;
  NewtonResult newton;
  FieldConditional cond_psi, cond_xi;
};

}  // namespace

PosteriorSummary predict(const FitResult& fit, const PredictTargets& targets,
                         const PredictOptions& opt) {
  const Dataset& data = fit.data;
  Design d = make_design(data);
  const int n = d.n, T = d.T, p_raw = d.p - 1;
  const int m = static_cast<int>(targets.sites.size());
  if (m == 0) throw std::invalid_argument("predict: no target sites");
  if (targets.covariates.cols() != p_raw)
    throw std::invalid_argument("predict: covariate count differs from the training transform");
  if (targets.covariates.rows() != static_cast<long>(m) * T)
    throw std::invalid_argument("predict: covariates must have n_targets * n_times rows");
  const bool has_gamma = fit.has_gamma_part;

  Eigen::MatrixXd cov = targets.covariates;
  if (fit.standardization.applied)
    for (int j = 0; j < p_raw; ++j)
      cov.col(j) = (cov.col(j).array() - fit.standardization.mean[j]) / fit.standardization.sd[j];

  // Map each target to a training site, or mark it for field conditioning.
  std::vector<int> match(m, -1);
  std::vector<int> fresh_index(m, -1);
  std::vector<geo::LocalPoint> fresh_sites;
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < n; ++i) {
      if (geo::distance(targets.sites[j], data.sites[i]) < 1e-12) {
        match[j] = i;
        break;
      }
    }
    if (match[j] < 0) {
      fresh_index[j] = static_cast<int>(fresh_sites.size());
      fresh_sites.push_back(targets.sites[j]);
    }
  }

  // Hyperparameter configurations entering the predictive mixture. The
  // plug-in estimate alone understates uncertainty wherever the marginal
  // likelihood is flat, so by default the transformed hyperparameter axes are
  // probed outwards and the probed points weighted by their Laplace marginal
  // (a deterministic star design in the spirit of grid-based hyperparameter
  // integration).
  std::vector<std::unique_ptr<HyperPointApprox>> points;
  const HyperPrior hyper_prior =
      HyperPrior::make(fit.regularized_hyper, median_site_distance(data.sites));
  auto build_point = [&](const HurdleHyper& h) {
    auto pt = std::make_unique<HyperPointApprox>();
    pt->hyper = h;
    pt->psi = make_field_prior(data.sites, h.psi, h.nu);
    if (has_gamma) pt->xi = make_field_prior(data.sites, h.xi, h.nu);
    pt->newton = newton_mode(d, h, pt->psi, has_gamma ? &pt->xi : nullptr, fit.latent_mode,
                             pt->solver, 40, 1e-10);
    pt->log_marginal = laplace_log_marginal(pt->newton) +
                       hyper_prior.log_density(h, !fit.presence_degenerate, has_gamma);
    if (!fresh_sites.empty()) {
      pt->cond_psi = make_conditional(data.sites, fresh_sites, h.psi, h.nu, pt->psi.Qs);
      if (has_gamma)
        pt->cond_xi = make_conditional(data.sites, fresh_sites, h.xi, h.nu, pt->xi.Qs);
    }
    return pt;
  };

  points.push_back(build_point(fit.hyper));
  const double ref_marginal = points[0]->log_marginal;

  if (opt.integrate_hyper) {
    const HyperLayout layout = HyperLayout::make(fit.structure, has_gamma, fit.gamma_fixed,
                                                 !fit.presence_degenerate);
    const Eigen::VectorXd centre = layout.pack(fit.hyper);

    // Probe directions: every transformed axis, plus the within-field
    // (sigma, alpha) diagonals -- the stationary-variance trade-off
    // sigma^2/(1 - alpha^2) makes those pairs jointly flat, which per-axis
    // probing alone would miss.
    std::vector<Eigen::VectorXd> directions;
    for (int axis = 0; axis < layout.size; ++axis) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(layout.size);
      e[axis] = 1.0;
      directions.push_back(e);
    }
    auto add_diagonals = [&](int a, int b) {
      if (a < 0 || b < 0) return;
      for (double sign : {1.0, -1.0}) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(layout.size);
        e[a] = M_SQRT1_2;
        e[b] = sign * M_SQRT1_2;
        directions.push_back(e);
      }
    };
    add_diagonals(layout.sigma_psi, layout.alpha_psi);
    add_diagonals(layout.sigma_xi, layout.alpha_xi);

    // Seeded random unit directions pick up joint spread the axis star
    // misses; their value grows with the hyperparameter dimension.
    if (layout.size > 1) {
      Rng dir_rng(opt.seed ^ 0xd1ce5bd9e73chb1full);
      for (int r = 0; r < 2 * layout.size; ++r) {
        Eigen::VectorXd e(layout.size);
        for (int j = 0; j < layout.size; ++j) e[j] = dir_rng.normal();
        directions.push_back(e.normalized());
      }
    }

    for (const auto& direction : directions) {
      for (double dir : {1.0, -1.0}) {
        for (int step = 1; step <= opt.max_axis_steps; ++step) {
          Eigen::VectorXd theta = centre + dir * step * opt.axis_step * direction;
          if (!layout.in_box(theta)) break;
          std::unique_ptr<HyperPointApprox> pt;
          try {
            pt = build_point(layout.unpack(theta, fit.hyper));
          } catch (const std::exception&) {
            break;
          }
          const double drop = ref_marginal - pt->log_marginal;
          if (drop > opt.integration_drop) break;
          points.push_back(std::move(pt));
        }
      }
    }
  }

  // Allocate the sample budget across configurations by marginal weight.
  const int S = opt.n_samples;
  {
    double max_marg = ref_marginal;
    for (const auto& pt : points) max_marg = std::max(max_marg, pt->log_marginal);
    double total = 0;
    for (const auto& pt : points) total += std::exp(pt->log_marginal - max_marg);
    int assigned = 0;
    for (auto& pt : points) {
      pt->n_samples = static_cast<int>(std::floor(S * std::exp(pt->log_marginal - max_marg) / total));
      assigned += pt->n_samples;
    }
    points[0]->n_samples += S - assigned;  // remainder to the plug-in point
  }

  Rng rng(opt.seed);
  const long n_cells = static_cast<long>(m) * T;
  Eigen::MatrixXd pi_samp(S, n_cells), mu_samp(S, n_cells), eta_y_samp(S, n_cells);

  // AR(1) draw of the conditional remainder at the new sites, matching the
  // field's temporal structure.
  auto draw_conditional = [&](const FieldConditional& c, double alpha) {
    const int mn = static_cast<int>(fresh_sites.size());
    Eigen::MatrixXd e(mn, T);
    Eigen::VectorXd zvec(mn);
    for (int i = 0; i < mn; ++i) zvec[i] = rng.normal();
    e.col(0) = (c.chol * zvec) / std::sqrt(1.0 - alpha * alpha);
    for (int t = 1; t < T; ++t) {
      for (int i = 0; i < mn; ++i) zvec[i] = rng.normal();
      e.col(t) = alpha * e.col(t - 1) + c.chol * zvec;
    }
    return e;
  };

  // Under saturated presence data the Gaussian block cannot represent the
  // one-sided posterior of the z fixed effects; the z part is then evaluated
  // at its mode instead of sampled.
  const bool deterministic_z = fit.presence_degenerate;

  int s = 0;
  for (const auto& pt : points) {
    for (int rep = 0; rep < pt->n_samples; ++rep, ++s) {
      Eigen::VectorXd u = pt->newton.mode + pt->solver.sample(rng);
      if (deterministic_z)
        u.segment(d.beta_z_at(0), d.p) = pt->newton.mode.segment(d.beta_z_at(0), d.p);
      const auto beta_z = u.segment(d.beta_z_at(0), d.p);

      Eigen::MatrixXd psi_new, xi_new;
      if (!fresh_sites.empty()) {
        Eigen::MatrixXd psi_mat(n, T), xi_mat(n, T);
        for (int t = 0; t < T; ++t)
          for (int i = 0; i < n; ++i) {
            psi_mat(i, t) = u[d.psi_at(i, t)];
            if (has_gamma) xi_mat(i, t) = u[d.xi_at(i, t)];
          }
        psi_new = pt->cond_psi.kriging * psi_mat +
                  draw_conditional(pt->cond_psi, pt->hyper.psi.alpha);
        if (has_gamma)
          xi_new = pt->cond_xi.kriging * xi_mat +
                   draw_conditional(pt->cond_xi, pt->hyper.xi.alpha);
      }

      for (int t = 0; t < T; ++t) {
        for (int j = 0; j < m; ++j) {
          double psi_v, xi_v = 0.0;
          if (match[j] >= 0) {
            psi_v = u[d.psi_at(match[j], t)];
            if (has_gamma) xi_v = u[d.xi_at(match[j], t)];
          } else {
            psi_v = psi_new(fresh_index[j], t);
            if (has_gamma) xi_v = xi_new(fresh_index[j], t);
          }
          const long cell = static_cast<long>(t) * m + j;
          const auto x = cov.row(cell);
          double eta_z = beta_z[0] + x.dot(beta_z.tail(p_raw)) + psi_v;
          pi_samp(s, cell) = sigmoid(eta_z);
          if (has_gamma) {
            const auto beta_y = u.segment(d.beta_y_at(0), d.p);
            double eta_y =
                beta_y[0] + x.dot(beta_y.tail(p_raw)) + pt->hyper.gamma * psi_v + xi_v;
            mu_samp(s, cell) = std::exp(eta_y);
            eta_y_samp(s, cell) = eta_y;
          } else {
            mu_samp(s, cell) = kNaN;
            eta_y_samp(s, cell) = 0.0;
          }
        }
      }
    }
  }

  PosteriorSummary out;
  out.pi.resize(n_cells);
  out.mu.resize(n_cells);
  out.hurdle_mean.resize(n_cells);
  out.sd_log_mu.resize(n_cells);
  std::vector<double> buf(S);
  for (long c = 0; c < n_cells; ++c) {
    for (int s = 0; s < S; ++s) buf[s] = pi_samp(s, c);
    out.pi[c] = summarize(buf);
    if (has_gamma) {
      for (int s = 0; s < S; ++s) buf[s] = mu_samp(s, c);
      out.mu[c] = summarize(buf);
      for (int s = 0; s < S; ++s) buf[s] = pi_samp(s, c) * mu_samp(s, c);
      out.hurdle_mean[c] = summarize(buf);
      double lm = eta_y_samp.col(c).mean();
      out.sd_log_mu[c] = std::sqrt((eta_y_samp.col(c).array() - lm).square().sum() / (S - 1));
    } else {
      out.mu[c] = {kNaN, kNaN, kNaN, kNaN};
      out.hurdle_mean[c] = {kNaN, kNaN, kNaN, kNaN};
      out.sd_log_mu[c] = 0.0;
    }
  }
  out.masked = metrics::mask_uncertain(out.sd_log_mu, opt.mask_sd_threshold);
  if (opt.keep_samples) {
    out.pi_samples = std::move(pi_samp);
    out.mu_samples = std::move(mu_samp);
  }
  return out;
}

Dataset aggregate_cells(const Dataset& input, double cell_lon, double cell_lat) {
  input.validate();
  const int n = input.n_sites(), T = input.n_times;
  const int p = static_cast<int>(input.covariates.cols());

  // Group sites: per-site when cell sizes are non-positive, else lon/lat cells.
  std::map<std::pair<long, long>, std::vector<int>> groups;
  for (int i = 0; i < n; ++i) {
    std::pair<long, long> key;
    if (cell_lon > 0 && cell_lat > 0)
      key = {static_cast<long>(std::floor(input.sites[i].x / cell_lon)),
             static_cast<long>(std::floor(input.sites[i].y / cell_lat))};
    else
      key = {i, 0};
    groups[key].push_back(i);
  }

  Dataset out;
  out.n_times = 1;
  out.cov_names = input.cov_names;
  std::vector<Eigen::VectorXd> cov_rows;
  std::vector<double> responses;

  for (const auto& [key, members] : groups) {
    double resp_sum = 0;
    long resp_count = 0;
    Eigen::VectorXd cov_sum = Eigen::VectorXd::Zero(p);
    long cov_count = 0;
    for (int i : members) {
      for (int t = 0; t < T; ++t) {
        const long c = input.cell(i, t);
        cov_sum += input.covariates.row(c).transpose();
        ++cov_count;
        if (input.z[c] < 0) continue;
        resp_sum += input.z[c] == 1 ? input.y[c] : 0.0;
        ++resp_count;
      }
    }
    if (resp_count == 0) continue;  // nothing observed in this cell

    geo::LocalPoint site;
    if (cell_lon > 0 && cell_lat > 0)
      site = {(key.first + 0.5) * cell_lon, (key.second + 0.5) * cell_lat};
    else
      site = input.sites[members.front()];
    out.sites.push_back(site);
    out.site_ids.push_back(members.size() == 1 && !input.site_ids.empty()
                               ? input.site_ids[members.front()]
                               : "cell_" + std::to_string(key.first) + "_" + std::to_string(key.second));
    cov_rows.push_back(cov_sum / cov_count);
    responses.push_back(resp_sum / resp_count);
  }

  const int m = static_cast<int>(out.sites.size());
  out.covariates.resize(m, p);
  out.z.resize(m);
  out.y = Eigen::VectorXd::Constant(m, kNaN);
  for (int i = 0; i < m; ++i) {
    out.covariates.row(i) = cov_rows[i].transpose();
    out.z[i] = responses[i] > 0 ? 1 : 0;
    if (responses[i] > 0) out.y[i] = responses[i];
  }
  return out;
}

ComparisonResult time_averaged_comparison(const FitResult& st_fit, const FitResult& sp_fit,
                                          const LatentTruth& truth, int n_samples,
                                          std::uint64_t seed) {
  const int n = static_cast<int>(truth.pi.rows());
  const int T = static_cast<int>(truth.pi.cols());
  if (st_fit.data.n_sites() != n || sp_fit.data.n_sites() != n)
    throw std::invalid_argument("time_averaged_comparison: fits and truth cover different sites");
  for (int i = 0; i < n; ++i)
    if (geo::distance(st_fit.data.sites[i], sp_fit.data.sites[i]) > 1e-9)
      throw std::invalid_argument("time_averaged_comparison: site mismatch between fits");

  ComparisonResult out;
  out.truth = (truth.pi.array() * truth.mu.array()).rowwise().mean();

  auto targets_of = [](const FitResult& fit) {
    PredictTargets t;
    t.sites = fit.data.sites;
    t.covariates = fit.data.covariates;
    if (fit.standardization.applied) {
      // predict() re-applies the transform, so hand back the raw scale.
      for (int j = 0; j < t.covariates.cols(); ++j)
        t.covariates.col(j) =
            t.covariates.col(j).array() * fit.standardization.sd[j] + fit.standardization.mean[j];
    }
    return t;
  };

  PredictOptions popt;
  popt.n_samples = n_samples;
  popt.keep_samples = true;
  popt.seed = seed;
  PosteriorSummary st = predict(st_fit, targets_of(st_fit), popt);
  popt.seed = seed + 1;
  PosteriorSummary sp = predict(sp_fit, targets_of(sp_fit), popt);

  auto per_site = [&](const PosteriorSummary& s, int times, Eigen::VectorXd& mean,
                      Eigen::VectorXd& lo, Eigen::VectorXd& hi) {
    mean.resize(n);
    lo.resize(n);
    hi.resize(n);
    std::vector<double> buf(n_samples);
    for (int i = 0; i < n; ++i) {
      for (int s_ix = 0; s_ix < n_samples; ++s_ix) {
        double acc = 0;
        for (int t = 0; t < times; ++t) {
          long c = static_cast<long>(t) * n + i;
          acc += s.pi_samples(s_ix, c) * s.mu_samples(s_ix, c);
        }
        buf[s_ix] = acc / times;
      }
      SummaryStat stat = summarize(buf);
      mean[i] = stat.mean;
      lo[i] = stat.q025;
      hi[i] = stat.q975;
    }
  };
  per_site(st, T, out.st_mean, out.st_lo, out.st_hi);
  per_site(sp, 1, out.sp_mean, out.sp_lo, out.sp_hi);

  out.st_score = metrics::score(std::span(out.truth.data(), n), std::span(out.st_mean.data(), n),
                                std::span(out.st_lo.data(), n), std::span(out.st_hi.data(), n));
  out.sp_score = metrics::score(std::span(out.truth.data(), n), std::span(out.sp_mean.data(), n),
                                std::span(out.sp_lo.data(), n), std::span(out.sp_hi.data(), n));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset CSV interface
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_dataset_csv(const Dataset& data, const std::string& path) {
  data.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "site_id,lon,lat,t,z,y";
  for (int j = 0; j < data.covariates.cols(); ++j)
    out << ',' << (j < static_cast<int>(data.cov_names.size()) ? data.cov_names[j]
                                                               : "cov_" + std::to_string(j + 1));
  out << '\n';
  for (int t = 0; t < data.n_times; ++t) {
    for (int i = 0; i < data.n_sites(); ++i) {
      const long c = data.cell(i, t);
      out << (data.site_ids.empty() ? "s" + std::to_string(i + 1) : data.site_ids[i]) << ','
          << format_value(data.sites[i].x) << ',' << format_value(data.sites[i].y) << ','
          << (t + 1) << ',';
      if (data.z[c] >= 0) out << static_cast<int>(data.z[c]);
      out << ',';
      if (data.z[c] == 1) out << format_value(data.y[c]);
      for (int j = 0; j < data.covariates.cols(); ++j)
        out << ',' << format_value(data.covariates(c, j));
      out << '\n';
    }
  }
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw parse_error("missing header", 1);
  auto header = split_line(line);
  if (header.size() < 6 || header[0] != "site_id" || header[3] != "t" || header[4] != "z" ||
      header[5] != "y")
    throw parse_error("expected header site_id,lon,lat,t,z,y,cov_*", 1);
  const int p = static_cast<int>(header.size()) - 6;

  struct Row {
    std::string id;
    double lon, lat;
    int t;
    signed char z;
    double y;
    std::vector<double> cov;
  };
  std::vector<Row> rows;
  std::map<std::string, int> site_index;
  std::vector<std::string> site_order;
  int t_max = 0;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (static_cast<int>(cells.size()) != 6 + p) throw parse_error("wrong column count", lineno);
    Row r;
    r.id = cells[0];
    try {
      r.lon = std::stod(cells[1]);
      r.lat = std::stod(cells[2]);
      r.t = std::stoi(cells[3]);
      r.z = cells[4].empty() ? -1 : static_cast<signed char>(std::stoi(cells[4]));
      r.y = cells[5].empty() ? kNaN : std::stod(cells[5]);
      for (int j = 0; j < p; ++j) r.cov.push_back(std::stod(cells[6 + j]));
    } catch (const std::exception&) {
      throw parse_error("cannot parse row", lineno);
    }
    if (r.t < 1) throw parse_error("t must be >= 1", lineno);
    t_max = std::max(t_max, r.t);
    if (!site_index.count(r.id)) {
      site_index[r.id] = static_cast<int>(site_order.size());
      site_order.push_back(r.id);
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw data_error("dataset CSV holds no rows");

  Dataset data;
  data.n_times = t_max;
  const int n = static_cast<int>(site_order.size());
  data.sites.resize(n);
  data.site_ids = site_order;
  for (int j = 0; j < p; ++j) data.cov_names.push_back(header[6 + j]);
  data.covariates = Eigen::MatrixXd::Zero(static_cast<long>(n) * t_max, p);
  data.z.assign(static_cast<long>(n) * t_max, -1);
  data.y = Eigen::VectorXd::Constant(static_cast<long>(n) * t_max, kNaN);

  std::vector<bool> site_seen(n, false);
  for (const auto& r : rows) {
    const int i = site_index[r.id];
    if (!site_seen[i]) {
      data.sites[i] = {r.lon, r.lat};
      site_seen[i] = true;
    } else if (std::fabs(data.sites[i].x - r.lon) > 1e-9 ||
               std::fabs(data.sites[i].y - r.lat) > 1e-9) {
      throw data_error("site '" + r.id + "' appears with conflicting coordinates");
    }
    const long c = data.cell(i, r.t - 1);
    if (data.z[c] != -1) throw data_error("duplicate (site, t) row for '" + r.id + "'");
    data.z[c] = r.z;
    data.y[c] = r.z == 1 ? r.y : kNaN;
    for (int j = 0; j < p; ++j) data.covariates(c, j) = r.cov[j];
  }
  data.validate();
  return data;
}

void write_truth_csv(const Dataset& data, const LatentTruth& truth, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "site_id,lon,lat,t,psi,xi,pi,mu\n";
  for (int t = 0; t < data.n_times; ++t)
    for (int i = 0; i < data.n_sites(); ++i)
      out << (data.site_ids.empty() ? "s" + std::to_string(i + 1) : data.site_ids[i]) << ','
          << format_value(data.sites[i].x) << ',' << format_value(data.sites[i].y) << ','
          << (t + 1) << ',' << format_value(truth.psi(i, t)) << ',' << format_value(truth.xi(i, t))
          << ',' << format_value(truth.pi(i, t)) << ',' << format_value(truth.mu(i, t)) << '\n';
}

LatentTruth read_truth_csv(const std::string& path, const Dataset& data) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw parse_error("missing header", 1);

  std::map<std::string, int> site_index;
  for (int i = 0; i < data.n_sites(); ++i)
    site_index[data.site_ids.empty() ? "s" + std::to_string(i + 1) : data.site_ids[i]] = i;

  LatentTruth truth;
  truth.psi.setConstant(data.n_sites(), data.n_times, kNaN);
  truth.xi.setConstant(data.n_sites(), data.n_times, kNaN);
  truth.pi.setConstant(data.n_sites(), data.n_times, kNaN);
  truth.mu.setConstant(data.n_sites(), data.n_times, kNaN);

  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != 8) throw parse_error("expected 8 columns", lineno);
    auto it = site_index.find(cells[0]);
    if (it == site_index.end()) throw data_error("truth CSV site '" + cells[0] + "' not in dataset");
    int t = std::stoi(cells[3]) - 1;
    if (t < 0 || t >= data.n_times) throw parse_error("t out of range", lineno);
    truth.psi(it->second, t) = std::stod(cells[4]);
    truth.xi(it->second, t) = std::stod(cells[5]);
    truth.pi(it->second, t) = std::stod(cells[6]);
    truth.mu(it->second, t) = std::stod(cells[7]);
  }
  return truth;
}

}  // namespace driftcov::hurdle
