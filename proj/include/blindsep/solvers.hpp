#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "blindsep/types.hpp"

namespace blindsep {

struct SolverParams {
  double lambda = 1e-3;      // l1 weight
  double mu = 0.0;           // temporal smoothness weight
  double rho = 0.1;          // multiplier step for the splitting solver
  int admm_iters = 30;
  double inner_tol = 1e-6;   // KKT residual target of the inner engine
  int inner_max_iters = 2000;

  void validate() const {
    check_param(lambda >= 0.0, "lambda must be nonnegative");
    check_param(mu >= 0.0, "mu must be nonnegative");
    check_param(rho >= 0.0, "rho must be nonnegative");
    check_param(admm_iters >= 1, "admm_iters must be positive");
    check_param(inner_tol > 0.0, "inner_tol must be positive");
    check_param(inner_max_iters >= 1, "inner_max_iters must be positive");
  }
};

// Magnitude shrinkage; keeps the phase, exact zero at or below tau.
inline cxd soft_threshold(cxd v, double tau) {
  const double m = std::abs(v);
  if (m <= tau) return {0.0, 0.0};
  return v * ((m - tau) / m);
}

struct SparseSolution {
  SignalMatrix signal;
  std::vector<double> objective_trace;
  std::vector<double> residual_trace;
};

struct MultiplierSet {
  CMatrix alphas;  // one column per coupling constraint, horizon-1 of them

  static MultiplierSet ones(Eigen::Index n_sources, Eigen::Index horizon) {
    MultiplierSet m;
    m.alphas = CMatrix::Ones(n_sources, std::max<Eigen::Index>(horizon - 1, 0));
    return m;
  }
};

// Shared per-dictionary factorization work: Gram matrix, correlation targets
// and the gradient Lipschitz constant, reused across all column solves.
struct GramCache {
  CMatrix gram;     // H^H H
  CMatrix targets;  // H^H Y
  RVector col_sq;   // per-column ‖y‖²
  double two_lmax;  // 2 * lambda_max(gram)

  GramCache(const ChannelMatrix& h, const CMatrix& y) {
    check_dims(h.rows() == y.rows(), "channel/observation row mismatch");
    gram = h.adjoint() * h;
    targets = h.adjoint() * y;
    col_sq = y.colwise().squaredNorm().real();
    Eigen::SelfAdjointEigenSolver<CMatrix> es(gram, Eigen::EigenvaluesOnly);
    two_lmax = 2.0 * es.eigenvalues().maxCoeff();
  }
};

// One l1-regularized quadratic column problem,
//   minimize ‖y - Hx‖² + kappa ‖x - z‖² + Re(c^H x) + tau ‖x‖₁,
// expressed through the cached Gram form. z and c are optional.
struct ProxSpec {
  const CMatrix* gram = nullptr;
  const CVector* target = nullptr;  // H^H y
  double y_sq = 0.0;
  double tau = 0.0;
  double kappa = 0.0;
  const CVector* z = nullptr;
  const CVector* lin = nullptr;
  double two_lmax = 0.0;  // 2 * lambda_max(gram)
};

struct ProxResult {
  CVector x;
  double objective = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;  // objective per visited iterate when recorded
};

// Accelerated proximal gradient with the fixed step 1/L,
// L = 2 lambda_max(G) + 2 kappa.  Each trial point is the usual
// soft-threshold step from an extrapolation of the two latest accepted
// iterates; a trial is accepted only when it does not raise the objective,
// so the accepted sequence descends, and momentum restarts whenever the
// extrapolation opposes the latest move.  G y is carried as a linear
// combination of cached exact products, one matvec per iteration.
// Stops once the accepted iterate's first-order optimality residual
//   max_j { |g_j| - tau        if x_j = 0
//         { |g_j + tau x_j/|x_j||  otherwise
// drops to tol, g being the gradient of the smooth part at a fresh matvec.
inline ProxResult prox_solve(const ProxSpec& spec, CVector x0, double tol,
                             int max_iters, bool record_trace = false) {
  const CMatrix& g_mat = *spec.gram;
  const CVector& b = *spec.target;
  const Eigen::Index n = g_mat.rows();
  check_dims(x0.size() == n, "prox warm start has wrong length");

  const double lip = spec.two_lmax + 2.0 * spec.kappa;
  if (!(lip > 0.0)) throw numerical_error("prox problem has no curvature");
  const double step = 1.0 / lip;

  auto gradient = [&](const CVector& x, const CVector& gx, CVector& g) {
    g = 2.0 * (gx - b);
    if (spec.kappa > 0.0) g += 2.0 * spec.kappa * (x - *spec.z);
    if (spec.lin) g += *spec.lin;
  };
  auto kkt = [&](const CVector& x, const CVector& g) {
    double resid = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double gm = std::abs(g[j]);
      const double m = std::abs(x[j]);
      const double v = (m == 0.0) ? std::max(0.0, gm - spec.tau)
                                  : std::abs(g[j] + spec.tau * x[j] / m);
      resid = std::max(resid, v);
    }
    return resid;
  };
  auto objective = [&](const CVector& x, const CVector& gx) {
    double obj = spec.y_sq - 2.0 * b.dot(x).real() + gx.dot(x).real() +
                 spec.tau * x.cwiseAbs().sum();
    if (spec.kappa > 0.0) obj += spec.kappa * (x - *spec.z).squaredNorm();
    if (spec.lin) obj += spec.lin->dot(x).real();
    return obj;
  };

  ProxResult out;
  out.x = std::move(x0);
  CVector grad(n);
  CVector gx = g_mat * out.x;
  gradient(out.x, gx, grad);
  out.kkt_residual = kkt(out.x, grad);
  out.objective = objective(out.x, gx);
  if (record_trace) out.trace.push_back(out.objective);
  if (out.kkt_residual <= tol) {
    out.converged = true;
    return out;
  }

  CVector x_prev = out.x, gx_prev = gx;
  CVector y = out.x, gy = gx;
  CVector z(n), gz(n);
  double t = 1.0;
  bool plain = true;  // y equals the accepted iterate, trial is a plain step

  for (int iter = 1; iter <= max_iters; ++iter) {
    gradient(y, gy, grad);
    for (Eigen::Index j = 0; j < n; ++j)
      z[j] = soft_threshold(y[j] - step * grad[j], step * spec.tau);
    gz.noalias() = g_mat * z;

    const double obj_z = objective(z, gz);
    const bool restart = (y - z).dot(z - out.x).real() > 0.0;
    const bool accept = plain || obj_z <= out.objective;

    x_prev.swap(out.x);
    gx_prev.swap(gx);
    if (accept) {
      out.x = z;
      gx = gz;
      out.objective = obj_z;
      gradient(out.x, gx, grad);
      out.kkt_residual = kkt(out.x, grad);
    } else {
      out.x = x_prev;
      gx = gx_prev;
    }
    out.iterations = iter;
    if (record_trace) out.trace.push_back(out.objective);
    if (out.kkt_residual <= tol) {
      out.converged = true;
      break;
    }

    if (!accept || restart) {
      y = out.x;
      gy = gx;
      t = 1.0;
      plain = true;
    } else {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      const double a = t / t_next;
      const double c = (t - 1.0) / t_next;
      y = out.x + a * (z - out.x) + c * (out.x - x_prev);
      gy = gx + a * (gz - gx) + c * (gx - gx_prev);
      t = t_next;
      plain = false;
    }
  }
  return out;
}

// minimize (1/2)‖y - Hx‖² + lambda ‖x‖₁
inline CVector lasso_column(const ChannelMatrix& h, const CVector& y,
                            double lambda, const SolverParams& params) {
  params.validate();
  check_param(lambda >= 0.0, "lambda must be nonnegative");
  check_dims(h.rows() == y.size(), "channel/observation row mismatch");
  GramCache cache(h, y);
  ProxSpec spec;
  spec.gram = &cache.gram;
  CVector b = cache.targets.col(0);
  spec.target = &b;
  spec.y_sq = cache.col_sq[0];
  spec.tau = 2.0 * lambda;  // engine carries the doubled fidelity
  spec.two_lmax = cache.two_lmax;
  ProxResult r = prox_solve(spec, CVector::Zero(h.cols()), params.inner_tol,
                            params.inner_max_iters);
  if (!r.converged)
    throw convergence_error("lasso_column did not reach the KKT tolerance in " +
                                std::to_string(params.inner_max_iters) +
                                " iterations",
                            std::move(r.x), r.kkt_residual);
  return r.x;
}

struct OmpStop {
  int max_atoms = 1;
  double residual_tol = 0.0;  // ignored unless positive
};

// Greedy correlation pursuit, re-fitting least squares on the grown support.
inline CVector omp_column(const ChannelMatrix& h, const CVector& y,
                          const OmpStop& stop) {
  const Eigen::Index m = h.rows(), n = h.cols();
  check_dims(m == y.size(), "channel/observation row mismatch");
  check_param(stop.max_atoms >= 1, "omp needs at least one atom");
  check_param(stop.max_atoms <= std::min(m, n),
              "omp sparsity cannot exceed min(sensors, sources)");

  std::vector<int> support;
  std::vector<char> used(static_cast<size_t>(n), 0);
  CVector residual = y;
  CVector coeffs;
  CMatrix panel(m, stop.max_atoms);

  while (true) {
    int best = -1;
    double best_corr = -1.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (used[static_cast<size_t>(j)]) continue;
      const double c = std::abs(h.col(j).dot(residual));
      if (c > best_corr) {
        best_corr = c;
        best = static_cast<int>(j);
      }
    }
    used[static_cast<size_t>(best)] = 1;
    support.push_back(best);
    panel.col(static_cast<Eigen::Index>(support.size()) - 1) = h.col(best);

    auto active = panel.leftCols(static_cast<Eigen::Index>(support.size()));
    Eigen::ColPivHouseholderQR<CMatrix> qr(active);
    if (qr.rank() < static_cast<Eigen::Index>(support.size()))
      throw numerical_error("omp selected a rank-deficient sub-dictionary");
    coeffs = qr.solve(y);
    residual = y - active * coeffs;

    if (static_cast<int>(support.size()) >= stop.max_atoms) break;
    if (stop.residual_tol > 0.0 && residual.norm() <= stop.residual_tol) break;
  }

  CVector x = CVector::Zero(n);
  for (size_t i = 0; i < support.size(); ++i)
    x[support[i]] = coeffs[static_cast<Eigen::Index>(i)];
  return x;
}

// ‖Y - HX‖_F² + lambda Σ_t ‖x(t)‖₁ + mu Σ_{t>=2} ‖x(t) - x(t-1)‖²
inline double smooth_lasso_objective(const ChannelMatrix& h,
                                     const SignalMatrix& x, const CMatrix& y,
                                     double lambda, double mu) {
  check_dims(h.cols() == x.rows() && h.rows() == y.rows() &&
                 x.cols() == y.cols(),
             "smooth lasso objective dimension mismatch");
  check_param(lambda >= 0.0 && mu >= 0.0, "weights must be nonnegative");
  double obj = (y - h * x).squaredNorm() + lambda * x.cwiseAbs().sum();
  for (Eigen::Index t = 1; t < x.cols(); ++t)
    obj += mu * (x.col(t) - x.col(t - 1)).squaredNorm();
  return obj;
}

// Sequential pass: column t is solved with column t-1 frozen, so each
// subproblem is  ‖y(t) - Hx‖² + lambda ‖x‖₁ + mu ‖x - x(t-1)‖²  and the first
// column is a plain lasso. objective_trace holds the per-column subproblem
// values at their solutions.
inline SparseSolution smooth_lasso_seq(const ChannelMatrix& h, const CMatrix& y,
                                       const SolverParams& params) {
  params.validate();
  const Eigen::Index n = h.cols(), horizon = y.cols();
  GramCache cache(h, y);

  SparseSolution sol;
  sol.signal = SignalMatrix::Zero(n, horizon);
  sol.objective_trace.reserve(static_cast<size_t>(horizon));

  CVector prev = CVector::Zero(n);
  for (Eigen::Index t = 0; t < horizon; ++t) {
    ProxSpec spec;
    spec.gram = &cache.gram;
    CVector b = cache.targets.col(t);
    spec.target = &b;
    spec.y_sq = cache.col_sq[t];
    spec.tau = params.lambda;
    spec.two_lmax = cache.two_lmax;
    if (t > 0) {
      spec.kappa = params.mu;
      spec.z = &prev;
    }
    ProxResult r = prox_solve(spec, prev, params.inner_tol,
                              params.inner_max_iters);
    if (!r.converged)
      throw convergence_error("smooth_lasso_seq stalled at column " +
                                  std::to_string(t),
                              std::move(r.x), r.kkt_residual);
    sol.signal.col(t) = r.x;
    sol.objective_trace.push_back(r.objective);
    prev = r.x;
  }
  return sol;
}

// Splitting solver over copies x'(t) of x(t), t = 1..T-1, with the smoothness
// term rewritten as mu Σ ‖x(t) - x'(t-1)‖² and the copy constraints enforced
// by multipliers a(t) and the penalty rho ‖x(t) - x'(t)‖². Each sweep solves
// the per-column subproblems in the cached Gram form:
//   t = 1:       ‖y(1) - Hx‖² + lambda‖x‖₁ + Re(a(1)^H x) + rho‖x - x'(1)‖²
//   1 < t < T:   ‖y(t) - Hx‖² + lambda‖x‖₁ + Re(a(t)^H x)
//                  + mu‖x - x'(t-1)‖² + rho‖x - x'(t)‖²
//   t = T:       ‖y(T) - Hx‖² + lambda‖x‖₁ + mu‖x - x'(T-1)‖²
// (the two quadratic couplings of the middle rows fold into one of weight
// mu+rho around the blended center (mu x'(t-1) + rho x'(t))/(mu+rho)), then
// refreshes the copies at their exact minimizers,
//   x'(t) = (mu x(t+1) + rho x(t) + a(t)/2) / (mu+rho),
// and ascends the multipliers on the copy constraints,
//   a(t) += rho (x(t) - x'(t)).
// At a fixed point x'(t) = x(t), a(t) = 2mu (x(t) - x(t+1)) and the columns
// satisfy the stationarity conditions of the joint smooth lasso objective.
// residual_trace records the constraint gap max_t ‖x(t) - x'(t)‖ against the
// copies each sweep actually consumed; objective_trace records the smooth
// lasso objective.
inline SparseSolution smooth_lasso_admm(const ChannelMatrix& h, const CMatrix& y,
                                        const SolverParams& params,
                                        const MultiplierSet* init = nullptr) {
  params.validate();
  const Eigen::Index n = h.cols(), horizon = y.cols();
  check_dims(h.rows() == y.rows(), "channel/observation row mismatch");
  GramCache cache(h, y);

  SparseSolution sol;
  sol.signal = SignalMatrix::Zero(n, horizon);

  int current_sweep = 0;  // 0 marks the bootstrap pass
  auto solve_col = [&](Eigen::Index t, double kappa, const CVector* z,
                       const CVector* lin, const CVector& warm, bool budgeted) {
    ProxSpec spec;
    spec.gram = &cache.gram;
    CVector b = cache.targets.col(t);
    spec.target = &b;
    spec.y_sq = cache.col_sq[t];
    spec.tau = params.lambda;
    spec.kappa = kappa;
    spec.z = z;
    spec.lin = lin;
    spec.two_lmax = cache.two_lmax;
    ProxResult r =
        prox_solve(spec, warm, params.inner_tol, params.inner_max_iters);
    if (!r.converged && !budgeted)
      throw convergence_error("smooth_lasso_admm stalled at iteration " +
                                  std::to_string(current_sweep) + ", column " +
                                  std::to_string(t),
                              std::move(r.x), r.kkt_residual);
    return r;
  };

  if (horizon == 1) {
    ProxResult r = solve_col(0, 0.0, nullptr, nullptr, CVector::Zero(n), false);
    sol.signal.col(0) = r.x;
    sol.objective_trace.push_back(
        smooth_lasso_objective(h, sol.signal, y, params.lambda, params.mu));
    return sol;
  }

  check_param(params.rho > 0.0, "splitting solver needs rho > 0");
  const double w = params.mu + params.rho;

  CMatrix alphas;
  if (init) {
    check_dims(init->alphas.rows() == n && init->alphas.cols() == horizon - 1,
               "multiplier set has wrong shape");
    alphas = init->alphas;
  } else {
    alphas = CMatrix::Ones(n, horizon - 1);
  }

  // Bootstrap with an uncoupled pass so the copies start near plausible
  // signal values instead of zero.
  for (Eigen::Index t = 0; t < horizon; ++t)
    sol.signal.col(t) =
        solve_col(t, 0.0, nullptr, nullptr, CVector::Zero(n), true).x;
  CMatrix copies(n, horizon - 1);
  for (Eigen::Index k = 0; k + 1 < horizon; ++k)
    copies.col(k) = (params.mu * sol.signal.col(k + 1) +
                     params.rho * sol.signal.col(k) + 0.5 * alphas.col(k)) /
                    w;

  CVector z_buf(n), lin_buf(n);
  for (int sweep = 0; sweep < params.admm_iters; ++sweep) {
    current_sweep = sweep + 1;
    for (Eigen::Index t = 0; t < horizon; ++t) {
      if (t == 0) {
        z_buf = copies.col(0);
        lin_buf = alphas.col(0);
        sol.signal.col(0) = solve_col(0, params.rho, &z_buf, &lin_buf,
                                      sol.signal.col(0), false)
                                .x;
      } else if (t < horizon - 1) {
        z_buf = (params.mu * copies.col(t - 1) + params.rho * copies.col(t)) / w;
        lin_buf = alphas.col(t);
        sol.signal.col(t) =
            solve_col(t, w, &z_buf, &lin_buf, sol.signal.col(t), false).x;
      } else {
        z_buf = copies.col(t - 1);
        sol.signal.col(t) =
            solve_col(t, params.mu, &z_buf, nullptr, sol.signal.col(t), false)
                .x;
      }
    }

    double gap = 0.0;
    for (Eigen::Index k = 0; k + 1 < horizon; ++k)
      gap = std::max(gap, (sol.signal.col(k) - copies.col(k)).norm());
    sol.residual_trace.push_back(gap);

    for (Eigen::Index k = 0; k + 1 < horizon; ++k) {
      copies.col(k) = (params.mu * sol.signal.col(k + 1) +
                       params.rho * sol.signal.col(k) + 0.5 * alphas.col(k)) /
                      w;
      alphas.col(k) += params.rho * (sol.signal.col(k) - copies.col(k));
    }

    sol.objective_trace.push_back(
        smooth_lasso_objective(h, sol.signal, y, params.lambda, params.mu));
  }
  return sol;
}

}  // namespace blindsep
