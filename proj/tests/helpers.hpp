#pragma once

// Reference implementations used as oracles. These deliberately avoid the
// library's solver engine: the lasso oracle is coordinate descent, the
// smooth-objective oracle minimizes over all columns jointly, and the chain
// smoother oracle enumerates every state sequence.

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "blindsep/types.hpp"

namespace oracle {

using blindsep::CMatrix;
using blindsep::CVector;
using blindsep::cxd;

inline cxd shrink(cxd v, double tau) {
  double m = std::abs(v);
  return m <= tau ? cxd(0, 0) : v * ((m - tau) / m);
}

// minimize (1/2)‖y - Hx‖² + lambda‖x‖₁ by cyclic coordinate descent.
inline CVector cd_lasso(const CMatrix& h, const CVector& y, double lambda,
                        int max_sweeps = 100000, double tol = 1e-13) {
  const Eigen::Index n = h.cols();
  CVector x = CVector::Zero(n);
  CVector r = y;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double delta = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double hh = h.col(j).squaredNorm();
      if (hh == 0.0) continue;
      const cxd corr = h.col(j).dot(r) + hh * x[j];
      const cxd xj = shrink(corr, lambda) / hh;
      if (xj != x[j]) {
        r += h.col(j) * (x[j] - xj);
        delta = std::max(delta, std::abs(xj - x[j]));
        x[j] = xj;
      }
    }
    if (delta < tol) break;
  }
  return x;
}

// First-order optimality residual of (1/2)‖y - Hx‖² + lambda‖x‖₁.
inline double lasso_kkt(const CMatrix& h, const CVector& y, double lambda,
                        const CVector& x) {
  CVector corr = h.adjoint() * (y - h * x);
  double resid = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double m = std::abs(x[j]);
    const double v = (m == 0.0)
                         ? std::max(0.0, std::abs(corr[j]) - lambda)
                         : std::abs(corr[j] - lambda * x[j] / m);
    resid = std::max(resid, v);
  }
  return resid;
}

// High-accuracy minimizer of
//   ‖Y - HX‖_F² + lambda Σ‖x(t)‖₁ + mu Σ‖x(t) - x(t-1)‖²
// by proximal gradient over all columns at once.
inline CMatrix joint_smooth_lasso(const CMatrix& h, const CMatrix& y,
                                  double lambda, double mu,
                                  int max_iters = 400000, double tol = 1e-13) {
  const Eigen::Index n = h.cols(), horizon = y.cols();
  const CMatrix gram = h.adjoint() * h;
  const CMatrix hy = h.adjoint() * y;
  Eigen::SelfAdjointEigenSolver<CMatrix> es(gram, Eigen::EigenvaluesOnly);
  const double lip = 2.0 * es.eigenvalues().maxCoeff() + 8.0 * mu;
  const double step = 1.0 / lip;

  CMatrix x = CMatrix::Zero(n, horizon);
  CMatrix grad(n, horizon);
  for (int it = 0; it < max_iters; ++it) {
    grad = 2.0 * (gram * x - hy);
    for (Eigen::Index t = 0; t < horizon; ++t) {
      if (t > 0) grad.col(t) += 2.0 * mu * (x.col(t) - x.col(t - 1));
      if (t + 1 < horizon) grad.col(t) -= 2.0 * mu * (x.col(t + 1) - x.col(t));
    }
    double delta = 0.0;
    for (Eigen::Index t = 0; t < horizon; ++t)
      for (Eigen::Index j = 0; j < n; ++j) {
        const cxd xn = shrink(x(j, t) - step * grad(j, t), step * lambda);
        delta = std::max(delta, std::abs(xn - x(j, t)));
        x(j, t) = xn;
      }
    if (delta < tol) break;
  }
  return x;
}

// Exact two-state chain smoother: sums over all 2^T state sequences.
// Callers keep T small and the observations feasible under the parameters.
struct ChainPosteriors {
  Eigen::VectorXd marginal;               // Pr(s(t)=1 | all observations)
  std::vector<Eigen::Matrix2d> pairwise;  // [t-1](j,i) = Pr(s(t-1)=j, s(t)=i | all observations)
  double loglik = 0.0;
};

inline ChainPosteriors enumerate_chain(const std::vector<int>& obs, double p,
                                       double q, double p_flip, double q_flip) {
  const int horizon = static_cast<int>(obs.size());
  const double prior1 = p / (p + q);
  auto trans = [&](int a, int b) {
    return a == 0 ? (b ? p : 1.0 - p) : (b ? 1.0 - q : q);
  };
  auto emit = [&](int s, int o) {
    return s == 0 ? (o ? p_flip : 1.0 - p_flip) : (o ? 1.0 - q_flip : q_flip);
  };
  ChainPosteriors out;
  out.marginal = Eigen::VectorXd::Zero(horizon);
  out.pairwise.assign(horizon > 0 ? horizon - 1 : 0, Eigen::Matrix2d::Zero());
  double total = 0.0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << horizon); ++mask) {
    double w = 1.0;
    int prev = 0;
    for (int t = 0; t < horizon; ++t) {
      const int s = static_cast<int>((mask >> t) & 1u);
      w *= (t == 0) ? (s ? prior1 : 1.0 - prior1) : trans(prev, s);
      w *= emit(s, obs[t]);
      prev = s;
    }
    if (w == 0.0) continue;
    total += w;
    for (int t = 0; t < horizon; ++t) {
      const int s = static_cast<int>((mask >> t) & 1u);
      if (s) out.marginal[t] += w;
      if (t > 0)
        out.pairwise[t - 1](static_cast<int>((mask >> (t - 1)) & 1u), s) += w;
    }
  }
  out.marginal /= total;
  for (auto& m : out.pairwise) m /= total;
  out.loglik = std::log(total);
  return out;
}

}  // namespace oracle
