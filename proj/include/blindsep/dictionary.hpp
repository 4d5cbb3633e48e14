#pragma once

#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "blindsep/rng.hpp"
#include "blindsep/solvers.hpp"
#include "blindsep/types.hpp"

namespace blindsep {

enum class SignalSolver { omp, lasso, sl_seq, sl_admm };
enum class ChannelUpdate { mod, mdu, enhanced_mdu };

struct DlConfig {
  SignalSolver solver = SignalSolver::lasso;
  ChannelUpdate channel_update = ChannelUpdate::mod;
  int n_sources = 1;
  int outer_iters = 50;
  int mdu_inner_iters = 5;
  double rel_obj_tol = 1e-4;
  double support_gamma = 0.5;  // magnitude threshold for the mdu support
  OmpStop omp_stop{1, 0.0};

  void validate() const {
    check_param(n_sources >= 1, "n_sources must be positive");
    check_param(outer_iters >= 1, "outer_iters must be positive");
    check_param(mdu_inner_iters >= 1, "mdu_inner_iters must be positive");
    check_param(rel_obj_tol >= 0.0, "rel_obj_tol must be nonnegative");
    check_param(support_gamma >= 0.0, "support_gamma must be nonnegative");
  }
};

struct DlResult {
  ChannelMatrix channel;
  SignalMatrix signal;
  std::vector<double> objective_trace;  // ‖Y - HX‖² per outer iteration
};

// Per-column index sets of the entries a restricted update may touch.
using SupportPattern = std::vector<std::vector<int>>;

inline SupportPattern support_pattern(const SignalMatrix& x, double gamma) {
  check_param(gamma >= 0.0, "gamma must be nonnegative");
  SupportPattern pattern(static_cast<size_t>(x.cols()));
  for (Eigen::Index t = 0; t < x.cols(); ++t)
    for (Eigen::Index n = 0; n < x.rows(); ++n)
      if (std::abs(x(n, t)) > gamma)
        pattern[static_cast<size_t>(t)].push_back(static_cast<int>(n));
  return pattern;
}

// Frobenius-optimal channel for fixed signals, H = Y Xᴴ (X Xᴴ)⁻¹. The signal
// Gram gets a Tikhonov shift only when it is numerically rank deficient.
inline ChannelMatrix mod_update(const CMatrix& y, const SignalMatrix& x,
                                bool regularize = true) {
  check_dims(y.cols() == x.cols(), "signal/observation horizon mismatch");
  const Eigen::Index n = x.rows();
  CMatrix gram = x * x.adjoint();
  Eigen::SelfAdjointEigenSolver<CMatrix> es(gram, Eigen::EigenvaluesOnly);
  const double lmax = es.eigenvalues().maxCoeff();
  if (!(lmax > 0.0) || es.eigenvalues().minCoeff() <= lmax * 1e-10) {
    if (!regularize)
      throw numerical_error("mod_update: rank-deficient signal Gram");
    const double eps = 1e-8 * gram.trace().real() / static_cast<double>(n);
    if (!(eps > 0.0)) throw numerical_error("mod_update: all-zero signals");
    gram += eps * CMatrix::Identity(n, n);
  }
  CMatrix rhs = x * y.adjoint();  // (Y Xᴴ)ᴴ
  return gram.ldlt().solve(rhs).adjoint();
}

// Substituted target for the enhanced channel update,
// Y_k = Y + H_k (X_k - X_next); equals Y exactly when the estimates agree.
inline CMatrix enhanced_target(const CMatrix& y, const ChannelMatrix& h_k,
                               const SignalMatrix& x_k,
                               const SignalMatrix& x_next) {
  check_dims(h_k.cols() == x_k.rows() && x_k.rows() == x_next.rows() &&
                 y.cols() == x_k.cols() && x_k.cols() == x_next.cols() &&
                 y.rows() == h_k.rows(),
             "enhanced target dimension mismatch");
  return y + h_k * (x_k - x_next);
}

// Unit-normalizes columns, returning the old norms so callers can rescale
// signal rows and keep HX unchanged. Dead columns are replaced with fresh
// random unit vectors and get scale 0, zeroing the matching signal row.
inline std::pair<ChannelMatrix, RVector> normalize_columns(
    const ChannelMatrix& h, Rng* rng = nullptr) {
  ChannelMatrix out = h;
  RVector scales(h.cols());
  for (Eigen::Index j = 0; j < h.cols(); ++j) {
    const double nrm = out.col(j).norm();
    if (nrm > 0.0) {
      out.col(j) /= nrm;
      scales[j] = nrm;
    } else if (rng) {
      CVector fresh(h.rows());
      for (Eigen::Index i = 0; i < h.rows(); ++i)
        fresh[i] = rng->complex_gaussian();
      out.col(j) = fresh.normalized();
      scales[j] = 0.0;
    } else {
      throw numerical_error("normalize_columns: zero dictionary column");
    }
  }
  return {std::move(out), std::move(scales)};
}

// J alternations of the support-restricted signal solve (least squares on
// each column's index set) and the mod channel update, with the pattern held
// fixed throughout.
inline std::pair<ChannelMatrix, SignalMatrix> mdu_refine(
    const CMatrix& y, const ChannelMatrix& h_init,
    const SupportPattern& pattern, int inner_iters) {
  check_param(inner_iters >= 1, "mdu needs at least one alternation");
  check_dims(h_init.rows() == y.rows() &&
                 pattern.size() == static_cast<size_t>(y.cols()),
             "mdu input dimension mismatch");
  const Eigen::Index n = h_init.cols(), horizon = y.cols();

  ChannelMatrix h = h_init;
  SignalMatrix x = SignalMatrix::Zero(n, horizon);
  for (int j = 0; j < inner_iters; ++j) {
    const CMatrix gram = h.adjoint() * h;
    const CMatrix targets = h.adjoint() * y;
    for (Eigen::Index t = 0; t < horizon; ++t) {
      const auto& sup = pattern[static_cast<size_t>(t)];
      x.col(t).setZero();
      if (sup.empty()) continue;
      const Eigen::Index s = static_cast<Eigen::Index>(sup.size());
      CMatrix gs(s, s);
      CVector bs(s);
      for (Eigen::Index a = 0; a < s; ++a) {
        bs[a] = targets(sup[static_cast<size_t>(a)], t);
        for (Eigen::Index b = 0; b < s; ++b)
          gs(a, b) = gram(sup[static_cast<size_t>(a)],
                          sup[static_cast<size_t>(b)]);
      }
      Eigen::SelfAdjointEigenSolver<CMatrix> es(gs, Eigen::EigenvaluesOnly);
      const double lmax = es.eigenvalues().maxCoeff();
      if (!(lmax > 0.0) || es.eigenvalues().minCoeff() <= lmax * 1e-10)
        throw numerical_error("mdu_refine: singular restricted Gram at column " +
                              std::to_string(t));
      CVector xs = gs.ldlt().solve(bs);
      for (Eigen::Index a = 0; a < s; ++a)
        x(sup[static_cast<size_t>(a)], t) = xs[a];
    }
    h = mod_update(y, x);
  }
  return {std::move(h), std::move(x)};
}

// Alternating channel/signal estimation from a random unit-column start.
// Each outer iteration runs the chosen signal solver, the chosen channel
// update, then renormalizes the channel columns (rescaling signal rows to
// keep HX fixed) and records ‖Y - HX‖². Stops early once the relative
// objective change drops below rel_obj_tol. The mdu paths return the
// support-restricted least-squares signal from the last channel step, the
// amplitudes the refinement itself produced; the mod path has no such
// byproduct, so a trailing signal step against the final channel supplies
// the returned signal.
inline DlResult run_dl(const CMatrix& y, const DlConfig& cfg,
                       const SolverParams& solver_params, std::uint64_t seed) {
  cfg.validate();
  solver_params.validate();
  const Eigen::Index m = y.rows(), horizon = y.cols();
  const Eigen::Index n = cfg.n_sources;
  Rng rng(seed);

  CMatrix draw(m, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < m; ++i) draw(i, j) = rng.complex_gaussian();
  ChannelMatrix h = normalize_columns(draw, &rng).first;

  auto signal_step = [&](int outer) -> SignalMatrix {
    try {
      switch (cfg.solver) {
        case SignalSolver::omp: {
          SignalMatrix x(n, horizon);
          for (Eigen::Index t = 0; t < horizon; ++t)
            x.col(t) = omp_column(h, y.col(t), cfg.omp_stop);
          return x;
        }
        case SignalSolver::lasso: {
          SolverParams uncoupled = solver_params;
          uncoupled.mu = 0.0;
          return smooth_lasso_seq(h, y, uncoupled).signal;
        }
        case SignalSolver::sl_seq:
          return smooth_lasso_seq(h, y, solver_params).signal;
        case SignalSolver::sl_admm:
          return smooth_lasso_admm(h, y, solver_params).signal;
      }
      throw parameter_error("run_dl: unknown signal solver");
    } catch (const convergence_error& e) {
      throw convergence_error(
          "outer iteration " + std::to_string(outer) + ": " + e.what(),
          e.last_iterate, e.kkt_residual);
    } catch (const numerical_error& e) {
      throw numerical_error("outer iteration " + std::to_string(outer) + ": " +
                            e.what());
    }
  };

  DlResult out;
  out.objective_trace.push_back(y.squaredNorm());  // the X = 0 start

  SignalMatrix x_prev;  // previous solver output, for the enhanced target
  SignalMatrix x;       // signal paired with h after each channel step
  for (int k = 1; k <= cfg.outer_iters; ++k) {
    SignalMatrix x_new = signal_step(k);
    x = x_new;
    try {
      switch (cfg.channel_update) {
        case ChannelUpdate::mod:
          h = mod_update(y, x);
          break;
        case ChannelUpdate::mdu:
          std::tie(h, x) = mdu_refine(y, h,
                                      support_pattern(x_new, cfg.support_gamma),
                                      cfg.mdu_inner_iters);
          break;
        case ChannelUpdate::enhanced_mdu: {
          if (x_prev.size() == 0) x_prev = x_new;  // first pass, target is Y
          CMatrix target = enhanced_target(y, h, x_prev, x_new);
          std::tie(h, x) = mdu_refine(target, h,
                                      support_pattern(x_new, cfg.support_gamma),
                                      cfg.mdu_inner_iters);
          break;
        }
      }
    } catch (const numerical_error& e) {
      throw numerical_error("outer iteration " + std::to_string(k) + ": " +
                            e.what());
    }
    if (cfg.channel_update == ChannelUpdate::enhanced_mdu) x_prev = x_new;

    auto [hn, scales] = normalize_columns(h, &rng);
    h = std::move(hn);
    for (Eigen::Index i = 0; i < n; ++i) x.row(i) *= scales[i];

    const double obj = (y - h * x).squaredNorm();
    const double prev = out.objective_trace.back();
    out.objective_trace.push_back(obj);
    if (prev > 0.0 && std::abs(prev - obj) < cfg.rel_obj_tol * prev) break;
    if (obj == 0.0) break;
  }

  out.signal = cfg.channel_update == ChannelUpdate::mod
                   ? signal_step(cfg.outer_iters + 1)
                   : std::move(x);
  out.channel = std::move(h);
  return out;
}

}  // namespace blindsep
