#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "blindsep/hmm.hpp"
#include "blindsep/scenario.hpp"
#include "blindsep/types.hpp"

namespace blindsep {

// Resolves the row-permutation and per-source phase ambiguity of a blind
// estimate against ground truth.
struct Alignment {
  std::vector<int> perm;  // perm[n] = estimated row assigned to true row n
  CVector phase;          // unit factor applied to that estimated row
};

inline Alignment align_sources(const SignalMatrix& x_true, const SignalMatrix& x_est) {
  check_dims(x_true.rows() == x_est.rows() && x_true.cols() == x_est.cols(),
             "alignment needs equal shapes");
  const Eigen::Index n = x_true.rows();
  // gains(n, m) = inner product of estimated row m against true row n; its
  // phase is the rotation that best maps the estimate onto the truth.
  const CMatrix gains = x_true * x_est.adjoint();

  Alignment a;
  a.perm.assign(static_cast<std::size_t>(n), -1);
  a.phase = CVector::Ones(n);
  std::vector<bool> row_used(static_cast<std::size_t>(n), false);
  std::vector<bool> col_used(static_cast<std::size_t>(n), false);
  for (Eigen::Index pick = 0; pick < n; ++pick) {
    double best = -1.0;
    Eigen::Index bi = 0, bj = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (row_used[static_cast<std::size_t>(i)]) continue;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (col_used[static_cast<std::size_t>(j)]) continue;
        const double v = std::abs(gains(i, j));
        if (v > best) {
          best = v;
          bi = i;
          bj = j;
        }
      }
    }
    row_used[static_cast<std::size_t>(bi)] = true;
    col_used[static_cast<std::size_t>(bj)] = true;
    a.perm[static_cast<std::size_t>(bi)] = static_cast<int>(bj);
    if (best > 0.0) a.phase[bi] = gains(bi, bj) / best;
  }
  return a;
}

inline SignalMatrix apply_alignment(const SignalMatrix& x_est, const Alignment& a) {
  check_dims(static_cast<Eigen::Index>(a.perm.size()) == x_est.rows(),
             "alignment/source count mismatch");
  SignalMatrix out(x_est.rows(), x_est.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    out.row(i) = a.phase[i] * x_est.row(a.perm[static_cast<std::size_t>(i)]);
  return out;
}

// States carry no phase.
inline ActivationMatrix apply_alignment(const ActivationMatrix& s_est, const Alignment& a) {
  check_dims(static_cast<Eigen::Index>(a.perm.size()) == s_est.rows(),
             "alignment/source count mismatch");
  ActivationMatrix out(s_est.rows(), s_est.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    out.row(i) = s_est.row(a.perm[static_cast<std::size_t>(i)]);
  return out;
}

struct DetectionCounts {
  std::int64_t true_active = 0;
  std::int64_t detected_active = 0;
  std::int64_t true_inactive = 0;
  std::int64_t false_active = 0;
};

// A cleared defined flag marks a ratio whose denominator was empty; its value
// stays 0.
struct DetectionReport {
  double pd = 0.0;
  double pfa = 0.0;
  bool pd_defined = false;
  bool pfa_defined = false;
  DetectionCounts counts;
};

inline DetectionReport detection_metrics(const ActivationMatrix& s_true,
                                         const ActivationMatrix& s_hat) {
  check_dims(s_true.rows() == s_hat.rows() && s_true.cols() == s_hat.cols(),
             "detection needs equal shapes");
  DetectionReport r;
  for (Eigen::Index t = 0; t < s_true.cols(); ++t)
    for (Eigen::Index i = 0; i < s_true.rows(); ++i) {
      check_param(s_true(i, t) <= 1 && s_hat(i, t) <= 1, "states must be 0 or 1");
      if (s_true(i, t)) {
        ++r.counts.true_active;
        if (s_hat(i, t)) ++r.counts.detected_active;
      } else {
        ++r.counts.true_inactive;
        if (s_hat(i, t)) ++r.counts.false_active;
      }
    }
  r.pd_defined = r.counts.true_active > 0;
  if (r.pd_defined)
    r.pd = static_cast<double>(r.counts.detected_active) /
           static_cast<double>(r.counts.true_active);
  r.pfa_defined = r.counts.true_inactive > 0;
  if (r.pfa_defined)
    r.pfa = static_cast<double>(r.counts.false_active) /
            static_cast<double>(r.counts.true_inactive);
  return r;
}

struct EvmReport {
  double evm_percent = 0.0;
  bool defined = false;  // cleared when no cell is correctly detected
  double error_energy = 0.0;      // raw sums, so reports can be pooled
  double reference_energy = 0.0;
  std::vector<Eigen::Index> detected_set_sizes;
};

// Error vector magnitude over the correctly detected active cells only.
inline EvmReport evm(const SignalMatrix& x_true, const SignalMatrix& x_hat,
                     const ActivationMatrix& s_true, const ActivationMatrix& s_hat) {
  check_dims(x_true.rows() == x_hat.rows() && x_true.cols() == x_hat.cols() &&
                 x_true.rows() == s_true.rows() && x_true.cols() == s_true.cols() &&
                 s_true.rows() == s_hat.rows() && s_true.cols() == s_hat.cols(),
             "evm needs equal shapes");
  EvmReport r;
  r.detected_set_sizes.assign(static_cast<std::size_t>(x_true.rows()), 0);
  double err = 0.0, ref = 0.0;
  for (Eigen::Index t = 0; t < x_true.cols(); ++t)
    for (Eigen::Index i = 0; i < x_true.rows(); ++i) {
      if (!s_true(i, t) || !s_hat(i, t)) continue;
      ++r.detected_set_sizes[static_cast<std::size_t>(i)];
      err += std::norm(x_true(i, t) - x_hat(i, t));
      ref += std::norm(x_true(i, t));
    }
  r.error_energy = err;
  r.reference_energy = ref;
  r.defined = ref > 0.0;
  if (r.defined) r.evm_percent = 100.0 * std::sqrt(err / ref);
  return r;
}

struct ParamErrorReport {
  RMatrix per_source;  // columns |dp|, |dq|, |dp_flip|, |dq_flip|
  RVector mean_abs;
  RVector max_abs;
};

inline ParamErrorReport param_error(const HmmParams& true_hmm,
                                    const BacParams& true_bac,
                                    const std::vector<HmmParams>& fitted_hmm,
                                    const std::vector<BacParams>& fitted_bac) {
  check_param(!fitted_hmm.empty(), "need at least one fitted source");
  check_dims(fitted_hmm.size() == fitted_bac.size(), "fitted hmm/bac count mismatch");
  const Eigen::Index n = static_cast<Eigen::Index>(fitted_hmm.size());
  ParamErrorReport r;
  r.per_source = RMatrix(n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    r.per_source(i, 0) = std::abs(fitted_hmm[k].p - true_hmm.p);
    r.per_source(i, 1) = std::abs(fitted_hmm[k].q - true_hmm.q);
    r.per_source(i, 2) = std::abs(fitted_bac[k].p_flip - true_bac.p_flip);
    r.per_source(i, 3) = std::abs(fitted_bac[k].q_flip - true_bac.q_flip);
  }
  r.mean_abs = r.per_source.colwise().mean().transpose();
  r.max_abs = r.per_source.colwise().maxCoeff().transpose();
  return r;
}

}  // namespace blindsep
