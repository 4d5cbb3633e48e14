#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "blindsep/scenario.hpp"
#include "blindsep/types.hpp"

namespace blindsep {

// Flip probabilities of the binary asymmetric channel between a source's true
// state and its quantized estimate.
struct BacParams {
  double p_flip = 0.0;  // Pr(observed 1 | true 0)
  double q_flip = 0.0;  // Pr(observed 0 | true 1)

  void validate() const {
    check_param(p_flip >= 0.0 && p_flip <= 1.0, "p_flip must lie in [0,1]");
    check_param(q_flip >= 0.0 && q_flip <= 1.0, "q_flip must lie in [0,1]");
  }
};

struct QuantizerConfig {
  double gamma = 0.5;  // magnitude threshold, strict >

  void validate() const {
    check_param(std::isfinite(gamma) && gamma > 0.0,
                "gamma must be finite and positive");
  }
};

// Row-stochastic chain table: table(j, i) = Pr(next = i | current = j).
struct TransitionMatrix {
  Eigen::Matrix2d table = Eigen::Matrix2d::Identity();

  static TransitionMatrix from_hmm(const HmmParams& hmm) {
    hmm.validate();
    TransitionMatrix tm;
    tm.table << 1.0 - hmm.p, hmm.p, hmm.q, 1.0 - hmm.q;
    return tm;
  }

  void validate() const {
    for (int j = 0; j < 2; ++j) {
      check_param(std::abs(table.row(j).sum() - 1.0) <= 1e-12,
                  "transition rows must sum to 1");
      for (int i = 0; i < 2; ++i)
        check_param(table(j, i) >= 0.0 && table(j, i) <= 1.0,
                    "transition entries must lie in [0,1]");
    }
  }
};

// Smoothing posteriors of one source's state track.
struct PosteriorSet {
  RVector marginal;                       // Pr(s(t)=1 | all observations)
  std::vector<Eigen::Matrix2d> pairwise;  // [t-1](j,i) = Pr(s(t-1)=j, s(t)=i | all observations)
  double loglik = 0.0;
};

inline StateVector quantize_states(const CVector& x_row, double gamma) {
  check_param(std::isfinite(gamma) && gamma > 0.0,
              "gamma must be finite and positive");
  StateVector s(x_row.size());
  for (Eigen::Index t = 0; t < x_row.size(); ++t)
    s[t] = std::abs(x_row[t]) > gamma ? 1 : 0;
  return s;
}

// Exact two-state smoother with per-step normalization; the scale factors
// double as the observation likelihood. The chain starts from its stationary
// distribution.
inline PosteriorSet forward_backward(const StateVector& s_tilde,
                                     const HmmParams& hmm, const BacParams& bac) {
  hmm.validate();
  bac.validate();
  const Eigen::Index horizon = s_tilde.size();
  check_dims(horizon >= 1, "need at least one observation");
  for (Eigen::Index t = 0; t < horizon; ++t)
    check_param(s_tilde[t] <= 1, "state observations must be 0 or 1");

  const Eigen::Matrix2d phi = TransitionMatrix::from_hmm(hmm).table;
  Eigen::Matrix2d emit;  // emit(s, o) = Pr(observe o | state s)
  emit << 1.0 - bac.p_flip, bac.p_flip, bac.q_flip, 1.0 - bac.q_flip;

  const double active = hmm.stationary_active();
  const Eigen::Vector2d prior(1.0 - active, active);

  RMatrix fwd(2, horizon);  // filtered state distributions
  RVector scale(horizon);
  for (Eigen::Index t = 0; t < horizon; ++t) {
    const int obs = s_tilde[t];
    Eigen::Vector2d a =
        (t == 0 ? prior : Eigen::Vector2d(phi.transpose() * fwd.col(t - 1)))
            .cwiseProduct(emit.col(obs));
    const double c = a.sum();
    if (!(c > 0.0))
      throw model_mismatch_error("impossible observation at time " +
                                 std::to_string(t));
    fwd.col(t) = a / c;
    scale[t] = c;
  }

  RMatrix bwd(2, horizon);
  bwd.col(horizon - 1).setOnes();
  for (Eigen::Index t = horizon - 2; t >= 0; --t) {
    const int obs = s_tilde[t + 1];
    bwd.col(t) =
        phi * emit.col(obs).cwiseProduct(bwd.col(t + 1)) / scale[t + 1];
  }

  PosteriorSet post;
  post.marginal = RVector(horizon);
  for (Eigen::Index t = 0; t < horizon; ++t) {
    const Eigen::Vector2d joint = fwd.col(t).cwiseProduct(bwd.col(t));
    post.marginal[t] = joint[1] / joint.sum();
  }
  post.pairwise.resize(static_cast<std::size_t>(horizon - 1));
  for (Eigen::Index t = 1; t < horizon; ++t) {
    const int obs = s_tilde[t];
    Eigen::Matrix2d table;
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < 2; ++i)
        table(j, i) = fwd(j, t - 1) * phi(j, i) * emit(i, obs) * bwd(i, t);
    post.pairwise[static_cast<std::size_t>(t - 1)] = table / table.sum();
  }
  post.loglik = scale.array().log().sum();
  return post;
}

inline StateVector map_smooth(const PosteriorSet& post) {
  StateVector s(post.marginal.size());
  for (Eigen::Index t = 0; t < s.size(); ++t)
    s[t] = post.marginal[t] > 0.5 ? 1 : 0;
  return s;
}

inline CVector null_signals(const CVector& x_row, const StateVector& s_hat) {
  check_dims(x_row.size() == s_hat.size(), "signal/state length mismatch");
  CVector out = CVector::Zero(x_row.size());
  for (Eigen::Index t = 0; t < out.size(); ++t)
    if (s_hat[t]) out[t] = x_row[t];
  return out;
}

struct EmConfig {
  HmmParams init_hmm{0.5, 0.5};
  BacParams init_bac{0.1, 0.2};
  double eps = 1e-5;  // per-parameter convergence threshold
  int max_iters = 500;

  void validate() const {
    init_hmm.validate();
    init_bac.validate();
    check_param(eps > 0.0, "eps must be positive");
    check_param(max_iters >= 1, "max_iters must be positive");
  }
};

struct EmResult {
  HmmParams hmm;
  BacParams bac;
  PosteriorSet posteriors;  // computed at the returned parameters
  RVector loglik_trace;     // one entry per smoothing pass, final refresh included
  int iterations = 0;
  bool converged = false;
};

// Alternates smoothing passes with closed-form parameter updates from the
// posterior sufficient statistics. Updates are clamped away from 0 and 1 so
// later passes stay well-defined; a vanished denominator keeps the previous
// value.
inline EmResult em_fit(const StateVector& s_tilde, const EmConfig& cfg) {
  cfg.validate();
  const Eigen::Index horizon = s_tilde.size();
  check_dims(horizon >= 2, "em_fit needs at least two samples");

  auto clamp = [](double v) { return std::clamp(v, 1e-6, 1.0 - 1e-6); };

  EmResult out;
  HmmParams hmm = cfg.init_hmm;
  BacParams bac = cfg.init_bac;
  std::vector<double> trace;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    const PosteriorSet post = forward_backward(s_tilde, hmm, bac);
    trace.push_back(post.loglik);

    double p_num = 0, p_den = 0, q_num = 0, q_den = 0;
    for (std::size_t m = 0; m < post.pairwise.size(); ++m) {
      p_num += post.pairwise[m](0, 1);
      q_num += post.pairwise[m](1, 0);
      p_den += 1.0 - post.marginal[static_cast<Eigen::Index>(m)];
      q_den += post.marginal[static_cast<Eigen::Index>(m)];
    }
    double pp_num = 0, qp_num = 0, pp_den = 0, qp_den = 0;
    for (Eigen::Index t = 0; t < horizon; ++t) {
      const double active = post.marginal[t];
      if (s_tilde[t])
        pp_num += 1.0 - active;
      else
        qp_num += active;
      pp_den += 1.0 - active;
      qp_den += active;
    }

    const HmmParams next_hmm{clamp(p_den > 0.0 ? p_num / p_den : hmm.p),
                             clamp(q_den > 0.0 ? q_num / q_den : hmm.q)};
    const BacParams next_bac{clamp(pp_den > 0.0 ? pp_num / pp_den : bac.p_flip),
                             clamp(qp_den > 0.0 ? qp_num / qp_den : bac.q_flip)};
    const double delta = std::max(
        std::max(std::abs(next_hmm.p - hmm.p), std::abs(next_hmm.q - hmm.q)),
        std::max(std::abs(next_bac.p_flip - bac.p_flip),
                 std::abs(next_bac.q_flip - bac.q_flip)));
    hmm = next_hmm;
    bac = next_bac;
    out.iterations = it;
    if (delta < cfg.eps) {
      out.converged = true;
      break;
    }
  }

  out.posteriors = forward_backward(s_tilde, hmm, bac);
  trace.push_back(out.posteriors.loglik);
  out.hmm = hmm;
  out.bac = bac;
  out.loglik_trace =
      Eigen::Map<const RVector>(trace.data(), static_cast<Eigen::Index>(trace.size()));
  return out;
}

struct PsfConfig {
  QuantizerConfig quantizer{};
  bool estimate_params = false;  // true: fit (p, q, p', q') per source
  HmmParams hmm{0.0022, 0.02};
  BacParams bac{0.02, 0.27};
  EmConfig em{};

  void validate() const {
    quantizer.validate();
    if (estimate_params) {
      em.validate();
    } else {
      hmm.validate();
      bac.validate();
    }
  }
};

struct PsfResult {
  SignalMatrix signal;      // estimates with off-state entries nulled
  ActivationMatrix states;  // smoothed state decisions
  std::vector<HmmParams> fitted_hmm;  // per source; the fixed model when not estimating
  std::vector<BacParams> fitted_bac;
  std::vector<std::uint8_t> em_converged;  // per source, empty in fixed-parameter mode
};

// Per source row: quantize, smooth (fitting parameters first when asked), take
// state decisions, null the signal outside them.
inline PsfResult psf_pipeline(const SignalMatrix& x_tilde, const PsfConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = x_tilde.rows(), horizon = x_tilde.cols();
  PsfResult out;
  out.signal = SignalMatrix::Zero(n, horizon);
  out.states = ActivationMatrix::Zero(n, horizon);
  out.fitted_hmm.reserve(static_cast<std::size_t>(n));
  out.fitted_bac.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    try {
      const CVector row = x_tilde.row(i).transpose();
      const StateVector quantized = quantize_states(row, cfg.quantizer.gamma);
      PosteriorSet post;
      if (cfg.estimate_params) {
        EmResult em = em_fit(quantized, cfg.em);
        post = std::move(em.posteriors);
        out.fitted_hmm.push_back(em.hmm);
        out.fitted_bac.push_back(em.bac);
        out.em_converged.push_back(em.converged ? 1 : 0);
      } else {
        post = forward_backward(quantized, cfg.hmm, cfg.bac);
        out.fitted_hmm.push_back(cfg.hmm);
        out.fitted_bac.push_back(cfg.bac);
      }
      const StateVector smoothed = map_smooth(post);
      out.signal.row(i) = null_signals(row, smoothed).transpose();
      for (Eigen::Index t = 0; t < horizon; ++t) out.states(i, t) = smoothed[t];
    } catch (const model_mismatch_error& e) {
      throw model_mismatch_error("source " + std::to_string(i) + ": " + e.what());
    } catch (const dimension_error& e) {
      throw dimension_error("source " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace blindsep
