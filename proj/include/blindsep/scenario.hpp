#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "blindsep/rng.hpp"
#include "blindsep/types.hpp"

namespace blindsep {

// Two-state activity chain per source; state 1 means the source transmits.
struct HmmParams {
  double p = 0.0;  // Pr(off -> on)
  double q = 0.0;  // Pr(on -> off)

  double stationary_active() const { return p / (p + q); }

  void validate() const {
    check_param(p >= 0.0 && p <= 1.0, "activity p must lie in [0,1]");
    check_param(q >= 0.0 && q <= 1.0, "activity q must lie in [0,1]");
    check_param(p + q > 0.0, "activity chain needs p + q > 0");
  }
};

enum class SignalDistribution { unit_gaussian, bpsk };

struct ScenarioConfig {
  int n_sensors = 20;
  int n_sources = 30;
  int horizon = 1000;
  HmmParams activity{0.0022, 0.02};
  SignalDistribution distribution = SignalDistribution::unit_gaussian;
  double snr_db = 30.0;  // per source sample; +inf means noiseless
  std::uint64_t seed = 1;

  double noise_variance() const {
    return std::isinf(snr_db) ? 0.0 : std::pow(10.0, -snr_db / 10.0);
  }

  void validate() const {
    check_param(n_sensors >= 1, "n_sensors must be positive");
    check_param(n_sources >= 1, "n_sources must be positive");
    check_param(horizon >= 1, "horizon must be positive");
    check_param(!std::isnan(snr_db), "snr_db must not be NaN");
    activity.validate();
  }
};

struct ObservationSet {
  CMatrix values;  // n_sensors x horizon
  double noise_variance = 0.0;
};

inline ActivationMatrix sample_activation(const std::vector<HmmParams>& chains,
                                          int horizon, Rng& rng) {
  check_param(!chains.empty(), "need at least one activity chain");
  check_param(horizon >= 1, "horizon must be positive");
  const int n = static_cast<int>(chains.size());
  ActivationMatrix states(n, horizon);
  for (int i = 0; i < n; ++i) {
    const HmmParams& hp = chains[i];
    hp.validate();
    // Initial state from the stationary distribution.
    std::uint8_t s = rng.bernoulli(hp.stationary_active()) ? 1 : 0;
    states(i, 0) = s;
    for (int t = 1; t < horizon; ++t) {
      if (s == 0) {
        s = rng.bernoulli(hp.p) ? 1 : 0;
      } else {
        s = rng.bernoulli(hp.q) ? 0 : 1;
      }
      states(i, t) = s;
    }
  }
  return states;
}

inline ActivationMatrix sample_activation(const HmmParams& shared, int n_sources,
                                          int horizon, Rng& rng) {
  check_param(n_sources >= 1, "n_sources must be positive");
  return sample_activation(std::vector<HmmParams>(n_sources, shared), horizon, rng);
}

// Active cells get an i.i.d. symbol, inactive cells are exactly zero.
// Symbols are real-valued (unit-variance Gaussian or +-1) carried as complex;
// the channel and noise supply the complex rotation.
inline SignalMatrix sample_signals(const ActivationMatrix& states,
                                   SignalDistribution dist, Rng& rng) {
  SignalMatrix x = SignalMatrix::Zero(states.rows(), states.cols());
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    for (Eigen::Index t = 0; t < states.cols(); ++t) {
      if (!states(i, t)) continue;
      switch (dist) {
        case SignalDistribution::unit_gaussian:
          x(i, t) = cxd(rng.gaussian(), 0.0);
          break;
        case SignalDistribution::bpsk:
          x(i, t) = cxd(rng.bernoulli(0.5) ? 1.0 : -1.0, 0.0);
          break;
      }
    }
  }
  return x;
}

// Flat-fading mixing matrix: i.i.d. circular complex Gaussian entries,
// columns scaled to unit norm.
inline ChannelMatrix sample_channel(int n_sensors, int n_sources, Rng& rng) {
  check_param(n_sensors >= 1 && n_sources >= 1, "channel dims must be positive");
  ChannelMatrix h(n_sensors, n_sources);
  for (Eigen::Index j = 0; j < n_sources; ++j) {
    for (Eigen::Index i = 0; i < n_sensors; ++i) h(i, j) = rng.complex_gaussian();
    h.col(j) /= h.col(j).norm();
  }
  return h;
}

inline ObservationSet synthesize_observations(const ChannelMatrix& h,
                                              const SignalMatrix& x,
                                              double snr_db, Rng& rng) {
  check_dims(h.cols() == x.rows(), "channel/signal source count mismatch");
  check_param(!std::isnan(snr_db), "snr_db must not be NaN");
  ObservationSet obs;
  obs.noise_variance = std::isinf(snr_db) ? 0.0 : std::pow(10.0, -snr_db / 10.0);
  obs.values = h * x;
  if (obs.noise_variance > 0.0) {
    for (Eigen::Index t = 0; t < obs.values.cols(); ++t)
      for (Eigen::Index i = 0; i < obs.values.rows(); ++i)
        obs.values(i, t) += rng.complex_gaussian(obs.noise_variance);
  }
  return obs;
}

struct ScenarioDraw {
  ActivationMatrix states;
  SignalMatrix signals;
  ChannelMatrix channel;
  ObservationSet observations;
};

inline ScenarioDraw draw_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  ScenarioDraw d;
  d.states = sample_activation(cfg.activity, cfg.n_sources, cfg.horizon, rng);
  d.signals = sample_signals(d.states, cfg.distribution, rng);
  d.channel = sample_channel(cfg.n_sensors, cfg.n_sources, rng);
  d.observations = synthesize_observations(d.channel, d.signals, cfg.snr_db, rng);
  return d;
}

}  // namespace blindsep
