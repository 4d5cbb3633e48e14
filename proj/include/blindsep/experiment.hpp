#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "blindsep/dictionary.hpp"
#include "blindsep/hmm.hpp"
#include "blindsep/io.hpp"
#include "blindsep/metrics.hpp"
#include "blindsep/scenario.hpp"

namespace blindsep {

using Json = nlohmann::json;

inline constexpr char kToolVersion[] = "blindsep 0.1.0";

// ---------------------------------------------------------------------------
// Names for the serialized enums.

inline std::string solver_name(SignalSolver s) {
  switch (s) {
    case SignalSolver::omp: return "omp";
    case SignalSolver::lasso: return "lasso";
    case SignalSolver::sl_seq: return "sl-seq";
    case SignalSolver::sl_admm: return "sl-admm";
  }
  throw parameter_error("unknown solver");
}

inline SignalSolver solver_from(const std::string& s) {
  for (SignalSolver v : {SignalSolver::omp, SignalSolver::lasso,
                         SignalSolver::sl_seq, SignalSolver::sl_admm})
    if (solver_name(v) == s) return v;
  throw parameter_error("unknown solver '" + s + "'");
}

inline std::string channel_update_name(ChannelUpdate u) {
  switch (u) {
    case ChannelUpdate::mod: return "mod";
    case ChannelUpdate::mdu: return "mdu";
    case ChannelUpdate::enhanced_mdu: return "enhanced-mdu";
  }
  throw parameter_error("unknown channel update");
}

inline ChannelUpdate channel_update_from(const std::string& s) {
  for (ChannelUpdate v :
       {ChannelUpdate::mod, ChannelUpdate::mdu, ChannelUpdate::enhanced_mdu})
    if (channel_update_name(v) == s) return v;
  throw parameter_error("unknown channel update '" + s + "'");
}

inline std::string distribution_name(SignalDistribution d) {
  switch (d) {
    case SignalDistribution::unit_gaussian: return "unit-gaussian";
    case SignalDistribution::bpsk: return "bpsk";
  }
  throw parameter_error("unknown distribution");
}

inline SignalDistribution distribution_from(const std::string& s) {
  for (SignalDistribution v :
       {SignalDistribution::unit_gaussian, SignalDistribution::bpsk})
    if (distribution_name(v) == s) return v;
  throw parameter_error("unknown distribution '" + s + "'");
}

enum class SweepAxis { none, gamma, lambda, mu, snr, sparsity };

inline std::string axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::none: return "none";
    case SweepAxis::gamma: return "gamma";
    case SweepAxis::lambda: return "lambda";
    case SweepAxis::mu: return "mu";
    case SweepAxis::snr: return "snr";
    case SweepAxis::sparsity: return "sparsity";
  }
  throw parameter_error("unknown sweep axis");
}

inline SweepAxis axis_from(const std::string& s) {
  for (SweepAxis v : {SweepAxis::none, SweepAxis::gamma, SweepAxis::lambda,
                      SweepAxis::mu, SweepAxis::snr, SweepAxis::sparsity})
    if (axis_name(v) == s) return v;
  throw parameter_error("unknown sweep axis '" + s + "'");
}

// ---------------------------------------------------------------------------
// Configuration

struct MethodSpec {
  std::string name;
  DlConfig dl;  // n_sources is taken from the scenario at run time
  SolverParams solver;
};

struct SweepSpec {
  SweepAxis axis = SweepAxis::none;
  std::vector<double> grid;
};

struct PsfSpec {
  QuantizerConfig quantizer{};  // operating threshold; EM fits are recorded here
  bool smooth = true;           // evaluate the fixed-parameter variant
  std::vector<std::string> em_methods;  // methods that also get an EM variant
  BacParams bac{0.02, 0.27};
  EmConfig em{};
};

struct ExperimentConfig {
  std::string name = "custom";
  ScenarioConfig scenario{};
  std::vector<MethodSpec> methods;
  PsfSpec psf{};
  std::vector<double> gamma_grid{0.5};
  SweepSpec sweep{};
  int trials = 50;
  std::uint64_t base_seed = 1;

  void validate() const {
    scenario.validate();
    check_param(trials >= 1, "trials must be positive");
    check_param(!name.empty() && name.find_first_of(",\n\"") == std::string::npos,
                "experiment name must be nonempty without csv delimiters");
    std::vector<std::string> seen;
    for (const MethodSpec& m : methods) {
      check_param(!m.name.empty() &&
                      m.name.find_first_of(",\n\"") == std::string::npos,
                  "method names must be nonempty without csv delimiters");
      check_param(std::find(seen.begin(), seen.end(), m.name) == seen.end(),
                  "duplicate method name '" + m.name + "'");
      seen.push_back(m.name);
      DlConfig dl = m.dl;
      dl.n_sources = scenario.n_sources;
      dl.validate();
      m.solver.validate();
    }
    for (const std::string& em : psf.em_methods)
      check_param(std::find(seen.begin(), seen.end(), em) != seen.end(),
                  "em method '" + em + "' is not configured");
    psf.quantizer.validate();
    psf.bac.validate();
    psf.em.validate();

    check_param(!gamma_grid.empty() || sweep.axis == SweepAxis::gamma,
                "gamma grid must not be empty");
    for (std::size_t i = 0; i < gamma_grid.size(); ++i) {
      check_param(std::isfinite(gamma_grid[i]) && gamma_grid[i] > 0.0,
                  "gamma grid values must be finite and positive");
      if (i) check_param(gamma_grid[i - 1] < gamma_grid[i],
                         "gamma grid must be strictly increasing");
    }

    if (sweep.axis == SweepAxis::none) {
      check_param(sweep.grid.empty(), "sweep grid given without an axis");
      return;
    }
    check_param(!sweep.grid.empty(), "sweep axis needs a grid");
    for (std::size_t i = 0; i < sweep.grid.size(); ++i) {
      const double v = sweep.grid[i];
      check_param(std::isfinite(v), "sweep values must be finite");
      if (i) check_param(sweep.grid[i - 1] < v,
                         "sweep grid must be strictly increasing");
      switch (sweep.axis) {
        case SweepAxis::gamma:
          check_param(v > 0.0, "gamma sweep values must be positive");
          break;
        case SweepAxis::lambda:
          check_param(v >= 0.0, "lambda sweep values must be nonnegative");
          break;
        case SweepAxis::mu:
          check_param(v >= 0.0, "mu sweep values must be nonnegative");
          break;
        case SweepAxis::sparsity:
          check_param(v > 0.0 && v < scenario.n_sources,
                      "average active count must sit inside (0, n_sources)");
          break;
        case SweepAxis::snr:
        case SweepAxis::none:
          break;
      }
    }
  }
};

// Folds one sweep value into the scenario and method parameters. The snr axis
// only moves the noise floor; solver weights keep their configured values. A
// gamma axis is handled by the runner, which swaps in the whole grid at once.
inline void apply_axis_value(ExperimentConfig& cfg, double value) {
  switch (cfg.sweep.axis) {
    case SweepAxis::none:
    case SweepAxis::gamma:
      break;
    case SweepAxis::lambda:
      for (MethodSpec& m : cfg.methods) m.solver.lambda = value;
      break;
    case SweepAxis::mu:
      for (MethodSpec& m : cfg.methods) m.solver.mu = value;
      break;
    case SweepAxis::snr:
      cfg.scenario.snr_db = value;
      break;
    case SweepAxis::sparsity:
      cfg.scenario.activity.p = cfg.scenario.activity.q * value /
                                (cfg.scenario.n_sources - value);
      break;
  }
}

// ---------------------------------------------------------------------------
// JSON round trip

namespace detail {

inline void check_keys(const Json& j, std::initializer_list<const char*> allowed,
                       const char* where) {
  check_param(j.is_object(), std::string(where) + " must be a json object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw parameter_error("unknown key '" + it.key() + "' in " + where);
  }
}

inline Json snr_to_json(double v) {
  if (std::isinf(v)) return v > 0.0 ? "inf" : "-inf";
  return v;
}

inline double snr_from_json(const Json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw parameter_error("snr_db string must be 'inf' or '-inf'");
  }
  return j.get<double>();
}

}  // namespace detail

inline Json config_to_json(const ExperimentConfig& cfg) {
  Json scenario{
      {"n_sensors", cfg.scenario.n_sensors},
      {"n_sources", cfg.scenario.n_sources},
      {"horizon", cfg.scenario.horizon},
      {"activity", Json{{"p", cfg.scenario.activity.p},
                        {"q", cfg.scenario.activity.q}}},
      {"distribution", distribution_name(cfg.scenario.distribution)},
      {"snr_db", detail::snr_to_json(cfg.scenario.snr_db)},
  };
  Json methods = Json::array();
  for (const MethodSpec& m : cfg.methods)
    methods.push_back(Json{
        {"name", m.name},
        {"solver", solver_name(m.dl.solver)},
        {"channel_update", channel_update_name(m.dl.channel_update)},
        {"outer_iters", m.dl.outer_iters},
        {"mdu_inner_iters", m.dl.mdu_inner_iters},
        {"rel_obj_tol", m.dl.rel_obj_tol},
        {"support_gamma", m.dl.support_gamma},
        {"omp_max_atoms", m.dl.omp_stop.max_atoms},
        {"omp_residual_tol", m.dl.omp_stop.residual_tol},
        {"lambda", m.solver.lambda},
        {"mu", m.solver.mu},
        {"rho", m.solver.rho},
        {"admm_iters", m.solver.admm_iters},
        {"inner_tol", m.solver.inner_tol},
        {"inner_max_iters", m.solver.inner_max_iters},
    });
  Json psf{
      {"gamma", cfg.psf.quantizer.gamma},
      {"smooth", cfg.psf.smooth},
      {"em_methods", cfg.psf.em_methods},
      {"bac", Json{{"p_flip", cfg.psf.bac.p_flip},
                   {"q_flip", cfg.psf.bac.q_flip}}},
      {"em", Json{{"init_p", cfg.psf.em.init_hmm.p},
                  {"init_q", cfg.psf.em.init_hmm.q},
                  {"init_p_flip", cfg.psf.em.init_bac.p_flip},
                  {"init_q_flip", cfg.psf.em.init_bac.q_flip},
                  {"eps", cfg.psf.em.eps},
                  {"max_iters", cfg.psf.em.max_iters}}},
  };
  return Json{
      {"name", cfg.name},
      {"trials", cfg.trials},
      {"base_seed", cfg.base_seed},
      {"scenario", scenario},
      {"methods", methods},
      {"psf", psf},
      {"gamma_grid", cfg.gamma_grid},
      {"sweep", Json{{"axis", axis_name(cfg.sweep.axis)},
                     {"grid", cfg.sweep.grid}}},
  };
}

inline ExperimentConfig config_from_json(const Json& j) {
  try {
    detail::check_keys(j,
                       {"name", "trials", "base_seed", "scenario", "methods",
                        "psf", "gamma_grid", "sweep"},
                       "config");
    ExperimentConfig cfg;
    cfg.name = j.value("name", cfg.name);
    cfg.trials = j.value("trials", cfg.trials);
    cfg.base_seed = j.value("base_seed", cfg.base_seed);
    if (j.contains("scenario")) {
      const Json& s = j["scenario"];
      detail::check_keys(s,
                         {"n_sensors", "n_sources", "horizon", "activity",
                          "distribution", "snr_db"},
                         "scenario");
      cfg.scenario.n_sensors = s.value("n_sensors", cfg.scenario.n_sensors);
      cfg.scenario.n_sources = s.value("n_sources", cfg.scenario.n_sources);
      cfg.scenario.horizon = s.value("horizon", cfg.scenario.horizon);
      if (s.contains("activity")) {
        detail::check_keys(s["activity"], {"p", "q"}, "activity");
        cfg.scenario.activity.p = s["activity"].value("p", cfg.scenario.activity.p);
        cfg.scenario.activity.q = s["activity"].value("q", cfg.scenario.activity.q);
      }
      if (s.contains("distribution"))
        cfg.scenario.distribution =
            distribution_from(s["distribution"].get<std::string>());
      if (s.contains("snr_db"))
        cfg.scenario.snr_db = detail::snr_from_json(s["snr_db"]);
    }
    if (j.contains("methods")) {
      check_param(j["methods"].is_array(), "methods must be a json array");
      cfg.methods.clear();
      for (const Json& mj : j["methods"]) {
        detail::check_keys(mj,
                           {"name", "solver", "channel_update", "outer_iters",
                            "mdu_inner_iters", "rel_obj_tol", "support_gamma",
                            "omp_max_atoms", "omp_residual_tol", "lambda", "mu",
                            "rho", "admm_iters", "inner_tol", "inner_max_iters"},
                           "method");
        MethodSpec m;
        m.name = mj.at("name").get<std::string>();
        m.dl.solver = solver_from(mj.at("solver").get<std::string>());
        if (mj.contains("channel_update"))
          m.dl.channel_update =
              channel_update_from(mj["channel_update"].get<std::string>());
        m.dl.outer_iters = mj.value("outer_iters", m.dl.outer_iters);
        m.dl.mdu_inner_iters = mj.value("mdu_inner_iters", m.dl.mdu_inner_iters);
        m.dl.rel_obj_tol = mj.value("rel_obj_tol", m.dl.rel_obj_tol);
        m.dl.support_gamma = mj.value("support_gamma", m.dl.support_gamma);
        m.dl.omp_stop.max_atoms = mj.value("omp_max_atoms", m.dl.omp_stop.max_atoms);
        m.dl.omp_stop.residual_tol =
            mj.value("omp_residual_tol", m.dl.omp_stop.residual_tol);
        m.solver.lambda = mj.value("lambda", m.solver.lambda);
        m.solver.mu = mj.value("mu", m.solver.mu);
        m.solver.rho = mj.value("rho", m.solver.rho);
        m.solver.admm_iters = mj.value("admm_iters", m.solver.admm_iters);
        m.solver.inner_tol = mj.value("inner_tol", m.solver.inner_tol);
        m.solver.inner_max_iters =
            mj.value("inner_max_iters", m.solver.inner_max_iters);
        cfg.methods.push_back(std::move(m));
      }
    }
    if (j.contains("psf")) {
      const Json& p = j["psf"];
      detail::check_keys(p, {"gamma", "smooth", "em_methods", "bac", "em"},
                         "psf");
      cfg.psf.quantizer.gamma = p.value("gamma", cfg.psf.quantizer.gamma);
      cfg.psf.smooth = p.value("smooth", cfg.psf.smooth);
      cfg.psf.em_methods = p.value("em_methods", cfg.psf.em_methods);
      if (p.contains("bac")) {
        detail::check_keys(p["bac"], {"p_flip", "q_flip"}, "bac");
        cfg.psf.bac.p_flip = p["bac"].value("p_flip", cfg.psf.bac.p_flip);
        cfg.psf.bac.q_flip = p["bac"].value("q_flip", cfg.psf.bac.q_flip);
      }
      if (p.contains("em")) {
        detail::check_keys(p["em"],
                           {"init_p", "init_q", "init_p_flip", "init_q_flip",
                            "eps", "max_iters"},
                           "em");
        const Json& e = p["em"];
        cfg.psf.em.init_hmm.p = e.value("init_p", cfg.psf.em.init_hmm.p);
        cfg.psf.em.init_hmm.q = e.value("init_q", cfg.psf.em.init_hmm.q);
        cfg.psf.em.init_bac.p_flip =
            e.value("init_p_flip", cfg.psf.em.init_bac.p_flip);
        cfg.psf.em.init_bac.q_flip =
            e.value("init_q_flip", cfg.psf.em.init_bac.q_flip);
        cfg.psf.em.eps = e.value("eps", cfg.psf.em.eps);
        cfg.psf.em.max_iters = e.value("max_iters", cfg.psf.em.max_iters);
      }
    }
    cfg.gamma_grid = j.value("gamma_grid", cfg.gamma_grid);
    if (j.contains("sweep")) {
      detail::check_keys(j["sweep"], {"axis", "grid"}, "sweep");
      if (j["sweep"].contains("axis"))
        cfg.sweep.axis = axis_from(j["sweep"]["axis"].get<std::string>());
      cfg.sweep.grid = j["sweep"].value("grid", cfg.sweep.grid);
    }
    return cfg;
  } catch (const Json::exception& e) {
    throw parameter_error(std::string("config parse: ") + e.what());
  }
}

// Canonical hash: nlohmann objects serialize with sorted keys.
inline std::string config_hash(const ExperimentConfig& cfg) {
  return hash_hex(fnv1a64(config_to_json(cfg).dump()));
}

// ---------------------------------------------------------------------------
// Figure presets

inline std::vector<double> default_gamma_grid() {
  return {0.02, 0.04, 0.07, 0.10, 0.14, 0.18, 0.22, 0.26, 0.30,
          0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.66, 0.72, 0.80,
          0.90, 1.00, 1.15, 1.35, 1.60, 1.90, 2.20, 2.50};
}

namespace detail {

inline MethodSpec preset_method(const std::string& name, SignalSolver solver,
                                const ScenarioConfig& sc) {
  MethodSpec m;
  m.name = name;
  m.dl.solver = solver;
  m.dl.channel_update = ChannelUpdate::mod;
  m.dl.outer_iters = 30;
  m.dl.mdu_inner_iters = 5;
  m.dl.rel_obj_tol = 1e-4;
  m.dl.support_gamma = 0.5;
  const double avg_active = sc.activity.stationary_active() * sc.n_sources;
  m.dl.omp_stop = {std::max(1, static_cast<int>(std::lround(avg_active))), 0.0};
  // Weights tuned on the default scenario; detection peaks near these values.
  m.solver.lambda = solver == SignalSolver::sl_admm ? 0.25 : 0.28;
  m.solver.mu = (solver == SignalSolver::sl_seq || solver == SignalSolver::sl_admm)
                    ? 0.02
                    : 0.0;
  m.solver.rho = 0.1;
  m.solver.admm_iters = 30;
  m.solver.inner_tol = 1e-4;
  m.solver.inner_max_iters = 20000;
  return m;
}

}  // namespace detail

inline std::vector<std::pair<std::string, std::string>> figure_presets() {
  return {
      {"fig4", "detection roc for omp/lasso/sl-seq/sl-admm, raw and smoothed"},
      {"fig5", "detection at fixed pfa versus the l1 weight lambda"},
      {"fig6", "detection at fixed pfa versus the smoothness weight mu"},
      {"fig7", "detection versus the average number of active sources"},
      {"fig8", "evm versus snr on bpsk symbols"},
      {"fig9", "em parameter fits at the operating threshold"},
      {"fig10", "detection roc with em-fitted smoothing parameters"},
  };
}

inline ExperimentConfig figure_preset(const std::string& name) {
  ExperimentConfig cfg;
  cfg.name = name;
  cfg.trials = 50;
  cfg.base_seed = 1;
  cfg.gamma_grid = default_gamma_grid();
  auto method = [&cfg](const char* n, SignalSolver s) {
    return detail::preset_method(n, s, cfg.scenario);
  };
  auto all_methods = [&] {
    cfg.methods = {method("omp", SignalSolver::omp),
                   method("lasso", SignalSolver::lasso),
                   method("sl-seq", SignalSolver::sl_seq),
                   method("sl-admm", SignalSolver::sl_admm)};
  };

  if (name == "fig4") {
    all_methods();
  } else if (name == "fig5") {
    cfg.methods = {method("sl-admm", SignalSolver::sl_admm)};
    cfg.psf.smooth = false;
    cfg.sweep = {SweepAxis::lambda, {0.05, 0.1, 0.2, 0.3, 0.5, 1.0}};
  } else if (name == "fig6") {
    cfg.methods = {method("sl-admm", SignalSolver::sl_admm)};
    cfg.psf.smooth = false;
    cfg.sweep = {SweepAxis::mu, {0.002, 0.01, 0.02, 0.05, 0.2, 1.0, 5.0}};
  } else if (name == "fig7") {
    all_methods();
    cfg.sweep = {SweepAxis::sparsity, {3.0, 6.0}};
  } else if (name == "fig8") {
    all_methods();
    cfg.scenario.distribution = SignalDistribution::bpsk;
    cfg.sweep = {SweepAxis::snr, {10.0, 20.0, 30.0}};
  } else if (name == "fig9") {
    cfg.methods = {method("sl-admm", SignalSolver::sl_admm)};
    cfg.psf.em_methods = {"sl-admm"};
    cfg.gamma_grid = {0.5};
  } else if (name == "fig10") {
    cfg.methods = {method("sl-admm", SignalSolver::sl_admm)};
    cfg.psf.em_methods = {"sl-admm"};
  } else {
    std::string known;
    for (const auto& [n, blurb] : figure_presets())
      known += (known.empty() ? "" : ", ") + n;
    throw parameter_error("unknown figure preset '" + name + "'; valid: " + known);
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// ROC utilities

struct RocSample {
  double gamma = 0.0;
  double pfa = 0.0;
  double pd = 0.0;
  double evm = std::numeric_limits<double>::quiet_NaN();
};

// Sorted by pfa with pd lifted to its running maximum; equal pfa collapse to
// the best point.
inline std::vector<RocSample> roc_envelope(std::vector<RocSample> pts) {
  std::sort(pts.begin(), pts.end(), [](const RocSample& a, const RocSample& b) {
    return a.pfa < b.pfa || (a.pfa == b.pfa && a.pd < b.pd);
  });
  std::vector<RocSample> env;
  double best = 0.0;
  for (const RocSample& p : pts) {
    best = std::max(best, p.pd);
    RocSample lifted = p;
    lifted.pd = best;
    if (!env.empty() && env.back().pfa == p.pfa)
      env.back() = lifted;
    else
      env.push_back(lifted);
  }
  return env;
}

// Linear interpolation along the envelope, clamped at both ends.
inline double pd_at_pfa(const std::vector<RocSample>& pts, double target_pfa) {
  const std::vector<RocSample> env = roc_envelope(pts);
  if (env.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (target_pfa <= env.front().pfa) return env.front().pd;
  if (target_pfa >= env.back().pfa) return env.back().pd;
  for (std::size_t i = 1; i < env.size(); ++i) {
    if (env[i].pfa < target_pfa) continue;
    const RocSample& lo = env[i - 1];
    const RocSample& hi = env[i];
    const double w = (target_pfa - lo.pfa) / (hi.pfa - lo.pfa);
    return lo.pd + w * (hi.pd - lo.pd);
  }
  return env.back().pd;
}

// Best (smallest) evm among samples whose pd clears the floor.
inline double evm_at_pd(const std::vector<RocSample>& pts, double pd_floor) {
  double best = std::numeric_limits<double>::quiet_NaN();
  for (const RocSample& p : pts)
    if (p.pd >= pd_floor && std::isfinite(p.evm) &&
        (std::isnan(best) || p.evm < best))
      best = p.evm;
  return best;
}

// ---------------------------------------------------------------------------
// Trial pipeline

enum class VariantKind { raw, smooth, em };

struct VariantRef {
  int method = 0;
  VariantKind kind = VariantKind::raw;
  std::string label;
};

inline std::vector<VariantRef> enumerate_variants(const ExperimentConfig& cfg) {
  std::vector<VariantRef> out;
  for (int m = 0; m < static_cast<int>(cfg.methods.size()); ++m) {
    const std::string& base = cfg.methods[static_cast<std::size_t>(m)].name;
    out.push_back({m, VariantKind::raw, base});
    if (cfg.psf.smooth) out.push_back({m, VariantKind::smooth, base + "+psf"});
    if (std::find(cfg.psf.em_methods.begin(), cfg.psf.em_methods.end(), base) !=
        cfg.psf.em_methods.end())
      out.push_back({m, VariantKind::em, base + "+em"});
  }
  return out;
}

inline ActivationMatrix quantize_matrix(const SignalMatrix& x, double gamma) {
  ActivationMatrix s(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const StateVector row = quantize_states(x.row(i).transpose(), gamma);
    s.row(i) = row.transpose();
  }
  return s;
}

// Per-source empirical flip rates of a quantized track against the truth.
inline std::vector<std::array<double, 2>> measured_flips(
    const ActivationMatrix& s_true, const ActivationMatrix& s_hat) {
  check_dims(s_true.rows() == s_hat.rows() && s_true.cols() == s_hat.cols(),
             "flip measurement needs equal shapes");
  std::vector<std::array<double, 2>> out(static_cast<std::size_t>(s_true.rows()));
  for (Eigen::Index i = 0; i < s_true.rows(); ++i) {
    std::int64_t n0 = 0, n1 = 0, up = 0, down = 0;
    for (Eigen::Index t = 0; t < s_true.cols(); ++t) {
      if (s_true(i, t)) {
        ++n1;
        if (!s_hat(i, t)) ++down;
      } else {
        ++n0;
        if (s_hat(i, t)) ++up;
      }
    }
    out[static_cast<std::size_t>(i)] = {
        n0 ? static_cast<double>(up) / static_cast<double>(n0) : 0.0,
        n1 ? static_cast<double>(down) / static_cast<double>(n1) : 0.0};
  }
  return out;
}

struct CellOutcome {
  double gamma = 0.0;
  DetectionReport det;
  EvmReport evm;
};

struct EmFitRecord {
  int variant = 0;
  std::vector<HmmParams> hmm;
  std::vector<BacParams> bac;
  std::vector<std::array<double, 2>> raw_flips;  // measured against the truth
};

struct TrialOutcome {
  std::vector<std::vector<CellOutcome>> cells;  // [variant][gamma index]
  std::vector<EmFitRecord> em_fits;             // at the operating threshold
};

inline TrialOutcome run_trial(const ExperimentConfig& cfg,
                              std::uint64_t trial_seed) {
  ScenarioConfig sc = cfg.scenario;
  sc.seed = trial_seed;
  const ScenarioDraw truth = draw_scenario(sc);
  const std::vector<VariantRef> variants = enumerate_variants(cfg);

  TrialOutcome out;
  out.cells.resize(variants.size());

  std::size_t v = 0;
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
    const MethodSpec& spec = cfg.methods[m];
    try {
      DlConfig dl = spec.dl;
      dl.n_sources = sc.n_sources;
      const DlResult fit = run_dl(truth.observations.values, dl, spec.solver,
                                  derive_seed(trial_seed, 101, m));
      const SignalMatrix x_hat =
          apply_alignment(fit.signal, align_sources(truth.signals, fit.signal));

      for (; v < variants.size() && variants[v].method == static_cast<int>(m);
           ++v) {
        const VariantRef& ref = variants[v];
        std::vector<CellOutcome>& cells = out.cells[v];
        cells.reserve(cfg.gamma_grid.size());
        for (double g : cfg.gamma_grid) {
          CellOutcome cell;
          cell.gamma = g;
          if (ref.kind == VariantKind::raw) {
            const ActivationMatrix s_hat = quantize_matrix(x_hat, g);
            cell.det = detection_metrics(truth.states, s_hat);
            cell.evm = evm(truth.signals, x_hat, truth.states, s_hat);
          } else {
            PsfConfig pc;
            pc.quantizer.gamma = g;
            pc.estimate_params = ref.kind == VariantKind::em;
            pc.hmm = sc.activity;
            pc.bac = cfg.psf.bac;
            pc.em = cfg.psf.em;
            const PsfResult smoothed = psf_pipeline(x_hat, pc);
            cell.det = detection_metrics(truth.states, smoothed.states);
            cell.evm =
                evm(truth.signals, smoothed.signal, truth.states, smoothed.states);
            if (ref.kind == VariantKind::em && g == cfg.psf.quantizer.gamma) {
              EmFitRecord rec;
              rec.variant = static_cast<int>(v);
              rec.hmm = smoothed.fitted_hmm;
              rec.bac = smoothed.fitted_bac;
              rec.raw_flips = measured_flips(truth.states, quantize_matrix(x_hat, g));
              out.em_fits.push_back(std::move(rec));
            }
          }
          cells.push_back(std::move(cell));
        }
      }
    } catch (const std::exception& e) {
      throw error("method '" + spec.name + "': " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Monte-Carlo runner

// Index-claiming pool; results land in caller-owned slots so the reduction
// order never depends on scheduling. The body must not throw.
inline void parallel_trials(int n, int workers,
                            const std::function<void(int)>& body) {
  check_param(workers >= 1, "workers must be positive");
  const int used = std::min(workers, std::max(n, 1));
  if (used <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(used));
  for (int w = 0; w < used; ++w)
    pool.emplace_back([&next, n, &body] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
    });
  for (std::thread& th : pool) th.join();
}

struct RunResult {
  std::filesystem::path out_dir;
  Json summary;
  int trials_requested = 0;
  int trials_ok = 0;
  std::vector<std::string> failures;
};

namespace detail {

inline Json finite_or_null(double v) {
  return std::isfinite(v) ? Json(v) : Json();
}

inline std::pair<double, double> mean_se(const std::vector<double>& xs) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (xs.empty()) return {nan, nan};
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() < 2) return {mean, nan};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

}  // namespace detail

inline RunResult run_experiment(const ExperimentConfig& input,
                                const std::filesystem::path& out_dir,
                                int workers) {
  ExperimentConfig cfg = input;
  cfg.validate();
  check_param(!cfg.methods.empty(), "a run needs at least one method");
  if (cfg.sweep.axis == SweepAxis::gamma) {
    cfg.gamma_grid = cfg.sweep.grid;
    cfg.sweep = SweepSpec{};
  }
  const auto t0 = std::chrono::steady_clock::now();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  const std::vector<VariantRef> variants = enumerate_variants(cfg);
  const bool swept = cfg.sweep.axis != SweepAxis::none;
  const std::vector<double> points =
      swept ? cfg.sweep.grid : std::vector<double>{0.0};
  const std::size_t n_gamma = cfg.gamma_grid.size();
  const bool any_em = std::any_of(
      variants.begin(), variants.end(),
      [](const VariantRef& r) { return r.kind == VariantKind::em; });
  const double nan = std::numeric_limits<double>::quiet_NaN();

  RunResult result;
  result.out_dir = out_dir;
  result.trials_requested = cfg.trials * static_cast<int>(points.size());

  Json summary_results = Json::array();
  Json seeds_by_tag = Json::object();
  std::vector<std::string> file_names;

  CsvTable sweep_table;
  sweep_table.header = {"axis",
                        "value",
                        "method",
                        "pd_at_pfa_0.07",
                        "pd_at_pfa_0.07_se",
                        "pd_at_pfa_0.1",
                        "pd_at_pfa_0.1_se",
                        "evm_at_pd_0.8",
                        "evm_at_pd_0.8_se",
                        "trials"};
  CsvTable params_table;
  params_table.header = {"axis",   "value",  "trial",  "method", "source",
                         "p",      "q",      "p_flip", "q_flip", "true_p",
                         "true_q", "raw_p_flip", "raw_q_flip"};

  for (std::size_t sp = 0; sp < points.size(); ++sp) {
    ExperimentConfig eff = cfg;
    std::string tag = "base";
    if (swept) {
      apply_axis_value(eff, points[sp]);
      tag = axis_name(cfg.sweep.axis) + "_" + format_double(points[sp]);
    }
    eff.validate();

    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(cfg.trials));
    for (int t = 0; t < cfg.trials; ++t)
      seeds[static_cast<std::size_t>(t)] =
          derive_seed(cfg.base_seed, static_cast<std::uint64_t>(t), sp);
    seeds_by_tag[tag] = seeds;

    std::vector<std::optional<TrialOutcome>> outcomes(
        static_cast<std::size_t>(cfg.trials));
    std::vector<std::string> errors(static_cast<std::size_t>(cfg.trials));
    parallel_trials(cfg.trials, workers, [&](int t) {
      const std::size_t k = static_cast<std::size_t>(t);
      try {
        outcomes[k] = run_trial(eff, seeds[k]);
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    });

    struct Acc {
      std::vector<DetectionCounts> counts;
      std::vector<double> err, ref;
      std::vector<double> pfa_sum, pd_sum, evm_sum;
      std::vector<int> pfa_n, pd_n, evm_n;
      std::vector<double> pd007, pd010, evm080;
    };
    std::vector<Acc> acc(variants.size());
    for (Acc& a : acc) {
      a.counts.resize(n_gamma);
      a.err.assign(n_gamma, 0.0);
      a.ref.assign(n_gamma, 0.0);
      a.pfa_sum.assign(n_gamma, 0.0);
      a.pd_sum.assign(n_gamma, 0.0);
      a.evm_sum.assign(n_gamma, 0.0);
      a.pfa_n.assign(n_gamma, 0);
      a.pd_n.assign(n_gamma, 0);
      a.evm_n.assign(n_gamma, 0);
    }

    int ok = 0;
    std::vector<std::string> failures;
    for (int t = 0; t < cfg.trials; ++t) {
      const std::size_t k = static_cast<std::size_t>(t);
      if (!outcomes[k]) {
        failures.push_back("trial " + std::to_string(t) + ": " + errors[k]);
        continue;
      }
      ++ok;
      const TrialOutcome& tr = *outcomes[k];
      for (std::size_t v = 0; v < variants.size(); ++v) {
        Acc& a = acc[v];
        std::vector<RocSample> samples;
        for (std::size_t g = 0; g < n_gamma; ++g) {
          const CellOutcome& c = tr.cells[v][g];
          a.counts[g].true_active += c.det.counts.true_active;
          a.counts[g].detected_active += c.det.counts.detected_active;
          a.counts[g].true_inactive += c.det.counts.true_inactive;
          a.counts[g].false_active += c.det.counts.false_active;
          a.err[g] += c.evm.error_energy;
          a.ref[g] += c.evm.reference_energy;
          if (c.det.pd_defined) {
            a.pd_sum[g] += c.det.pd;
            ++a.pd_n[g];
          }
          if (c.det.pfa_defined) {
            a.pfa_sum[g] += c.det.pfa;
            ++a.pfa_n[g];
          }
          if (c.evm.defined) {
            a.evm_sum[g] += c.evm.evm_percent;
            ++a.evm_n[g];
          }
          if (c.det.pd_defined && c.det.pfa_defined)
            samples.push_back({c.gamma, c.det.pfa, c.det.pd,
                               c.evm.defined ? c.evm.evm_percent : nan});
        }
        const double h7 = pd_at_pfa(samples, 0.07);
        if (std::isfinite(h7)) a.pd007.push_back(h7);
        const double h10 = pd_at_pfa(samples, 0.10);
        if (std::isfinite(h10)) a.pd010.push_back(h10);
        const double e8 = evm_at_pd(samples, 0.8);
        if (std::isfinite(e8)) a.evm080.push_back(e8);
      }
      for (const EmFitRecord& rec : tr.em_fits) {
        const std::string& label =
            variants[static_cast<std::size_t>(rec.variant)].label;
        for (std::size_t i = 0; i < rec.hmm.size(); ++i)
          params_table.rows.push_back(
              {axis_name(cfg.sweep.axis),
               swept ? format_double(points[sp]) : "nan",
               std::to_string(t), label, std::to_string(i),
               format_double(rec.hmm[i].p), format_double(rec.hmm[i].q),
               format_double(rec.bac[i].p_flip), format_double(rec.bac[i].q_flip),
               format_double(eff.scenario.activity.p),
               format_double(eff.scenario.activity.q),
               format_double(rec.raw_flips[i][0]),
               format_double(rec.raw_flips[i][1])});
      }
    }

    CsvTable curves;
    curves.header = {"method",      "gamma",    "pfa",     "pd",
                     "evm",         "trial_count", "pd_envelope", "pfa_mean",
                     "pd_mean",     "evm_mean", "evm_trials"};
    Json variants_json = Json::array();
    for (std::size_t v = 0; v < variants.size(); ++v) {
      const Acc& a = acc[v];
      std::vector<RocSample> pooled(n_gamma);
      for (std::size_t g = 0; g < n_gamma; ++g) {
        RocSample& smp = pooled[g];
        smp.gamma = cfg.gamma_grid[g];
        const DetectionCounts& c = a.counts[g];
        smp.pd = c.true_active > 0 ? static_cast<double>(c.detected_active) /
                                         static_cast<double>(c.true_active)
                                   : nan;
        smp.pfa = c.true_inactive > 0 ? static_cast<double>(c.false_active) /
                                            static_cast<double>(c.true_inactive)
                                      : nan;
        smp.evm = a.ref[g] > 0.0 ? 100.0 * std::sqrt(a.err[g] / a.ref[g]) : nan;
      }
      std::vector<RocSample> defined;
      for (const RocSample& smp : pooled)
        if (std::isfinite(smp.pd) && std::isfinite(smp.pfa))
          defined.push_back(smp);

      for (std::size_t g = 0; g < n_gamma; ++g) {
        const RocSample& smp = pooled[g];
        double env = nan;
        if (std::isfinite(smp.pfa))
          for (const RocSample& other : defined)
            if (other.pfa <= smp.pfa && (std::isnan(env) || other.pd > env))
              env = other.pd;
        curves.rows.push_back(
            {variants[v].label, format_double(smp.gamma), format_double(smp.pfa),
             format_double(smp.pd), format_double(smp.evm), std::to_string(ok),
             format_double(env),
             format_double(a.pfa_n[g] ? a.pfa_sum[g] / a.pfa_n[g] : nan),
             format_double(a.pd_n[g] ? a.pd_sum[g] / a.pd_n[g] : nan),
             format_double(a.evm_n[g] ? a.evm_sum[g] / a.evm_n[g] : nan),
             std::to_string(a.evm_n[g])});
      }

      const double pool7 = pd_at_pfa(defined, 0.07);
      const double pool10 = pd_at_pfa(defined, 0.10);
      const double pool_evm = evm_at_pd(defined, 0.8);
      const auto [m7, se7] = detail::mean_se(a.pd007);
      const auto [m10, se10] = detail::mean_se(a.pd010);
      const auto [me, see] = detail::mean_se(a.evm080);

      Json vj;
      vj["method"] = variants[v].label;
      vj["pd_at_pfa_0.07"] = detail::finite_or_null(pool7);
      vj["pd_at_pfa_0.07_mean"] = detail::finite_or_null(m7);
      vj["pd_at_pfa_0.07_se"] = detail::finite_or_null(se7);
      vj["pd_at_pfa_0.1"] = detail::finite_or_null(pool10);
      vj["pd_at_pfa_0.1_mean"] = detail::finite_or_null(m10);
      vj["pd_at_pfa_0.1_se"] = detail::finite_or_null(se10);
      vj["evm_at_pd_0.8"] = detail::finite_or_null(pool_evm);
      vj["evm_at_pd_0.8_mean"] = detail::finite_or_null(me);
      vj["evm_at_pd_0.8_se"] = detail::finite_or_null(see);
      variants_json.push_back(vj);

      if (swept)
        sweep_table.rows.push_back({axis_name(cfg.sweep.axis),
                                    format_double(points[sp]),
                                    variants[v].label, format_double(pool7),
                                    format_double(se7), format_double(pool10),
                                    format_double(se10), format_double(pool_evm),
                                    format_double(see), std::to_string(ok)});
    }

    const std::string curves_name = "curves_" + tag + ".csv";
    write_table_csv(out_dir / curves_name, curves);
    file_names.push_back(curves_name);

    Json entry;
    entry["tag"] = tag;
    entry["axis_value"] = swept ? Json(points[sp]) : Json();
    entry["trials_ok"] = ok;
    entry["failures"] = failures;
    entry["variants"] = variants_json;
    summary_results.push_back(entry);

    result.trials_ok += ok;
    for (const std::string& f : failures)
      result.failures.push_back(swept ? tag + " " + f : f);
  }

  if (swept) {
    write_table_csv(out_dir / "sweep.csv", sweep_table);
    file_names.push_back("sweep.csv");
  }
  if (any_em) {
    write_table_csv(out_dir / "params.csv", params_table);
    file_names.push_back("params.csv");
  }

  Json summary;
  summary["name"] = cfg.name;
  summary["tool_version"] = kToolVersion;
  summary["config_hash"] = config_hash(input);
  summary["base_seed"] = cfg.base_seed;
  summary["trials"] = cfg.trials;
  summary["axis"] = axis_name(cfg.sweep.axis);
  summary["results"] = summary_results;
  write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");
  file_names.push_back("summary.json");
  result.summary = summary;

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  Json files = Json::object();
  for (const std::string& n : file_names)
    files[n] = hash_hex(file_checksum(out_dir / n));
  Json manifest;
  manifest["tool_version"] = kToolVersion;
  manifest["config_hash"] = config_hash(input);
  manifest["config"] = config_to_json(input);
  manifest["base_seed"] = cfg.base_seed;
  manifest["trial_seeds"] = seeds_by_tag;
  manifest["wall_clock_seconds"] = wall;
  manifest["files"] = files;
  write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");

  if (result.trials_ok == 0)
    throw error("all trials failed; first failure: " +
                (result.failures.empty() ? std::string("unknown")
                                         : result.failures.front()));
  return result;
}

// ---------------------------------------------------------------------------
// Scenario file generation

struct GenerateResult {
  std::filesystem::path out_dir;
  int trials = 0;
};

inline GenerateResult generate_scenarios(const ExperimentConfig& input,
                                         const std::filesystem::path& out_dir) {
  input.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  std::vector<std::uint64_t> seeds;
  std::vector<std::string> file_names;
  for (int t = 0; t < input.trials; ++t) {
    const std::uint64_t seed =
        derive_seed(input.base_seed, static_cast<std::uint64_t>(t), 0);
    seeds.push_back(seed);
    ScenarioConfig sc = input.scenario;
    sc.seed = seed;
    const ScenarioDraw d = draw_scenario(sc);

    char sub[32];
    std::snprintf(sub, sizeof sub, "trial_%03d", t);
    fs::create_directories(out_dir / sub);
    const std::string prefix = std::string(sub) + "/";
    write_states_csv(out_dir / sub / "states.csv", d.states);
    write_matrix_csv(out_dir / sub / "signals.csv", d.signals);
    write_matrix_csv(out_dir / sub / "channel.csv", d.channel);
    write_matrix_csv(out_dir / sub / "observations.csv", d.observations.values);
    for (const char* f : {"states.csv", "signals.csv", "channel.csv",
                          "observations.csv"})
      file_names.push_back(prefix + f);
  }

  Json files = Json::object();
  for (const std::string& n : file_names)
    files[n] = hash_hex(file_checksum(out_dir / n));
  Json manifest;
  manifest["tool_version"] = kToolVersion;
  manifest["config_hash"] = config_hash(input);
  manifest["config"] = config_to_json(input);
  manifest["base_seed"] = input.base_seed;
  manifest["trial_seeds"] = Json{{"base", seeds}};
  manifest["files"] = files;
  write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");

  return {out_dir, input.trials};
}

// ---------------------------------------------------------------------------
// Run directory verification

struct RunCheck {
  Json manifest;
  Json summary;  // null when the directory holds generated scenarios only
  std::vector<std::string> missing;
  std::vector<std::string> mismatched;
};

inline RunCheck load_run(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path mp = dir / "manifest.json";
  if (!fs::exists(mp))
    throw io_error("no runs found under '" + dir.string() + "'");
  RunCheck out;
  try {
    out.manifest = Json::parse(read_text_file(mp));
  } catch (const Json::exception& e) {
    throw io_error("corrupt manifest at '" + mp.string() + "': " + e.what());
  }
  if (!out.manifest.contains("files") || !out.manifest["files"].is_object())
    throw io_error("manifest lists no files at '" + mp.string() + "'");
  for (const auto& item : out.manifest["files"].items()) {
    const fs::path p = dir / item.key();
    if (!fs::exists(p)) {
      out.missing.push_back(item.key());
      continue;
    }
    if (hash_hex(file_checksum(p)) != item.value().get<std::string>())
      out.mismatched.push_back(item.key());
  }
  const fs::path sp = dir / "summary.json";
  if (fs::exists(sp)) {
    try {
      out.summary = Json::parse(read_text_file(sp));
    } catch (const Json::exception& e) {
      throw io_error("corrupt summary at '" + sp.string() + "': " + e.what());
    }
  }
  return out;
}

}  // namespace blindsep
