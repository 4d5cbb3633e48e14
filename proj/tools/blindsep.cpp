#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "blindsep/experiment.hpp"

namespace fs = std::filesystem;
using blindsep::ExperimentConfig;
using Json = blindsep::Json;

namespace {

struct ConfigFlags {
  std::string config_path;
  std::string figure;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::string out_dir;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  auto* config =
      cmd->add_option("--config", f.config_path, "experiment config json file")
          ->check(CLI::ExistingFile);
  std::string figures;
  for (const auto& [name, blurb] : blindsep::figure_presets())
    figures += (figures.empty() ? "" : ", ") + name;
  cmd->add_option("--figure", f.figure, "figure preset (" + figures + ")")
      ->excludes(config);
  cmd->add_option("--seed", f.seed, "override the base seed");
  cmd->add_option("--trials", f.trials, "override the trial count")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--out", f.out_dir, "output directory");
}

ExperimentConfig resolve_config(const ConfigFlags& f) {
  if (f.config_path.empty() && f.figure.empty())
    throw blindsep::parameter_error("pass --config <file> or --figure <name>");
  ExperimentConfig cfg;
  if (!f.figure.empty()) {
    cfg = blindsep::figure_preset(f.figure);
  } else {
    Json j;
    try {
      j = Json::parse(blindsep::read_text_file(f.config_path));
    } catch (const Json::exception& e) {
      throw blindsep::parameter_error("config parse: " +
                                      std::string(e.what()));
    }
    cfg = blindsep::config_from_json(j);
  }
  if (f.seed) cfg.base_seed = *f.seed;
  if (f.trials) cfg.trials = *f.trials;
  cfg.validate();
  return cfg;
}

fs::path resolve_out_dir(const ConfigFlags& f, const ExperimentConfig& cfg,
                         const char* suffix) {
  if (!f.out_dir.empty()) return f.out_dir;
  return fs::path("runs") /
         (cfg.name + "-" + blindsep::config_hash(cfg).substr(0, 8) + "-s" +
          std::to_string(cfg.base_seed) + suffix);
}

int resolve_workers(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("BLINDSEP_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

std::string cell(const Json& variant, const char* key, const char* se_key,
                 int decimals) {
  if (!variant.contains(key) || variant[key].is_null()) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals,
                variant[key].get<double>());
  std::string s = buf;
  if (variant.contains(se_key) && !variant[se_key].is_null()) {
    std::snprintf(buf, sizeof buf, " +/- %.*f", decimals,
                  variant[se_key].get<double>());
    s += buf;
  }
  return s;
}

void print_result_entry(const Json& entry) {
  if (!entry["tag"].get<std::string>().empty() ||
      !entry["axis_value"].is_null()) {
    std::printf("[%s]", entry["tag"].get<std::string>().c_str());
    std::printf("  trials ok: %d\n", entry["trials_ok"].get<int>());
  } else {
    std::printf("trials ok: %d\n", entry["trials_ok"].get<int>());
  }
  for (const Json& fail : entry["failures"])
    std::printf("  failed  %s\n", fail.get<std::string>().c_str());
  std::printf("  %-14s %-18s %-18s %-18s\n", "method", "pd@pfa=0.07",
              "pd@pfa=0.1", "evm%@pd>=0.8");
  for (const Json& v : entry["variants"])
    std::printf("  %-14s %-18s %-18s %-18s\n",
                v["method"].get<std::string>().c_str(),
                cell(v, "pd_at_pfa_0.07", "pd_at_pfa_0.07_se", 3).c_str(),
                cell(v, "pd_at_pfa_0.1", "pd_at_pfa_0.1_se", 3).c_str(),
                cell(v, "evm_at_pd_0.8", "evm_at_pd_0.8_se", 2).c_str());

  for (const Json& v : entry["variants"]) {
    const std::string label = v["method"].get<std::string>();
    const std::string::size_type plus = label.find("+psf");
    if (plus == std::string::npos) continue;
    const std::string base = label.substr(0, plus);
    for (const Json& raw : entry["variants"]) {
      if (raw["method"].get<std::string>() != base) continue;
      if (v["pd_at_pfa_0.07"].is_null() || raw["pd_at_pfa_0.07"].is_null())
        continue;
      std::printf("  psf gain at pfa=0.07 for %s: %+.3f\n", base.c_str(),
                  v["pd_at_pfa_0.07"].get<double>() -
                      raw["pd_at_pfa_0.07"].get<double>());
    }
  }
}

int cmd_report(const std::string& dir) {
  const blindsep::RunCheck check = blindsep::load_run(dir);
  int bad = 0;
  for (const std::string& f : check.missing) {
    std::fprintf(stderr, "missing file: %s\n", f.c_str());
    ++bad;
  }
  for (const std::string& f : check.mismatched) {
    std::fprintf(stderr, "checksum mismatch: %s\n", f.c_str());
    ++bad;
  }

  const Json& m = check.manifest;
  if (check.summary.is_null()) {
    std::printf("scenario data at %s\n", dir.c_str());
    if (m.contains("config_hash"))
      std::printf("config %s, %zu files\n",
                  m["config_hash"].get<std::string>().c_str(),
                  m["files"].size());
    return bad ? 1 : 0;
  }

  const Json& s = check.summary;
  std::printf("run '%s'  (config %s, base seed %llu, trials %d, axis %s)\n",
              s["name"].get<std::string>().c_str(),
              s["config_hash"].get<std::string>().c_str(),
              static_cast<unsigned long long>(s["base_seed"].get<std::uint64_t>()),
              s["trials"].get<int>(), s["axis"].get<std::string>().c_str());
  for (const Json& entry : s["results"]) print_result_entry(entry);
  return bad ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"blind source separation experiment harness"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, run_flags;
  bool no_noise = false;
  int workers_flag = 0;
  std::string report_dir;

  CLI::App* gen = app.add_subcommand(
      "generate", "write scenario matrices (states, signals, channel, "
                  "observations) per trial");
  add_config_flags(gen, gen_flags);
  gen->add_flag("--no-noise", no_noise,
                "disable measurement noise so observations equal channel "
                "times signals");

  CLI::App* run = app.add_subcommand(
      "run", "run the experiment and write curves, summary, and manifest");
  add_config_flags(run, run_flags);
  run->add_option("--workers", workers_flag,
                  "trial-level worker threads (default: BLINDSEP_WORKERS or "
                  "hardware)")
      ->check(CLI::PositiveNumber);

  CLI::App* rep =
      app.add_subcommand("report", "print headline metrics for a run");
  rep->add_option("dir", report_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      ExperimentConfig cfg = resolve_config(gen_flags);
      if (no_noise)
        cfg.scenario.snr_db = std::numeric_limits<double>::infinity();
      const fs::path out = resolve_out_dir(gen_flags, cfg, "-data");
      const blindsep::GenerateResult r =
          blindsep::generate_scenarios(cfg, out);
      std::printf("wrote %d trial(s) under %s\n", r.trials,
                  r.out_dir.string().c_str());
    } else if (run->parsed()) {
      ExperimentConfig cfg = resolve_config(run_flags);
      const fs::path out = resolve_out_dir(run_flags, cfg, "");
      const int workers = resolve_workers(workers_flag);
      const blindsep::RunResult r =
          blindsep::run_experiment(cfg, out, workers);
      for (const std::string& fail : r.failures)
        std::fprintf(stderr, "trial failed: %s\n", fail.c_str());
      std::printf("completed %d/%d trial(s); wrote %s\n", r.trials_ok,
                  r.trials_requested, r.out_dir.string().c_str());
    } else if (rep->parsed()) {
      return cmd_report(report_dir);
    }
  } catch (const blindsep::error& e) {
    std::fprintf(stderr, "blindsep: %s\n", e.what());
    return 1;
  }
  return 0;
}
