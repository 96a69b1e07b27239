#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "stochdet/pipeline.hpp"

namespace {

using namespace stochdet;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Overrides {
  std::string config_path;
  std::optional<std::string> dataset, noise_mode, output_dir, model;
  std::optional<double> sr_lo, sr_hi, gamma;
  std::optional<std::size_t> group_size, window, tiles, max_runs;
  std::optional<std::uint64_t> base_seed;
};

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig cfg = default_config();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw ConfigError("config: cannot open " + o.config_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: " + o.config_path + ": " + e.what());
    }
    cfg = config_from_json(j);
  }
  if (o.dataset) cfg.dataset = parse_dataset_spec(*o.dataset);
  if (o.sr_lo) cfg.noise.sr_lo = *o.sr_lo;
  if (o.sr_hi) cfg.noise.sr_hi = *o.sr_hi;
  if (o.gamma) cfg.noise.gamma = *o.gamma;
  if (o.noise_mode) {
    try {
      cfg.noise.mode = parse_noise_mode(*o.noise_mode);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("--noise-mode: ") + e.what());
    }
  }
  if (o.group_size) cfg.accelerator.group_size = *o.group_size;
  if (o.window) cfg.accelerator.lookahead_window = *o.window;
  if (o.tiles) cfg.accelerator.tiles = *o.tiles;
  if (o.max_runs) cfg.max_runs = *o.max_runs;
  if (o.base_seed) cfg.base_seed = *o.base_seed;
  if (o.model) cfg.model_path = *o.model;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) cfg.output_dir = env;
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  validate(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic-inference adversarial detector: training, attacks, detection and accelerator simulation"};
  app.fallthrough();
  app.require_subcommand(1);
  Overrides o;
  app.add_option("-c,--config", o.config_path, "JSON experiment config (defaults to the built-in fixture)");
  app.add_option("--dataset", o.dataset, "synth:<seed> or idx:<images>:<labels>");
  app.add_option("--sr-lo", o.sr_lo, "Noise budget at zero confidence");
  app.add_option("--sr-hi", o.sr_hi, "Noise budget at full confidence");
  app.add_option("--gamma", o.gamma, "Budget curve steepness");
  app.add_option("--noise-mode", o.noise_mode, "sparsify or activation");
  app.add_option("--group-size", o.group_size, "Filters per accelerator group");
  app.add_option("--window", o.window, "Look-ahead window in inputs");
  app.add_option("--tiles", o.tiles, "Parallel accelerator tiles");
  app.add_option("--max-runs", o.max_runs, "Cap on noisy passes per input");
  app.add_option("--base-seed", o.base_seed, "Root of every random stream");
  app.add_option("--model", o.model, "Use this model file instead of training");
  app.add_option("-o,--output-dir", o.output_dir,
                 std::string("Output directory (overrides ") + kOutputDirEnv + " and the config)");

  std::optional<Stage> stage;
  bool all = false, verify = false, show = false;
  for (Stage s : kAllStages) {
    auto* sub = app.add_subcommand(std::string(to_string(s)), "Run the " + std::string(to_string(s)) + " stage");
    sub->callback([&stage, s] { stage = s; });
  }
  app.add_subcommand("run", "Run every stage in order")->callback([&] { all = true; });
  app.add_subcommand("verify", "Check every artifact's digest and provenance against the config")
      ->callback([&] { verify = true; });
  app.add_subcommand("config", "Print the resolved config and its hash")->callback([&] { show = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  ExperimentConfig cfg;
  try {
    cfg = resolve(o);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  if (show) {
    std::cout << to_json(cfg).dump(2) << "\nconfig_hash " << config_hash(cfg) << "\n";
    return kExitOk;
  }
  if (verify) {
    const auto issues = verify_outputs(cfg);
    for (const auto& i : issues) std::cerr << i.path.string() << ": " << i.problem << "\n";
    if (!issues.empty()) {
      std::cerr << issues.size() << " artifact(s) failed verification\n";
      return kExitStage;
    }
    std::cout << "all artifacts match config " << config_hash(cfg) << "\n";
    return kExitOk;
  }
  try {
    if (all) run_pipeline(cfg);
    else run_stage(cfg, *stage);
  } catch (const StageError& e) {
    std::cerr << "stage failed: " << e.what() << "\n";
    return kExitStage;
  }
  return kExitOk;
}
