#include "stochdet/config.hpp"

#include <set>

#include "stochdet/provenance.hpp"

namespace stochdet {

using nlohmann::json;

std::string DatasetSpec::to_string() const {
  if (kind == Kind::synth) return "synth:" + std::to_string(seed);
  return "idx:" + images.string() + ":" + labels.string();
}

DatasetSpec parse_dataset_spec(const std::string& text) {
  DatasetSpec d;
  if (text.rfind("synth:", 0) == 0) {
    const std::string rest = text.substr(6);
    if (rest.empty() || rest.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("dataset: synth seed must be a non-negative integer, got '" + rest + "'");
    try {
      d.seed = std::stoull(rest);
    } catch (const std::out_of_range&) {
      throw ConfigError("dataset: synth seed out of range: " + rest);
    }
    return d;
  }
  if (text.rfind("idx:", 0) == 0) {
    const std::string rest = text.substr(4);
    const auto colon = rest.find(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size())
      throw ConfigError("dataset: expected idx:<images>:<labels>, got '" + text + "'");
    d.kind = DatasetSpec::Kind::idx;
    d.images = rest.substr(0, colon);
    d.labels = rest.substr(colon + 1);
    return d;
  }
  throw ConfigError("dataset: expected synth:<seed> or idx:<images>:<labels>, got '" + text + "'");
}

namespace {

NamedAttack make_attack(std::string name, AttackKind kind, double k, double c, double beta) {
  AttackConfig a;
  a.kind = kind;
  a.k = k;
  a.c = c;
  a.beta = beta;
  a.steps = 200;
  a.step_size = 0.05;
  return {std::move(name), a};
}

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError(where + ": unknown field '" + key + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

json attack_json(const NamedAttack& a) {
  return {{"name", a.name},
          {"kind", std::string(to_string(a.config.kind))},
          {"target", std::string(to_string(a.config.target_mode))},
          {"k", a.config.k},
          {"c", a.config.c},
          {"beta", a.config.beta},
          {"steps", a.config.steps},
          {"step_size", a.config.step_size}};
}

NamedAttack attack_from_json(const json& j, std::size_t index) {
  const std::string where = "attacks[" + std::to_string(index) + "]";
  check_keys(j, where, {"name", "kind", "target", "k", "c", "beta", "steps", "step_size"});
  NamedAttack a;
  std::string kind = "cw_l2", target = "next";
  read(j, "name", a.name, where);
  read(j, "kind", kind, where);
  read(j, "target", target, where);
  read(j, "k", a.config.k, where);
  read(j, "c", a.config.c, where);
  read(j, "beta", a.config.beta, where);
  read(j, "steps", a.config.steps, where);
  read(j, "step_size", a.config.step_size, where);
  try {
    a.config.kind = parse_attack_kind(kind);
    a.config.target_mode = parse_target_mode(target);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  if (a.name.empty()) throw ConfigError(where + ".name: must be non-empty");
  return a;
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.dataset.seed = 7;
  cfg.train.epochs = 10;
  cfg.train.lr = 0.02;
  cfg.noise.sr_hi = 0.4;
  cfg.attacks = {make_attack("cw_k0", AttackKind::cw_l2, 0.0, 1.0, 0.0),
                 make_attack("cw_k2", AttackKind::cw_l2, 2.0, 1.0, 0.0),
                 make_attack("cw_k5", AttackKind::cw_l2, 5.0, 1.0, 0.0),
                 make_attack("aware_b0.0001", AttackKind::defense_aware, 0.0, 0.3, 1e-4),
                 make_attack("aware_b0.1", AttackKind::defense_aware, 0.0, 0.3, 1e-1)};
  return cfg;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg = default_config();
  check_keys(j, "config", {"dataset", "splits", "image_size", "model_path", "train", "noise", "detector", "attacks",
                           "samples", "accelerator", "output_dir", "base_seed"});
  if (j.contains("dataset")) {
    std::string spec;
    read(j, "dataset", spec, "config");
    cfg.dataset = parse_dataset_spec(spec);
  }
  if (j.contains("splits")) {
    const auto& s = j["splits"];
    check_keys(s, "splits", {"train", "test", "calibration"});
    read(s, "train", cfg.splits.train, "splits");
    read(s, "test", cfg.splits.test, "splits");
    read(s, "calibration", cfg.splits.calibration, "splits");
  }
  read(j, "image_size", cfg.image_size, "config");
  if (j.contains("model_path") && !j["model_path"].is_null()) {
    std::string p;
    read(j, "model_path", p, "config");
    cfg.model_path = p;
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, "train", {"epochs", "lr", "batch_size", "momentum"});
    read(t, "epochs", cfg.train.epochs, "train");
    read(t, "lr", cfg.train.lr, "train");
    read(t, "batch_size", cfg.train.batch_size, "train");
    read(t, "momentum", cfg.train.momentum, "train");
  }
  if (j.contains("noise")) {
    const auto& n = j["noise"];
    check_keys(n, "noise", {"sr_lo", "sr_hi", "gamma", "mode"});
    read(n, "sr_lo", cfg.noise.sr_lo, "noise");
    read(n, "sr_hi", cfg.noise.sr_hi, "noise");
    read(n, "gamma", cfg.noise.gamma, "noise");
    if (n.contains("mode")) {
      std::string mode;
      read(n, "mode", mode, "noise");
      try {
        cfg.noise.mode = parse_noise_mode(mode);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("noise.mode: ") + e.what());
      }
    }
  }
  if (j.contains("detector")) {
    const auto& d = j["detector"];
    check_keys(d, "detector", {"max_runs", "target_fpr"});
    read(d, "max_runs", cfg.max_runs, "detector");
    read(d, "target_fpr", cfg.target_fpr, "detector");
  }
  if (j.contains("attacks")) {
    if (!j["attacks"].is_array()) throw ConfigError("attacks: expected an array");
    cfg.attacks.clear();
    for (std::size_t i = 0; i < j["attacks"].size(); ++i) cfg.attacks.push_back(attack_from_json(j["attacks"][i], i));
  }
  if (j.contains("samples")) {
    const auto& s = j["samples"];
    check_keys(s, "samples", {"attack", "benign", "simulate"});
    read(s, "attack", cfg.attack_samples, "samples");
    read(s, "benign", cfg.benign_samples, "samples");
    read(s, "simulate", cfg.simulate_samples, "samples");
  }
  if (j.contains("accelerator")) {
    const auto& a = j["accelerator"];
    check_keys(a, "accelerator", {"group_size", "window", "tiles"});
    read(a, "group_size", cfg.accelerator.group_size, "accelerator");
    read(a, "window", cfg.accelerator.lookahead_window, "accelerator");
    read(a, "tiles", cfg.accelerator.tiles, "accelerator");
  }
  if (j.contains("output_dir")) {
    std::string out;
    read(j, "output_dir", out, "config");
    cfg.output_dir = out;
  }
  read(j, "base_seed", cfg.base_seed, "config");
  return cfg;
}

json to_json(const ExperimentConfig& cfg) {
  json attacks = json::array();
  for (const auto& a : cfg.attacks) attacks.push_back(attack_json(a));
  return {{"dataset", cfg.dataset.to_string()},
          {"splits", {{"train", cfg.splits.train}, {"test", cfg.splits.test}, {"calibration", cfg.splits.calibration}}},
          {"image_size", cfg.image_size},
          {"model_path", cfg.model_path ? json(cfg.model_path->string()) : json(nullptr)},
          {"train",
           {{"epochs", cfg.train.epochs},
            {"lr", cfg.train.lr},
            {"batch_size", cfg.train.batch_size},
            {"momentum", cfg.train.momentum}}},
          {"noise",
           {{"sr_lo", cfg.noise.sr_lo},
            {"sr_hi", cfg.noise.sr_hi},
            {"gamma", cfg.noise.gamma},
            {"mode", std::string(to_string(cfg.noise.mode))}}},
          {"detector", {{"max_runs", cfg.max_runs}, {"target_fpr", cfg.target_fpr}}},
          {"attacks", attacks},
          {"samples",
           {{"attack", cfg.attack_samples}, {"benign", cfg.benign_samples}, {"simulate", cfg.simulate_samples}}},
          {"accelerator",
           {{"group_size", cfg.accelerator.group_size},
            {"window", cfg.accelerator.lookahead_window},
            {"tiles", cfg.accelerator.tiles}}},
          {"output_dir", cfg.output_dir.string()},
          {"base_seed", cfg.base_seed}};
}

void validate(const ExperimentConfig& cfg) {
  auto rethrow = [](const std::string& field, auto&& check) {
    try {
      check();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(field + ": " + e.what());
    }
  };
  if (cfg.splits.train == 0 && !cfg.model_path) throw ConfigError("splits.train: must be positive when no model is given");
  if (cfg.splits.test == 0) throw ConfigError("splits.test: must be positive");
  if (cfg.splits.calibration < 100) throw ConfigError("splits.calibration: calibration needs at least 100 samples");
  if (cfg.image_size < 12 || cfg.image_size % 4 != 2)
    throw ConfigError("image_size: must be at least 12 and leave 2 modulo 4 (two valid 3x3 convolutions, two 2x2 pools)");
  if (cfg.model_path && !std::filesystem::exists(*cfg.model_path))
    throw ConfigError("model_path: file does not exist: " + cfg.model_path->string());
  if (cfg.dataset.kind == DatasetSpec::Kind::idx) {
    if (!std::filesystem::exists(cfg.dataset.images))
      throw ConfigError("dataset: image file does not exist: " + cfg.dataset.images.string());
    if (!std::filesystem::exists(cfg.dataset.labels))
      throw ConfigError("dataset: label file does not exist: " + cfg.dataset.labels.string());
  }
  if (cfg.train.epochs == 0) throw ConfigError("train.epochs: must be positive");
  if (!(cfg.train.lr > 0.0)) throw ConfigError("train.lr: must be positive");
  if (cfg.train.batch_size == 0) throw ConfigError("train.batch_size: must be positive");
  if (!(cfg.train.momentum >= 0.0 && cfg.train.momentum < 1.0)) throw ConfigError("train.momentum: must be in [0,1)");
  rethrow("noise", [&] { cfg.noise.validate(); });
  if (cfg.max_runs < 1) throw ConfigError("detector.max_runs: must be at least 1");
  if (!(cfg.target_fpr > 0.0 && cfg.target_fpr < 1.0)) throw ConfigError("detector.target_fpr: must be in (0,1)");
  std::set<std::string> names;
  for (std::size_t i = 0; i < cfg.attacks.size(); ++i) {
    const auto& a = cfg.attacks[i];
    if (!names.insert(a.name).second) throw ConfigError("attacks: duplicate name '" + a.name + "'");
    if (a.name.find_first_of("/\\ ,") != std::string::npos)
      throw ConfigError("attacks[" + std::to_string(i) + "].name: must not contain '/', '\\', ',' or spaces");
    rethrow("attacks[" + std::to_string(i) + "]", [&] { a.config.validate(); });
  }
  if (cfg.attack_samples == 0) throw ConfigError("samples.attack: must be positive");
  if (cfg.benign_samples == 0) throw ConfigError("samples.benign: must be positive");
  rethrow("accelerator", [&] { cfg.accelerator.validate(); });
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  j.erase("output_dir");
  return sha256_hex(j.dump());
}

}  // namespace stochdet
