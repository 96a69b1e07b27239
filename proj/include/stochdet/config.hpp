#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "stochdet/attacker.hpp"
#include "stochdet/dataset.hpp"
#include "stochdet/dyscnn.hpp"
#include "stochdet/sparsifier.hpp"
#include "stochdet/train.hpp"

namespace stochdet {

inline constexpr const char* kToolVersion = "0.1.0";
/// Environment variable that, when set, replaces the configured output directory.
inline constexpr const char* kOutputDirEnv = "STOCHDET_OUTPUT_DIR";

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// "synth:<seed>" or "idx:<images>:<labels>".
struct DatasetSpec {
  enum class Kind { synth, idx } kind = Kind::synth;
  std::uint64_t seed = 0;
  std::filesystem::path images;
  std::filesystem::path labels;

  std::string to_string() const;
};
DatasetSpec parse_dataset_spec(const std::string& text);

/// Sequential split sizes; synthetic sets draw the ranges [0,train),
/// [train,train+test), ... from one stream, IDX sets slice the file in order.
struct SplitSizes {
  std::size_t train = 4000;
  std::size_t test = 1000;
  std::size_t calibration = 400;
};

struct NamedAttack {
  std::string name;
  AttackConfig config;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  SplitSizes splits;
  std::size_t image_size = kFixtureImageSize;
  std::optional<std::filesystem::path> model_path;  // skip training and load this model
  TrainConfig train;
  NoiseConfig noise;
  std::size_t max_runs = 5;
  double target_fpr = 0.05;
  std::vector<NamedAttack> attacks;
  std::size_t attack_samples = 250;  // correctly classified test inputs attacked
  std::size_t benign_samples = 300;  // correctly classified test inputs scored as benign
  std::size_t simulate_samples = 20;
  AcceleratorConfig accelerator;
  std::filesystem::path output_dir = "out";
  std::uint64_t base_seed = 7;
};

/// Fixture defaults used when the JSON omits a field.
ExperimentConfig default_config();

/// Fills every field from `j` on top of default_config(). Throws ConfigError
/// naming the offending field.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Range and consistency checks; throws ConfigError naming the field.
void validate(const ExperimentConfig& cfg);

/// SHA-256 of the canonical JSON form, excluding output_dir.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace stochdet
