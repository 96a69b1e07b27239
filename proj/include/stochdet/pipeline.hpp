#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "stochdet/config.hpp"
#include "stochdet/detector.hpp"
#include "stochdet/provenance.hpp"

namespace stochdet {

enum class Stage { train, profile, attack, calibrate, detect, eval, simulate, report };
inline constexpr Stage kAllStages[] = {Stage::train,  Stage::profile, Stage::attack,   Stage::calibrate,
                                       Stage::detect, Stage::eval,    Stage::simulate, Stage::report};

std::string_view to_string(Stage s);
std::optional<Stage> parse_stage(std::string_view name);

/// A stage that could not complete; what() is "<stage>: <cause>".
class StageError : public std::runtime_error {
 public:
  StageError(Stage stage, const std::string& cause);
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

struct Splits {
  Dataset train;
  Dataset test;
  Dataset calibration;
};
/// Synthetic splits use disjoint index ranges of one stream; IDX files are
/// sliced in order and center-cropped to the nearest side the fixture
/// architecture accepts.
Splits load_splits(const ExperimentConfig& cfg);

Provenance provenance_of(const ExperimentConfig& cfg);

/// Fixed activation-noise levels reported next to the adaptive mode.
inline constexpr double kStudyLevels[] = {0.1, 0.9};

/// Runs one stage, reading earlier artifacts from cfg.output_dir. Throws
/// StageError (also for missing inputs from earlier stages).
void run_stage(const ExperimentConfig& cfg, Stage stage);
/// All stages in order.
void run_pipeline(const ExperimentConfig& cfg);

struct VerifyIssue {
  std::filesystem::path path;
  std::string problem;
};
/// Checks every artifact under cfg.output_dir: intact digest, and config hash,
/// base_seed and tool version matching `cfg`.
std::vector<VerifyIssue> verify_outputs(const ExperimentConfig& cfg);

/// Rebuilds a verdict from its JSON record.
DetectionVerdict verdict_from_record(const nlohmann::json& record);

}  // namespace stochdet
