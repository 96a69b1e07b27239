#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stochdet/model.hpp"
#include "stochdet/sparsifier.hpp"
#include "stochdet/threshold_table.hpp"

namespace stochdet {

/// Greedy cutoffs apply to the first noisy pass only; the average cutoffs to
/// the running mean. Ordered t1_greedy <= t1_avg <= t2_avg <= t2_greedy in [0,2].
struct DetectionThresholds {
  double t1_greedy = 0.0;
  double t2_greedy = 2.0;
  double t1_avg = 0.0;
  double t2_avg = 2.0;

  bool ordered() const;
  void validate() const;

  friend bool operator==(const DetectionThresholds&, const DetectionThresholds&) = default;
};

enum class Label { benign, adversarial };
enum class Termination { greedy, average, cap };

std::string_view to_string(Label label);
std::string_view to_string(Termination t);

struct DetectionVerdict {
  Label label = Label::benign;
  std::size_t runs_used = 0;
  std::vector<double> l1_history;
  std::size_t final_class = 0;
  Termination terminated_by = Termination::cap;

  friend bool operator==(const DetectionVerdict&, const DetectionVerdict&) = default;
};

struct DetectorConfig {
  DetectionThresholds thresholds;
  std::size_t max_runs = 5;
  NoiseConfig noise;
  std::uint64_t base_seed = 0;
};

/// Sum of absolute element differences. Throws ShapeError on length mismatch.
double l1_distance(const ProbVector& p, const ProbVector& q);
double l1_distance(std::span<const double> p, std::span<const double> q);

struct Decision {
  Label label;
  Termination by;
};

/// One step of the decision rule after the given passes. Returns nullopt when
/// another pass is needed. At the cap the running mean is compared with the
/// midpoint of the average thresholds; a tie is benign.
std::optional<Decision> decide(std::span<const double> distances, const DetectionThresholds& t,
                               std::size_t max_runs);

/// Drives the decision rule with an arbitrary distance source (pass index is 1-based).
DetectionVerdict run_detection(const std::function<double(std::size_t pass)>& distance_of_pass,
                               const DetectionThresholds& t, std::size_t max_runs,
                               std::size_t final_class = 0);

/// Seed for noisy pass `pass` (1-based) under `base_seed`.
std::uint64_t pass_seed(std::uint64_t base_seed, std::size_t pass);

/// L1 distance between the reference output and one noisy pass under the configured noise mode.
double noisy_pass_distance(const Model& model, const ThresholdTable& table, const Tensor& input,
                           const ProbVector& reference, const NoiseConfig& noise, std::uint64_t seed);

/// Full stochastic inference: reference pass, adaptive noisy passes, verdict.
DetectionVerdict stochastic_inference(const Model& model, const ThresholdTable& table, const Tensor& input,
                                      const DetectorConfig& cfg);

/// Quantile thresholds from first-pass benign distances (at least 100 samples):
/// t1_avg = median, t2_avg = (1 - fpr) quantile, t2_greedy = (1 - fpr/4)
/// quantile, t1_greedy = 10th percentile; then clamped into order.
DetectionThresholds calibrate(std::span<const double> benign_l1, double target_fpr);

/// Linear-interpolation sample quantile (Hyndman-Fan type 7).
double quantile(std::vector<double> samples, double q);

struct Metrics {
  std::optional<double> detection_rate;  // none when no adversarial inputs were given
  std::optional<double> fpr;             // none when no benign inputs were given
  std::optional<double> tpr;
  double mean_runs = 0.0;
  std::size_t benign_count = 0;
  std::size_t adversarial_count = 0;
};

struct Evaluation {
  Metrics metrics;
  std::vector<DetectionVerdict> benign;
  std::vector<DetectionVerdict> adversarial;
};

/// Per-input seeds are derived from cfg.base_seed and the input's position.
Evaluation evaluate(const Model& model, const ThresholdTable& table, const DetectorConfig& cfg,
                    std::span<const Tensor> benign_set, std::span<const Tensor> adversarial_set);

Metrics summarize(std::span<const DetectionVerdict> benign, std::span<const DetectionVerdict> adversarial);

/// Input-specific base seed used by evaluate.
std::uint64_t input_seed(std::uint64_t base_seed, std::string_view set_name, std::size_t index);

nlohmann::json to_json(const DetectionThresholds& t);
DetectionThresholds thresholds_from_json(const nlohmann::json& j);
nlohmann::json verdict_record(const std::string& input_id, const DetectionVerdict& v);

}  // namespace stochdet
