#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stochdet/attacker.hpp"

namespace stochdet {

struct SampleStats {
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 when count < 2
};
SampleStats sample_stats(std::span<const double> values);

/// (adversarial mean - benign mean) / benign std; +inf when the benign std is 0
/// and the means differ.
double separation(const SampleStats& benign, const SampleStats& adversarial);

/// Fixed-width bins over [0, 2]; the value 2 falls in the last bin.
struct Histogram {
  static constexpr double kWidth = 0.05;
  static constexpr std::size_t kBins = 40;
  std::vector<std::size_t> counts = std::vector<std::size_t>(kBins, 0);

  std::size_t total() const;
};
/// Throws std::invalid_argument for values outside [0, 2] beyond 1e-9.
Histogram l1_histogram(std::span<const double> values);

/// One evaluated input set: the benign set or one attack.
struct DetectionRow {
  std::string set;
  std::optional<AttackKind> kind;  // none for the benign set
  double k = 0.0;
  double c = 0.0;
  double beta = 0.0;
  std::size_t attempted = 0;
  std::size_t samples = 0;  // inputs scored by the detector
  std::optional<double> detection_rate;
  std::optional<double> fpr;
  double mean_runs = 0.0;
  std::optional<double> mean_l2;
  std::optional<double> mean_l1_to_target;
  std::optional<double> mean_confidence;
};

/// Benign set first, then attacks by kind name, k, beta, c, set name.
std::vector<DetectionRow> sorted_rows(std::vector<DetectionRow> rows);

std::string detection_csv(std::span<const DetectionRow> rows);
/// cw_l2 rows only, by k.
std::string k_sweep_csv(std::span<const DetectionRow> rows);
/// defense_aware rows only, by beta.
std::string beta_sweep_csv(std::span<const DetectionRow> rows);

struct NamedHistogram {
  std::string set;
  std::string mode;
  Histogram histogram;
};
std::string histogram_csv(std::span<const NamedHistogram> hists);

struct NoiseStudyRow {
  std::string set;
  std::string mode;  // "adaptive_sparsify", "activation"
  double level = 0.0;  // fixed activation level; 0 for the adaptive mode
  SampleStats stats;
};
std::string noise_study_csv(std::span<const NoiseStudyRow> rows);

/// Fixed six-decimal formatting used by every CSV.
std::string format_number(double v);

}  // namespace stochdet
