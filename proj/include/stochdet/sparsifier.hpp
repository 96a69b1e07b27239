#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "stochdet/model.hpp"
#include "stochdet/threshold_table.hpp"

namespace stochdet {

enum class NoiseMode { sparsify, activation };

std::string_view to_string(NoiseMode mode);
NoiseMode parse_noise_mode(std::string_view name);

struct NoiseConfig {
  double sr_lo = 0.1;
  double sr_hi = 0.8;
  double gamma = 4.0;
  NoiseMode mode = NoiseMode::sparsify;

  /// Throws std::invalid_argument unless 0 <= sr_lo <= sr_hi < 1 and gamma > 0.
  void validate() const;
};

/// Top-1 minus top-2 probability.
double confidence(const ProbVector& ref);

/// sr_lo + (sr_hi - sr_lo) * (1 - exp(-gamma*conf)) / (1 - exp(-gamma)).
double noise_budget(double conf, const NoiseConfig& cfg);

struct FilterPlan {
  double assigned_rate = 0.0;  // drawn from Uniform(0, max_rate)
  std::size_t grid_index = 0;  // snapped-down grid position
  double threshold = 0.0;
  std::size_t nnz = 0;
  std::size_t weight_count = 0;

  friend bool operator==(const FilterPlan&, const FilterPlan&) = default;
};

struct LayerPlan {
  std::vector<FilterPlan> filters;  // empty for layers that are not sparsified
  Mask mask;                        // empty for layers that are not sparsified

  friend bool operator==(const LayerPlan&, const LayerPlan&) = default;
};

struct SparsificationPlan {
  std::uint64_t pass_seed = 0;
  double max_rate = 0.0;
  std::vector<LayerPlan> layers;  // one per model layer

  /// Mask list suitable for ForwardOptions.
  std::vector<Mask> masks() const;
  std::size_t total_nnz() const;
  std::size_t total_weights() const;

  friend bool operator==(const SparsificationPlan&, const SparsificationPlan&) = default;
};

/// Draws one rate per noise-eligible filter from the stream keyed by
/// (pass_seed, layer, filter), snaps it down to the grid and masks every
/// weight with |w| below the tabulated threshold.
SparsificationPlan draw_plan(const Model& model, const ThresholdTable& table, double max_rate,
                             std::uint64_t pass_seed);

/// Forward pass with the plan's masks.
ProbVector noisy_forward(const Model& model, const SparsificationPlan& plan, const Tensor& input);

/// Each noise-eligible relu output v becomes v * (1 + delta), delta ~ U(-level, level),
/// drawn from the stream keyed by (pass_seed, layer, element).
ProbVector noisy_activation_forward(const Model& model, double level, const Tensor& input,
                                    std::uint64_t pass_seed);

}  // namespace stochdet
