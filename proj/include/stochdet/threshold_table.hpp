#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "stochdet/model.hpp"

namespace stochdet {

/// Rates j/32 for j = 0..31.
inline constexpr std::size_t kRateSteps = 32;

double grid_rate(std::size_t index);
/// Largest grid index whose rate does not exceed `rate` (clamped to the grid).
std::size_t snap_down(double rate);

struct FilterThresholds {
  std::vector<double> tau;               // per grid index
  std::vector<std::size_t> drop_count;   // weights with |w| < tau
  std::size_t weight_count = 0;

  friend bool operator==(const FilterThresholds&, const FilterThresholds&) = default;
};

/// Offline per-filter magnitude thresholds. For grid rate r, dropping the
/// weights with |w| < tau removes the largest achievable count <= floor(r*n);
/// equal magnitudes are never split, so ties are kept together.
struct ThresholdTable {
  std::vector<double> rate_grid;
  std::vector<std::vector<FilterThresholds>> layers;  // by model layer; empty if not parametric

  const FilterThresholds& filter(std::size_t layer, std::size_t f) const { return layers.at(layer).at(f); }
  /// Throws std::invalid_argument if the table was not profiled from a model of this shape.
  void check_matches(const Model& model) const;

  friend bool operator==(const ThresholdTable&, const ThresholdTable&) = default;
};

FilterThresholds profile_filter(std::span<const double> weights);
ThresholdTable profile_thresholds(const Model& model);

nlohmann::json to_json(const ThresholdTable& table);
ThresholdTable threshold_table_from_json(const nlohmann::json& j);

}  // namespace stochdet
