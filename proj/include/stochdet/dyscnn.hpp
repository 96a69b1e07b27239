#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stochdet/model.hpp"
#include "stochdet/sparsifier.hpp"

namespace stochdet {

/// Abstract accelerator: each group of `group_size` filters shares one input
/// stream; every lane consumes at most one active weight per cycle.
struct AcceleratorConfig {
  std::size_t group_size = 4;
  std::size_t lookahead_window = 4;
  std::size_t tiles = 1;

  void validate() const;
};

struct ScheduledFilter {
  std::size_t filter = 0;
  std::size_t nnz = 0;

  friend bool operator==(const ScheduledFilter&, const ScheduledFilter&) = default;
};

struct Schedule {
  std::size_t layer = 0;
  std::vector<std::vector<ScheduledFilter>> groups;
};

/// Filters sorted by nnz (descending, ties by filter id) and cut into
/// consecutive groups of at most group_size.
Schedule group_filters(const SparsificationPlan& plan, std::size_t layer, const AcceleratorConfig& cfg);
/// Same rule over a bare nnz vector; filter ids are positions.
Schedule group_by_nnz(std::span<const std::size_t> nnz, std::size_t group_size);

/// Cycles of a group per output position when stalls are ignored: the densest lane.
std::size_t group_cost(const std::vector<ScheduledFilter>& group);

struct StreamTrace {
  std::size_t cycles = 0;
  std::size_t stalls = 0;  // cycles beyond the densest lane's nnz
  std::size_t consumed = 0;
  /// trace[cycle][lane] = input index consumed, or -1 when the lane is idle.
  std::vector<std::vector<long>> selections;
};

/// Replays one output position of a group. Each cycle the window starts at the
/// lowest pending input index among unfinished lanes; a lane consumes its next
/// active weight only if that weight's input lies inside the window of
/// `window` inputs. Masks must have equal length.
StreamTrace mask_stream_trace(std::span<const Mask> lane_masks, std::size_t window);

struct LayerCycles {
  std::size_t layer = 0;
  std::string kind;
  bool eligible = false;
  std::size_t filters = 0;
  std::size_t groups = 0;
  std::size_t positions = 0;  // output positions per filter
  std::size_t weights = 0;
  std::size_t nnz = 0;
  std::size_t dense_cycles = 0;
  std::size_t sparse_cycles = 0;
  std::size_t idle_mac_slots = 0;
  std::size_t stall_cycles = 0;
  std::size_t consumed_weights = 0;  // per output position, summed over lanes
};

struct CycleReport {
  std::size_t dense_cycles = 0;
  std::size_t sparse_cycles = 0;
  std::size_t idle_mac_slots = 0;
  std::size_t stall_cycles = 0;
  double speedup = 1.0;
  std::vector<LayerCycles> layers;

  /// Speedup restricted to the noise-eligible layers.
  double eligible_speedup() const;
  /// Fraction of dense multiply-accumulates skipped over the noise-eligible layers.
  double eligible_sparsity() const;
};

LayerCycles simulate_layer(const Model& model, std::size_t layer, const SparsificationPlan& plan,
                           const Schedule& schedule, const AcceleratorConfig& cfg);

/// Sums per-layer reports; layers the plan does not sparsify cost their dense cycles.
CycleReport simulate_model(const Model& model, const SparsificationPlan& plan, const AcceleratorConfig& cfg);

nlohmann::json to_json(const CycleReport& report);
std::string to_csv(const CycleReport& report);

}  // namespace stochdet
