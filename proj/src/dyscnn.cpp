#include "stochdet/dyscnn.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace stochdet {

void AcceleratorConfig::validate() const {
  if (group_size < 1) throw std::invalid_argument("accelerator: group_size must be at least 1");
  if (lookahead_window < 1) throw std::invalid_argument("accelerator: lookahead_window must be at least 1");
  if (tiles < 1) throw std::invalid_argument("accelerator: tiles must be at least 1");
}

Schedule group_by_nnz(std::span<const std::size_t> nnz, std::size_t group_size) {
  if (group_size < 1) throw std::invalid_argument("group_size must be at least 1");
  std::vector<ScheduledFilter> order;
  for (std::size_t f = 0; f < nnz.size(); ++f) order.push_back({f, nnz[f]});
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.nnz > b.nnz; });
  Schedule s;
  for (std::size_t i = 0; i < order.size(); i += group_size)
    s.groups.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + group_size)));
  return s;
}

Schedule group_filters(const SparsificationPlan& plan, std::size_t layer, const AcceleratorConfig& cfg) {
  cfg.validate();
  const auto& lp = plan.layers.at(layer);
  std::vector<std::size_t> nnz;
  for (const auto& f : lp.filters) nnz.push_back(f.nnz);
  Schedule s = group_by_nnz(nnz, cfg.group_size);
  s.layer = layer;
  return s;
}

std::size_t group_cost(const std::vector<ScheduledFilter>& group) {
  std::size_t m = 0;
  for (const auto& f : group) m = std::max(m, f.nnz);
  return m;
}

StreamTrace mask_stream_trace(std::span<const Mask> lane_masks, std::size_t window) {
  if (window < 1) throw std::invalid_argument("mask_stream_trace: window must be at least 1");
  StreamTrace t;
  if (lane_masks.empty()) return t;
  const std::size_t len = lane_masks[0].size();
  std::vector<std::vector<std::size_t>> active(lane_masks.size());
  std::size_t densest = 0;
  for (std::size_t l = 0; l < lane_masks.size(); ++l) {
    if (lane_masks[l].size() != len) throw std::invalid_argument("mask_stream_trace: masks differ in length");
    for (std::size_t j = 0; j < len; ++j)
      if (lane_masks[l][j]) active[l].push_back(j);
    densest = std::max(densest, active[l].size());
  }
  std::vector<std::size_t> next(lane_masks.size(), 0);
  for (;;) {
    std::size_t base = len;
    for (std::size_t l = 0; l < active.size(); ++l)
      if (next[l] < active[l].size()) base = std::min(base, active[l][next[l]]);
    if (base == len) break;
    std::vector<long> row(active.size(), -1);
    for (std::size_t l = 0; l < active.size(); ++l) {
      if (next[l] < active[l].size() && active[l][next[l]] < base + window) {
        row[l] = static_cast<long>(active[l][next[l]]);
        ++next[l];
        ++t.consumed;
      }
    }
    t.selections.push_back(std::move(row));
  }
  t.cycles = t.selections.size();
  t.stalls = t.cycles - densest;
  return t;
}

namespace {

std::size_t output_positions(const Model& model, std::size_t layer) {
  const auto& out = model.layer_output_shape(layer);
  return model.layer(layer).kind == LayerKind::conv2d ? out[1] * out[2] : 1;
}

Mask filter_mask(const Mask& layer_mask, std::size_t filter, std::size_t fs) {
  return Mask(layer_mask.begin() + static_cast<std::ptrdiff_t>(filter * fs),
              layer_mask.begin() + static_cast<std::ptrdiff_t>((filter + 1) * fs));
}

// Groups go round-robin to tiles; the layer takes as long as the busiest tile.
std::size_t tile_makespan(const std::vector<std::size_t>& group_costs, std::size_t tiles) {
  std::vector<std::size_t> busy(tiles, 0);
  for (std::size_t g = 0; g < group_costs.size(); ++g) busy[g % tiles] += group_costs[g];
  return busy.empty() ? 0 : *std::max_element(busy.begin(), busy.end());
}

}  // namespace

LayerCycles simulate_layer(const Model& model, std::size_t layer, const SparsificationPlan& plan,
                           const Schedule& schedule, const AcceleratorConfig& cfg) {
  cfg.validate();
  const auto& spec = model.layer(layer);
  if (!spec.parametric()) throw std::invalid_argument("simulate_layer: layer " + std::to_string(layer) + " has no weights");
  const std::size_t fs = model.filter_size(layer), nf = model.filter_count(layer);
  const auto& lp = plan.layers.at(layer);
  const bool sparse = !lp.mask.empty();

  LayerCycles r;
  r.layer = layer;
  r.kind = std::string(to_string(spec.kind));
  r.eligible = sparse;
  r.filters = nf;
  r.groups = schedule.groups.size();
  r.positions = output_positions(model, layer);
  r.weights = nf * fs;

  std::vector<bool> seen(nf, false);
  std::vector<std::size_t> dense_costs, sparse_costs;
  for (const auto& group : schedule.groups) {
    if (group.empty() || group.size() > cfg.group_size)
      throw std::invalid_argument("simulate_layer: group size out of range");
    std::vector<Mask> lanes;
    for (const auto& f : group) {
      if (f.filter >= nf || seen[f.filter])
        throw std::invalid_argument("simulate_layer: filter " + std::to_string(f.filter) + " missing or repeated");
      seen[f.filter] = true;
      Mask m = sparse ? filter_mask(lp.mask, f.filter, fs) : Mask(fs, 1);
      const auto nnz = static_cast<std::size_t>(std::count(m.begin(), m.end(), 1));
      if (nnz != f.nnz)
        throw std::invalid_argument("simulate_layer: schedule says filter " + std::to_string(f.filter) + " has " +
                                    std::to_string(f.nnz) + " active weights, mask has " + std::to_string(nnz));
      r.nnz += nnz;
      lanes.push_back(std::move(m));
    }
    const std::size_t top = group_cost(group);
    const auto trace = mask_stream_trace(lanes, cfg.lookahead_window);
    for (const auto& f : group) r.idle_mac_slots += (top - f.nnz) * r.positions;
    r.stall_cycles += trace.stalls * r.positions;
    r.consumed_weights += trace.consumed;
    dense_costs.push_back(fs * r.positions);
    sparse_costs.push_back(trace.cycles * r.positions);
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw std::invalid_argument("simulate_layer: schedule does not cover every filter");
  r.dense_cycles = tile_makespan(dense_costs, cfg.tiles);
  r.sparse_cycles = tile_makespan(sparse_costs, cfg.tiles);
  return r;
}

CycleReport simulate_model(const Model& model, const SparsificationPlan& plan, const AcceleratorConfig& cfg) {
  cfg.validate();
  if (plan.layers.size() != model.layer_count())
    throw std::invalid_argument("simulate_model: plan does not match model");
  CycleReport rep;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    if (!model.layer(i).parametric()) continue;
    Schedule s;
    if (plan.layers[i].mask.empty()) {
      std::vector<std::size_t> full(model.filter_count(i), model.filter_size(i));
      s = group_by_nnz(full, cfg.group_size);
      s.layer = i;
    } else {
      s = group_filters(plan, i, cfg);
    }
    auto lc = simulate_layer(model, i, plan, s, cfg);
    rep.dense_cycles += lc.dense_cycles;
    rep.sparse_cycles += lc.sparse_cycles;
    rep.idle_mac_slots += lc.idle_mac_slots;
    rep.stall_cycles += lc.stall_cycles;
    rep.layers.push_back(std::move(lc));
  }
  rep.speedup = rep.sparse_cycles ? static_cast<double>(rep.dense_cycles) / static_cast<double>(rep.sparse_cycles) : 1.0;
  return rep;
}

double CycleReport::eligible_speedup() const {
  std::size_t d = 0, s = 0;
  for (const auto& l : layers)
    if (l.eligible) {
      d += l.dense_cycles;
      s += l.sparse_cycles;
    }
  return s ? static_cast<double>(d) / static_cast<double>(s) : 1.0;
}

double CycleReport::eligible_sparsity() const {
  std::size_t w = 0, n = 0;
  for (const auto& l : layers)
    if (l.eligible) {
      w += l.weights * l.positions;
      n += l.nnz * l.positions;
    }
  return w ? 1.0 - static_cast<double>(n) / static_cast<double>(w) : 0.0;
}

nlohmann::json to_json(const CycleReport& report) {
  nlohmann::json j{{"dense_cycles", report.dense_cycles},
                   {"sparse_cycles", report.sparse_cycles},
                   {"idle_mac_slots", report.idle_mac_slots},
                   {"stall_cycles", report.stall_cycles},
                   {"speedup", report.speedup},
                   {"eligible_speedup", report.eligible_speedup()},
                   {"eligible_sparsity", report.eligible_sparsity()}};
  auto& arr = j["layers"] = nlohmann::json::array();
  for (const auto& l : report.layers)
    arr.push_back({{"layer", l.layer},
                   {"kind", l.kind},
                   {"eligible", l.eligible},
                   {"filters", l.filters},
                   {"groups", l.groups},
                   {"positions", l.positions},
                   {"weights", l.weights},
                   {"nnz", l.nnz},
                   {"dense_cycles", l.dense_cycles},
                   {"sparse_cycles", l.sparse_cycles},
                   {"idle_mac_slots", l.idle_mac_slots},
                   {"stall_cycles", l.stall_cycles}});
  return j;
}

std::string to_csv(const CycleReport& report) {
  std::ostringstream out;
  out << "layer,kind,eligible,filters,groups,positions,weights,nnz,dense_cycles,sparse_cycles,idle_mac_slots,stall_cycles\n";
  for (const auto& l : report.layers)
    out << l.layer << ',' << l.kind << ',' << (l.eligible ? 1 : 0) << ',' << l.filters << ',' << l.groups << ','
        << l.positions << ',' << l.weights << ',' << l.nnz << ',' << l.dense_cycles << ',' << l.sparse_cycles << ','
        << l.idle_mac_slots << ',' << l.stall_cycles << '\n';
  return out.str();
}

}  // namespace stochdet
