#include "stochdet/threshold_table.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace stochdet {

double grid_rate(std::size_t index) { return static_cast<double>(index) / kRateSteps; }

std::size_t snap_down(double rate) {
  if (!(rate > 0.0)) return 0;
  const auto j = static_cast<std::size_t>(std::floor(rate * kRateSteps));
  return std::min(j, kRateSteps - 1);
}

FilterThresholds profile_filter(std::span<const double> weights) {
  const std::size_t n = weights.size();
  std::vector<double> mags(n);
  std::transform(weights.begin(), weights.end(), mags.begin(), [](double w) { return std::abs(w); });
  std::sort(mags.begin(), mags.end());

  FilterThresholds ft;
  ft.weight_count = n;
  ft.tau.resize(kRateSteps);
  ft.drop_count.resize(kRateSteps);
  for (std::size_t j = 0; j < kRateSteps; ++j) {
    // Largest d <= floor(j*n/32) that cuts between distinct magnitudes.
    std::size_t d = (j * n) / kRateSteps;
    while (d > 0 && !(mags[d - 1] < mags[d])) --d;
    double tau = 0.0;
    if (d > 0) {
      tau = mags[d - 1] + (mags[d] - mags[d - 1]) / 2;
      if (!(tau > mags[d - 1])) tau = mags[d];
    }
    ft.tau[j] = tau;
    ft.drop_count[j] = d;
  }
  return ft;
}

ThresholdTable profile_thresholds(const Model& model) {
  ThresholdTable table;
  for (std::size_t j = 0; j < kRateSteps; ++j) table.rate_grid.push_back(grid_rate(j));
  table.layers.resize(model.layer_count());
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    if (!model.layer(i).parametric()) continue;
    const auto w = model.params(i).weights.data();
    const std::size_t fs = model.filter_size(i);
    for (std::size_t f = 0; f < model.filter_count(i); ++f)
      table.layers[i].push_back(profile_filter(w.subspan(f * fs, fs)));
  }
  return table;
}

void ThresholdTable::check_matches(const Model& model) const {
  if (layers.size() != model.layer_count())
    throw std::invalid_argument("threshold table covers " + std::to_string(layers.size()) +
                                " layers, model has " + std::to_string(model.layer_count()));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::size_t filters = model.layer(i).parametric() ? model.filter_count(i) : 0;
    if (layers[i].size() != filters)
      throw std::invalid_argument("threshold table layer " + std::to_string(i) + " has " +
                                  std::to_string(layers[i].size()) + " filters, model has " +
                                  std::to_string(filters));
    for (const auto& f : layers[i])
      if (f.weight_count != model.filter_size(i) || f.tau.size() != kRateSteps)
        throw std::invalid_argument("threshold table layer " + std::to_string(i) +
                                    " filter size does not match model");
  }
}

nlohmann::json to_json(const ThresholdTable& table) {
  nlohmann::json j;
  j["rate_grid"] = table.rate_grid;
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& layer : table.layers) {
    auto arr = nlohmann::json::array();
    for (const auto& f : layer)
      arr.push_back({{"tau", f.tau}, {"drop_count", f.drop_count}, {"weight_count", f.weight_count}});
    layers.push_back(std::move(arr));
  }
  return j;
}

ThresholdTable threshold_table_from_json(const nlohmann::json& j) {
  ThresholdTable t;
  t.rate_grid = j.at("rate_grid").get<std::vector<double>>();
  for (const auto& layer : j.at("layers")) {
    auto& out = t.layers.emplace_back();
    for (const auto& f : layer)
      out.push_back({f.at("tau").get<std::vector<double>>(), f.at("drop_count").get<std::vector<std::size_t>>(),
                     f.at("weight_count").get<std::size_t>()});
  }
  return t;
}

}  // namespace stochdet
