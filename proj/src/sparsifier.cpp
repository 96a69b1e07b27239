#include "stochdet/sparsifier.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "stochdet/rng.hpp"

namespace stochdet {

std::string_view to_string(NoiseMode mode) {
  return mode == NoiseMode::sparsify ? "sparsify" : "activation";
}

NoiseMode parse_noise_mode(std::string_view name) {
  if (name == "sparsify") return NoiseMode::sparsify;
  if (name == "activation") return NoiseMode::activation;
  throw std::invalid_argument("unknown noise mode '" + std::string(name) + "'");
}

void NoiseConfig::validate() const {
  if (!(0.0 <= sr_lo && sr_lo <= sr_hi && sr_hi < 1.0))
    throw std::invalid_argument("noise config: need 0 <= sr_lo <= sr_hi < 1");
  if (!(gamma > 0.0)) throw std::invalid_argument("noise config: gamma must be positive");
}

double confidence(const ProbVector& ref) {
  if (ref.probs.size() < 2) throw std::invalid_argument("confidence: need at least two classes");
  double first = -1.0, second = -1.0;
  for (double p : ref.probs) {
    if (p > first) {
      second = first;
      first = p;
    } else if (p > second) {
      second = p;
    }
  }
  return std::clamp(first - second, 0.0, 1.0);
}

double noise_budget(double conf, const NoiseConfig& cfg) {
  conf = std::clamp(conf, 0.0, 1.0);
  const double shape = -std::expm1(-cfg.gamma * conf) / -std::expm1(-cfg.gamma);
  return cfg.sr_lo + (cfg.sr_hi - cfg.sr_lo) * shape;
}

std::vector<Mask> SparsificationPlan::masks() const {
  std::vector<Mask> out;
  out.reserve(layers.size());
  for (const auto& l : layers) out.push_back(l.mask);
  return out;
}

std::size_t SparsificationPlan::total_nnz() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    for (const auto& f : l.filters) n += f.nnz;
  return n;
}

std::size_t SparsificationPlan::total_weights() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    for (const auto& f : l.filters) n += f.weight_count;
  return n;
}

SparsificationPlan draw_plan(const Model& model, const ThresholdTable& table, double max_rate,
                             std::uint64_t pass_seed) {
  table.check_matches(model);
  if (!(max_rate >= 0.0 && max_rate < 1.0)) throw std::invalid_argument("draw_plan: max_rate must be in [0,1)");
  SparsificationPlan plan;
  plan.pass_seed = pass_seed;
  plan.max_rate = max_rate;
  plan.layers.resize(model.layer_count());
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const auto& spec = model.layer(i);
    if (!spec.parametric() || !spec.noise_eligible) continue;
    const auto w = model.params(i).weights.data();
    const std::size_t fs = model.filter_size(i);
    auto& lp = plan.layers[i];
    lp.mask.assign(w.size(), 1);
    for (std::size_t f = 0; f < model.filter_count(i); ++f) {
      CounterStream rng(derive(pass_seed, i, f));
      FilterPlan fp;
      fp.assigned_rate = max_rate > 0.0 ? rng.uniform(0.0, max_rate) : 0.0;
      fp.grid_index = snap_down(fp.assigned_rate);
      fp.threshold = table.filter(i, f).tau[fp.grid_index];
      fp.weight_count = fs;
      for (std::size_t k = f * fs; k < (f + 1) * fs; ++k)
        if (std::abs(w[k]) < fp.threshold) lp.mask[k] = 0;
      fp.nnz = static_cast<std::size_t>(std::count(lp.mask.begin() + static_cast<std::ptrdiff_t>(f * fs),
                                                   lp.mask.begin() + static_cast<std::ptrdiff_t>((f + 1) * fs), 1));
      lp.filters.push_back(fp);
    }
  }
  return plan;
}

ProbVector noisy_forward(const Model& model, const SparsificationPlan& plan, const Tensor& input) {
  if (plan.layers.size() != model.layer_count())
    throw std::invalid_argument("noisy_forward: plan covers " + std::to_string(plan.layers.size()) +
                                " layers, model has " + std::to_string(model.layer_count()));
  const auto masks = plan.masks();
  return model.forward(input, {masks, {}}).output;
}

ProbVector noisy_activation_forward(const Model& model, double level, const Tensor& input,
                                    std::uint64_t pass_seed) {
  if (!(level >= 0.0 && level < 1.0)) throw std::invalid_argument("activation noise level must be in [0,1)");
  if (level == 0.0) return predict(model, input);
  ForwardOptions opts;
  opts.hook = [&](std::size_t layer, Tensor& out) {
    const auto& spec = model.layer(layer);
    if (spec.kind != LayerKind::relu || !spec.noise_eligible) return;
    const CounterStream rng(derive(pass_seed, name_key("activation"), layer));
    for (std::size_t k = 0; k < out.size(); ++k) {
      const double u = static_cast<double>(rng.at(k) >> 11) * 0x1.0p-53;
      out[k] *= 1.0 + level * (2.0 * u - 1.0);
    }
  };
  return model.forward(input, opts).output;
}

}  // namespace stochdet
