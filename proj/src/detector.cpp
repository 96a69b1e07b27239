#include "stochdet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "stochdet/rng.hpp"

namespace stochdet {

bool DetectionThresholds::ordered() const {
  return 0.0 <= t1_greedy && t1_greedy <= t1_avg && t1_avg <= t2_avg && t2_avg <= t2_greedy &&
         t2_greedy <= 2.0;
}

void DetectionThresholds::validate() const {
  if (!ordered())
    throw std::invalid_argument("thresholds must satisfy 0 <= t1_greedy <= t1_avg <= t2_avg <= t2_greedy <= 2");
}

std::string_view to_string(Label label) { return label == Label::benign ? "benign" : "adversarial"; }

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::greedy: return "greedy";
    case Termination::average: return "average";
    case Termination::cap: return "cap";
  }
  return "unknown";
}

double l1_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw ShapeError("l1_distance: length mismatch " + std::to_string(p.size()) + " vs " +
                     std::to_string(q.size()));
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += std::abs(p[i] - q[i]);
  return d;
}

double l1_distance(const ProbVector& p, const ProbVector& q) { return l1_distance(p.probs, q.probs); }

std::optional<Decision> decide(std::span<const double> distances, const DetectionThresholds& t,
                               std::size_t max_runs) {
  if (distances.empty()) return std::nullopt;
  if (distances.size() == 1) {
    if (distances[0] < t.t1_greedy) return Decision{Label::benign, Termination::greedy};
    if (distances[0] > t.t2_greedy) return Decision{Label::adversarial, Termination::greedy};
  }
  const double mean =
      std::accumulate(distances.begin(), distances.end(), 0.0) / static_cast<double>(distances.size());
  if (mean < t.t1_avg) return Decision{Label::benign, Termination::average};
  if (mean > t.t2_avg) return Decision{Label::adversarial, Termination::average};
  if (distances.size() >= max_runs) {
    const double midpoint = (t.t1_avg + t.t2_avg) / 2;
    return Decision{mean > midpoint ? Label::adversarial : Label::benign, Termination::cap};
  }
  return std::nullopt;
}

DetectionVerdict run_detection(const std::function<double(std::size_t pass)>& distance_of_pass,
                               const DetectionThresholds& t, std::size_t max_runs, std::size_t final_class) {
  if (max_runs < 1) throw std::invalid_argument("detector: max_runs must be at least 1");
  DetectionVerdict v;
  v.final_class = final_class;
  for (std::size_t pass = 1; pass <= max_runs; ++pass) {
    v.l1_history.push_back(distance_of_pass(pass));
    if (auto d = decide(v.l1_history, t, max_runs)) {
      v.label = d->label;
      v.terminated_by = d->by;
      break;
    }
  }
  v.runs_used = v.l1_history.size();
  return v;
}

std::uint64_t pass_seed(std::uint64_t base_seed, std::size_t pass) {
  return derive(base_seed, name_key("pass"), pass);
}

double noisy_pass_distance(const Model& model, const ThresholdTable& table, const Tensor& input,
                           const ProbVector& reference, const NoiseConfig& noise, std::uint64_t seed) {
  const double budget = noise_budget(confidence(reference), noise);
  const ProbVector noisy = noise.mode == NoiseMode::sparsify
                               ? noisy_forward(model, draw_plan(model, table, budget, seed), input)
                               : noisy_activation_forward(model, budget, input, seed);
  return l1_distance(noisy, reference);
}

DetectionVerdict stochastic_inference(const Model& model, const ThresholdTable& table, const Tensor& input,
                                      const DetectorConfig& cfg) {
  cfg.noise.validate();
  cfg.thresholds.validate();
  const ProbVector reference = predict(model, input);
  return run_detection(
      [&](std::size_t pass) {
        return noisy_pass_distance(model, table, input, reference, cfg.noise, pass_seed(cfg.base_seed, pass));
      },
      cfg.thresholds, cfg.max_runs, reference.argmax());
}

double quantile(std::vector<double> samples, double q) {
  if (samples.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(samples.begin(), samples.end());
  const double h = (static_cast<double>(samples.size()) - 1) * std::clamp(q, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, samples.size() - 1);
  return samples[lo] + (h - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
}

DetectionThresholds calibrate(std::span<const double> benign_l1, double target_fpr) {
  if (benign_l1.size() < 100)
    throw std::invalid_argument("calibrate: need at least 100 benign samples, got " +
                                std::to_string(benign_l1.size()));
  if (!(target_fpr > 0.0 && target_fpr < 1.0)) throw std::invalid_argument("calibrate: target_fpr must be in (0,1)");
  const std::vector<double> s(benign_l1.begin(), benign_l1.end());
  DetectionThresholds t;
  t.t1_avg = quantile(s, 0.5);
  t.t2_avg = quantile(s, 1.0 - target_fpr);
  t.t2_greedy = quantile(s, 1.0 - target_fpr / 4);
  t.t1_greedy = quantile(s, 0.10);

  auto clamp2 = [](double v) { return std::clamp(v, 0.0, 2.0); };
  t.t1_avg = clamp2(t.t1_avg);
  t.t2_avg = std::max(clamp2(t.t2_avg), t.t1_avg);
  t.t1_greedy = std::min(clamp2(t.t1_greedy), t.t1_avg);
  t.t2_greedy = std::max(clamp2(t.t2_greedy), t.t2_avg);
  return t;
}

std::uint64_t input_seed(std::uint64_t base_seed, std::string_view set_name, std::size_t index) {
  return derive(base_seed, name_key(set_name), index);
}

Metrics summarize(std::span<const DetectionVerdict> benign, std::span<const DetectionVerdict> adversarial) {
  Metrics m;
  m.benign_count = benign.size();
  m.adversarial_count = adversarial.size();
  auto flagged = [](std::span<const DetectionVerdict> vs) {
    return static_cast<double>(std::count_if(vs.begin(), vs.end(),
                                             [](const auto& v) { return v.label == Label::adversarial; }));
  };
  if (!adversarial.empty()) m.detection_rate = flagged(adversarial) / static_cast<double>(adversarial.size());
  if (!benign.empty()) {
    m.fpr = flagged(benign) / static_cast<double>(benign.size());
    m.tpr = 1.0 - *m.fpr;
  }
  std::size_t runs = 0;
  for (const auto& v : benign) runs += v.runs_used;
  for (const auto& v : adversarial) runs += v.runs_used;
  const std::size_t total = benign.size() + adversarial.size();
  m.mean_runs = total ? static_cast<double>(runs) / static_cast<double>(total) : 0.0;
  return m;
}

Evaluation evaluate(const Model& model, const ThresholdTable& table, const DetectorConfig& cfg,
                    std::span<const Tensor> benign_set, std::span<const Tensor> adversarial_set) {
  Evaluation e;
  auto run = [&](std::span<const Tensor> set, std::string_view name, std::vector<DetectionVerdict>& out) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      DetectorConfig c = cfg;
      c.base_seed = input_seed(cfg.base_seed, name, i);
      out.push_back(stochastic_inference(model, table, set[i], c));
    }
  };
  run(benign_set, "benign", e.benign);
  run(adversarial_set, "adversarial", e.adversarial);
  e.metrics = summarize(e.benign, e.adversarial);
  return e;
}

nlohmann::json to_json(const DetectionThresholds& t) {
  return {{"t1_greedy", t.t1_greedy}, {"t2_greedy", t.t2_greedy}, {"t1_avg", t.t1_avg}, {"t2_avg", t.t2_avg}};
}

DetectionThresholds thresholds_from_json(const nlohmann::json& j) {
  DetectionThresholds t{j.at("t1_greedy").get<double>(), j.at("t2_greedy").get<double>(),
                        j.at("t1_avg").get<double>(), j.at("t2_avg").get<double>()};
  t.validate();
  return t;
}

nlohmann::json verdict_record(const std::string& input_id, const DetectionVerdict& v) {
  return {{"input_id", input_id},
          {"label", std::string(to_string(v.label))},
          {"final_class", v.final_class},
          {"runs_used", v.runs_used},
          {"l1_history", v.l1_history},
          {"terminated_by", std::string(to_string(v.terminated_by))}};
}

}  // namespace stochdet
