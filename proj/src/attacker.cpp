#include "stochdet/attacker.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "stochdet/autodiff.hpp"

namespace stochdet {

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::cw_l2: return "cw_l2";
    case AttackKind::defense_aware: return "defense_aware";
  }
  return "unknown";
}

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "fgsm") return AttackKind::fgsm;
  if (name == "cw_l2") return AttackKind::cw_l2;
  if (name == "defense_aware") return AttackKind::defense_aware;
  throw std::invalid_argument("unknown attack kind '" + std::string(name) + "'");
}

std::string_view to_string(TargetMode mode) { return mode == TargetMode::next ? "next" : "least_likely"; }

TargetMode parse_target_mode(std::string_view name) {
  if (name == "next") return TargetMode::next;
  if (name == "least_likely" || name == "ll") return TargetMode::least_likely;
  throw std::invalid_argument("unknown target mode '" + std::string(name) + "'");
}

void AttackConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("attack: steps must be at least 1");
  if (k < 0) throw std::invalid_argument("attack: k must be non-negative");
  if (!(c > 0)) throw std::invalid_argument("attack: c must be positive");
  if (beta < 0) throw std::invalid_argument("attack: beta must be non-negative");
  if (!(step_size > 0)) throw std::invalid_argument("attack: step_size must be positive");
}

std::size_t select_target(const ProbVector& ref, TargetMode mode) {
  if (ref.probs.size() < 2) throw std::invalid_argument("select_target: need at least two classes");
  std::vector<std::size_t> order(ref.probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ref.probs[a] > ref.probs[b]; });
  if (mode == TargetMode::next) return order[1];
  const double lowest = ref.probs[order.back()];
  return *std::find_if(order.begin(), order.end(), [&](std::size_t i) { return ref.probs[i] == lowest; });
}

namespace {

double l2_norm_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

bool reaches_margin(const ProbVector& out, std::size_t target, double k) {
  if (out.argmax() != target) return false;
  double other = -INFINITY;
  for (std::size_t i = 0; i < out.logits.size(); ++i)
    if (i != target) other = std::max(other, out.logits[i]);
  return out.logits[target] - other >= k;
}

AdversarialSample finish(AdversarialSample s, const Model& model, std::size_t target,
                         const std::vector<double>* reference) {
  const auto out = predict(model, s.perturbed);
  s.target_class = target;
  s.success = out.argmax() == target;
  s.l2_distortion = l2_norm_diff(s.perturbed, s.original);
  if (reference) s.attack_l1_to_target = l1_with_grad(out.probs, *reference, nullptr);
  return s;
}

// Shared optimizer for cw_l2 and defense_aware; reference == nullptr means beta is ignored.
AdversarialSample optimize(const Model& model, const Tensor& x, std::size_t target, const AttackConfig& cfg,
                           const std::vector<double>* reference) {
  cfg.validate();
  if (x.shape() != model.input_shape())
    throw ShapeError("attack: input shape " + to_string(x.shape()) + " != model input " +
                     to_string(model.input_shape()));
  if (target >= model.class_count()) throw std::out_of_range("attack: target class out of range");

  AdversarialSample s;
  s.kind = reference ? AttackKind::defense_aware : AttackKind::cw_l2;
  s.original = x;
  s.k = cfg.k;
  s.c = cfg.c;
  s.beta = reference ? cfg.beta : 0.0;
  s.seed = cfg.seed;
  const auto start = predict(model, x);
  s.source_class = start.argmax();
  if (s.source_class == target) {
    s.perturbed = x;
    return finish(std::move(s), model, target, reference);
  }

  DefenseAwareLoss loss;
  loss.target = target;
  loss.k = cfg.k;
  loss.c = cfg.c;
  loss.beta = reference ? cfg.beta : 0.0;
  loss.reference_probs = reference ? *reference : std::vector<double>(model.class_count(), 0.0);

  const std::size_t n = x.size();
  constexpr double kShrink = 1.0 - 1e-6;
  std::vector<double> w(n), m(n, 0.0), v(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) w[i] = std::atanh((2.0 * x[i] - 1.0) * kShrink);

  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Tensor current(x.shape());
  std::optional<Tensor> best;
  double best_objective = INFINITY;
  for (std::size_t step = 0; step <= cfg.steps; ++step) {
    for (std::size_t i = 0; i < n; ++i) current[i] = (std::tanh(w[i]) + 1.0) / 2.0;
    const auto trace = model.forward(current);
    const auto lv = logit_loss(loss, trace.output);

    double dist2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) dist2 += (current[i] - x[i]) * (current[i] - x[i]);
    if (reaches_margin(trace.output, target, cfg.k)) {
      // With the margin met the c-term is constant, so rank by the remaining terms.
      const double objective = lv.value - cfg.c * (-cfg.k) + dist2;
      if (objective < best_objective) {
        best_objective = objective;
        best = current;
      }
    }
    if (step == cfg.steps) break;

    auto g = backward(model, trace, lv.grad_logits).input;
    const double t = static_cast<double>(step + 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double th = std::tanh(w[i]);
      const double dx = g[i] + 2.0 * (current[i] - x[i]);
      const double dw = dx * (1.0 - th * th) / 2.0;
      m[i] = b1 * m[i] + (1 - b1) * dw;
      v[i] = b2 * v[i] + (1 - b2) * dw * dw;
      const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      w[i] -= cfg.step_size * mh / (std::sqrt(vh) + eps);
    }
  }
  s.perturbed = best ? std::move(*best) : current;
  return finish(std::move(s), model, target, reference);
}

}  // namespace

AdversarialSample fgsm(const Model& model, const Tensor& x, double eps) {
  if (!(eps >= 0.0 && eps < 1.0)) throw std::invalid_argument("fgsm: eps must be in [0,1)");
  AdversarialSample s;
  s.kind = AttackKind::fgsm;
  s.original = x;
  s.source_class = predict(model, x).argmax();
  const Tensor g = input_gradient(model, x, CrossEntropyLoss{s.source_class});
  s.perturbed = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double sign = g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0);
    s.perturbed[i] = std::clamp(x[i] + eps * sign, 0.0, 1.0);
  }
  s.target_class = predict(model, s.perturbed).argmax();
  s.success = s.target_class != s.source_class;
  s.l2_distortion = l2_norm_diff(s.perturbed, s.original);
  return s;
}

AdversarialSample cw_l2(const Model& model, const Tensor& x, std::size_t target, const AttackConfig& cfg) {
  return optimize(model, x, target, cfg, nullptr);
}

AdversarialSample defense_aware(const Model& model, const Tensor& x, const Tensor& exemplar,
                                std::size_t target, const AttackConfig& cfg) {
  const auto reference = predict(model, exemplar).probs;
  return optimize(model, x, target, cfg, &reference);
}

AdversarialSample run_attack(const Model& model, const Tensor& x, const AttackConfig& cfg,
                             std::span<const Tensor> exemplars) {
  if (cfg.kind == AttackKind::fgsm) return fgsm(model, x, cfg.step_size);
  const std::size_t target = select_target(predict(model, x), cfg.target_mode);
  if (cfg.kind == AttackKind::cw_l2) return cw_l2(model, x, target, cfg);
  if (target >= exemplars.size() || exemplars[target].empty())
    throw std::invalid_argument("defense-aware attack: no exemplar for class " + std::to_string(target));
  return defense_aware(model, x, exemplars[target], target, cfg);
}

std::vector<Tensor> choose_exemplars(const Model& model, const Dataset& data) {
  std::vector<Tensor> out(model.class_count());
  std::vector<double> best(model.class_count(), -1.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t label = data.labels[i];
    if (label >= out.size()) continue;
    const auto p = predict(model, data.images[i]);
    if (p.argmax() != label) continue;
    if (p.probs[label] > best[label]) {
      best[label] = p.probs[label];
      out[label] = data.images[i];
    }
  }
  return out;
}

std::vector<std::uint8_t> save_adversarial_set(std::span<const AdversarialSample> samples,
                                               const nlohmann::json& meta) {
  Container c;
  c.manifest["format"] = "stochdet-advset/1";
  auto& arr = c.manifest["samples"] = nlohmann::json::array();
  for (const auto& s : samples) {
    nlohmann::json j{{"kind", std::string(to_string(s.kind))},
                     {"shape", s.original.shape()},
                     {"source_class", s.source_class},
                     {"target", s.target_class},
                     {"success", s.success},
                     {"l2_distortion", s.l2_distortion},
                     {"k", s.k},
                     {"c", s.c},
                     {"beta", s.beta},
                     {"seed", s.seed}};
    if (s.attack_l1_to_target) j["attack_l1_to_target"] = *s.attack_l1_to_target;
    j["original_offset"] = c.blob.size() * 8;
    c.blob.insert(c.blob.end(), s.original.data().begin(), s.original.data().end());
    j["perturbed_offset"] = c.blob.size() * 8;
    c.blob.insert(c.blob.end(), s.perturbed.data().begin(), s.perturbed.data().end());
    arr.push_back(std::move(j));
  }
  if (!meta.is_null()) c.manifest["meta"] = meta;
  return encode_container(c);
}

std::vector<AdversarialSample> load_adversarial_set(std::span<const std::uint8_t> bytes) {
  const Container c = decode_container(bytes);
  if (c.manifest.value("format", std::string{}) != "stochdet-advset/1")
    throw FormatError("adversarial set: unexpected format tag");
  std::vector<AdversarialSample> out;
  try {
    for (const auto& j : c.manifest.at("samples")) {
      AdversarialSample s;
      s.kind = parse_attack_kind(j.at("kind").get<std::string>());
      const auto shape = j.at("shape").get<Shape>();
      const std::size_t n = element_count(shape);
      auto take = [&](std::size_t offset) {
        if (offset % 8 || offset / 8 + n > c.blob.size())
          throw FormatError("adversarial set: tensor range exceeds blob");
        const auto first = c.blob.begin() + static_cast<std::ptrdiff_t>(offset / 8);
        return Tensor(shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
      };
      s.original = take(j.at("original_offset").get<std::size_t>());
      s.perturbed = take(j.at("perturbed_offset").get<std::size_t>());
      s.source_class = j.at("source_class").get<std::size_t>();
      s.target_class = j.at("target").get<std::size_t>();
      s.success = j.at("success").get<bool>();
      s.l2_distortion = j.at("l2_distortion").get<double>();
      s.k = j.value("k", 0.0);
      s.c = j.value("c", 0.0);
      s.beta = j.value("beta", 0.0);
      s.seed = j.value("seed", std::uint64_t{0});
      if (j.contains("attack_l1_to_target")) s.attack_l1_to_target = j["attack_l1_to_target"].get<double>();
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("adversarial set: malformed manifest: ") + e.what());
  }
  return out;
}

}  // namespace stochdet
