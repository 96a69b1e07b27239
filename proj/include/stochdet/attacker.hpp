#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "stochdet/container.hpp"
#include "stochdet/dataset.hpp"
#include "stochdet/model.hpp"

namespace stochdet {

enum class AttackKind { fgsm, cw_l2, defense_aware };
enum class TargetMode { next, least_likely };

std::string_view to_string(AttackKind kind);
/// Accepts "fgsm", "cw_l2" and "defense_aware".
AttackKind parse_attack_kind(std::string_view name);
std::string_view to_string(TargetMode mode);
/// Accepts "next" and "least_likely" (alias "ll").
TargetMode parse_target_mode(std::string_view name);

struct AttackConfig {
  AttackKind kind = AttackKind::cw_l2;
  TargetMode target_mode = TargetMode::next;
  double k = 0.0;         // required logit margin of the target class
  double c = 1.0;         // weight of the margin term
  double beta = 0.0;      // weight of the output-distribution L1 term (defense-aware only)
  std::size_t steps = 300;
  double step_size = 0.05;  // Adam learning rate in tanh space; FGSM epsilon for fgsm
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdversarialSample {
  AttackKind kind = AttackKind::cw_l2;
  Tensor original;
  Tensor perturbed;
  std::size_t source_class = 0;
  std::size_t target_class = 0;  // for untargeted attacks: the class reached
  bool success = false;
  double l2_distortion = 0.0;
  std::optional<double> attack_l1_to_target;  // defense-aware only
  double k = 0.0;
  double c = 0.0;
  double beta = 0.0;
  std::uint64_t seed = 0;
};

/// next: second most probable class; least_likely: least probable. Ties go to the lowest index.
std::size_t select_target(const ProbVector& ref, TargetMode mode);

/// Untargeted one-step sign attack on the cross-entropy of the predicted class.
AdversarialSample fgsm(const Model& model, const Tensor& x, double eps);

/// Minimizes ||x' - x||^2 + c * max(max_{i != t} Z_i - Z_t, -k) with Adam in
/// x' = (tanh(w) + 1) / 2. Returns the lowest-objective iterate that reaches
/// the k margin, or the last iterate when none does.
AdversarialSample cw_l2(const Model& model, const Tensor& x, std::size_t target, const AttackConfig& cfg);

/// cw_l2 objective plus beta * ||softmax(x') - softmax(exemplar)||_1.
AdversarialSample defense_aware(const Model& model, const Tensor& x, const Tensor& exemplar,
                                std::size_t target, const AttackConfig& cfg);

/// Dispatches on cfg.kind; exemplars (one per class) are used by defense_aware.
AdversarialSample run_attack(const Model& model, const Tensor& x, const AttackConfig& cfg,
                             std::span<const Tensor> exemplars = {});

/// Highest-P(target) sample among those labeled and predicted as the target, per class.
/// Classes without such a sample get an empty tensor.
std::vector<Tensor> choose_exemplars(const Model& model, const Dataset& data);

// Adversarial set container: manifest lists per-sample metadata and blob offsets.
std::vector<std::uint8_t> save_adversarial_set(std::span<const AdversarialSample> samples,
                                               const nlohmann::json& meta = {});
std::vector<AdversarialSample> load_adversarial_set(std::span<const std::uint8_t> bytes);

}  // namespace stochdet
