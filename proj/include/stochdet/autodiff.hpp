#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "stochdet/model.hpp"
#include "stochdet/tensor.hpp"

namespace stochdet {

/// -log softmax(Z)[label]
struct CrossEntropyLoss {
  std::size_t label = 0;
};

/// Z[index]; a linear probe used for checking gradients.
struct LogitLoss {
  std::size_t index = 0;
};

/// max(max_{i != target} Z_i - Z_target, -k)
struct MarginLoss {
  std::size_t target = 0;
  double k = 0.0;
};

/// c * margin(x, target) + beta * ||softmax(Z(x)) - reference||_1 + ||x - original||_2^2
struct DefenseAwareLoss {
  std::size_t target = 0;
  double k = 0.0;
  double c = 1.0;
  double beta = 0.0;
  std::vector<double> reference_probs;
  Tensor original;
};

using LossSpec = std::variant<CrossEntropyLoss, LogitLoss, MarginLoss, DefenseAwareLoss>;

struct LossValue {
  double value = 0.0;
  std::vector<double> grad_logits;  // dL/dZ
};

/// Loss value and its gradient with respect to the logits. Input-only terms
/// (the distortion term of DefenseAwareLoss) are excluded here.
LossValue logit_loss(const LossSpec& loss, const ProbVector& out);

/// Full loss value at an input, input-only terms included.
double evaluate_loss(const Model& model, const Tensor& input, const LossSpec& loss);

struct LayerGrad {
  Tensor weights;
  std::vector<double> bias;
};

struct Gradients {
  Tensor input;
  std::vector<LayerGrad> layers;  // empty entries for non-parametric layers
};

/// Reverse pass over a recorded trace, seeded with dL/d(logits).
Gradients backward(const Model& model, const ForwardTrace& trace, std::span<const double> grad_logits,
                   std::span<const Mask> masks = {}, bool want_param_grads = false);

/// dL/d(input) for the dense model; same shape as the input.
Tensor input_gradient(const Model& model, const Tensor& input, const LossSpec& loss);

/// Loss value together with its input gradient, from one forward/backward pass.
std::pair<double, Tensor> loss_and_input_gradient(const Model& model, const Tensor& input,
                                                   const LossSpec& loss);

/// ||p - q||_1 and its gradient with respect to p; subgradient 0 where p_i == q_i.
double l1_with_grad(std::span<const double> p, std::span<const double> q, std::vector<double>* grad_p);

}  // namespace stochdet
