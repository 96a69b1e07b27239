#include "stochdet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stochdet/layers.hpp"

namespace stochdet {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_class(std::size_t index, std::size_t classes, const char* what) {
  if (index >= classes)
    throw std::out_of_range(std::string(what) + " class " + std::to_string(index) +
                            " out of range for " + std::to_string(classes) + " classes");
}

LossValue margin_value(std::size_t target, double k, const ProbVector& out) {
  const auto& z = out.logits;
  std::size_t other = target == 0 ? 1 : 0;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (i != target && z[i] > z[other]) other = i;
  LossValue lv;
  lv.grad_logits.assign(z.size(), 0.0);
  const double gap = z[other] - z[target];
  if (gap > -k) {
    lv.value = gap;
    lv.grad_logits[other] = 1.0;
    lv.grad_logits[target] = -1.0;
  } else {
    lv.value = -k;
  }
  return lv;
}

}  // namespace

double l1_with_grad(std::span<const double> p, std::span<const double> q, std::vector<double>* grad_p) {
  if (p.size() != q.size())
    throw ShapeError("l1: length mismatch " + std::to_string(p.size()) + " vs " + std::to_string(q.size()));
  double d = 0.0;
  if (grad_p) grad_p->assign(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double diff = p[i] - q[i];
    d += std::abs(diff);
    if (grad_p) (*grad_p)[i] = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
  }
  return d;
}

LossValue logit_loss(const LossSpec& loss, const ProbVector& out) {
  const std::size_t classes = out.logits.size();
  return std::visit(
      Overloaded{
          [&](const CrossEntropyLoss& l) {
            check_class(l.label, classes, "cross-entropy label");
            LossValue lv;
            // log-sum-exp form stays finite for saturated probabilities.
            const double top = *std::max_element(out.logits.begin(), out.logits.end());
            double s = 0.0;
            for (double z : out.logits) s += std::exp(z - top);
            lv.value = top + std::log(s) - out.logits[l.label];
            lv.grad_logits = out.probs;
            lv.grad_logits[l.label] -= 1.0;
            return lv;
          },
          [&](const LogitLoss& l) {
            check_class(l.index, classes, "logit");
            LossValue lv;
            lv.value = out.logits[l.index];
            lv.grad_logits.assign(classes, 0.0);
            lv.grad_logits[l.index] = 1.0;
            return lv;
          },
          [&](const MarginLoss& l) {
            check_class(l.target, classes, "margin target");
            return margin_value(l.target, l.k, out);
          },
          [&](const DefenseAwareLoss& l) {
            check_class(l.target, classes, "defense-aware target");
            if (l.reference_probs.size() != classes)
              throw ShapeError("defense-aware loss: reference has " +
                               std::to_string(l.reference_probs.size()) + " classes, model has " +
                               std::to_string(classes));
            LossValue lv = margin_value(l.target, l.k, out);
            lv.value *= l.c;
            for (auto& g : lv.grad_logits) g *= l.c;
            if (l.beta != 0.0) {
              std::vector<double> dprobs;
              const double dist = l1_with_grad(out.probs, l.reference_probs, &dprobs);
              const auto dz = softmax_backward(out.probs, dprobs);
              lv.value += l.beta * dist;
              for (std::size_t i = 0; i < classes; ++i) lv.grad_logits[i] += l.beta * dz[i];
            }
            return lv;
          },
      },
      loss);
}

Gradients backward(const Model& model, const ForwardTrace& trace, std::span<const double> grad_logits,
                   std::span<const Mask> masks, bool want_param_grads) {
  const std::size_t n = model.layer_count();
  Gradients g;
  g.layers.resize(n);
  Tensor grad(model.layer_output_shape(n - 1), std::vector<double>(grad_logits.begin(), grad_logits.end()));
  for (std::size_t idx = n; idx-- > 0;) {
    const auto& spec = model.layer(idx);
    const Tensor& x = trace.activations[idx];
    std::span<const std::uint8_t> mask;
    if (!masks.empty()) mask = masks[idx];
    switch (spec.kind) {
      case LayerKind::softmax: break;
      case LayerKind::relu: grad = relu_backward(x, grad); break;
      case LayerKind::maxpool2d: grad = maxpool2d_backward(x, grad); break;
      case LayerKind::conv2d: {
        auto pg = conv2d_backward(x, model.params(idx).weights, spec.stride, mask, grad, want_param_grads);
        grad = std::move(pg.input);
        if (want_param_grads) g.layers[idx] = {std::move(pg.weights), std::move(pg.bias)};
        break;
      }
      case LayerKind::dense: {
        auto pg = dense_backward(x, model.params(idx).weights, mask, grad, want_param_grads);
        grad = pg.input.reshaped(x.shape());
        if (want_param_grads) g.layers[idx] = {std::move(pg.weights), std::move(pg.bias)};
        break;
      }
    }
  }
  g.input = std::move(grad);
  return g;
}

std::pair<double, Tensor> loss_and_input_gradient(const Model& model, const Tensor& input,
                                                   const LossSpec& loss) {
  const auto trace = model.forward(input);
  const auto lv = logit_loss(loss, trace.output);
  auto g = backward(model, trace, lv.grad_logits);
  double value = lv.value;
  if (const auto* aware = std::get_if<DefenseAwareLoss>(&loss)) {
    if (aware->original.shape() != input.shape())
      throw ShapeError("defense-aware loss: original " + to_string(aware->original.shape()) +
                       " vs input " + to_string(input.shape()));
    for (std::size_t i = 0; i < input.size(); ++i) {
      const double d = input[i] - aware->original[i];
      value += d * d;
      g.input[i] += 2.0 * d;
    }
  }
  return {value, std::move(g.input)};
}

Tensor input_gradient(const Model& model, const Tensor& input, const LossSpec& loss) {
  return loss_and_input_gradient(model, input, loss).second;
}

double evaluate_loss(const Model& model, const Tensor& input, const LossSpec& loss) {
  double value = logit_loss(loss, predict(model, input)).value;
  if (const auto* aware = std::get_if<DefenseAwareLoss>(&loss)) {
    for (std::size_t i = 0; i < input.size(); ++i) {
      const double d = input[i] - aware->original[i];
      value += d * d;
    }
  }
  return value;
}

}  // namespace stochdet
