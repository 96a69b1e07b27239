#pragma once

#include <span>
#include <vector>

#include "stochdet/tensor.hpp"

namespace stochdet {

// Forward kernels. Masks are optional: an empty span means every weight is active.

/// Valid (unpadded) cross-correlation. input [C_in,H,W], weights [C_out,C_in,kH,kW].
Tensor conv2d_forward(const Tensor& input, const Tensor& weights, std::span<const double> bias,
                      std::size_t stride, std::span<const std::uint8_t> mask = {});

Tensor relu_forward(const Tensor& input);

/// 2x2 window, stride 2. Odd spatial extents are rejected.
Tensor maxpool2d_forward(const Tensor& input);

/// y = W x + b over a flattened input; weights [m,n].
Tensor dense_forward(const Tensor& input, const Tensor& weights, std::span<const double> bias,
                     std::span<const std::uint8_t> mask = {});

/// Max-subtracted softmax. Logits are retained in the result.
ProbVector softmax(std::span<const double> logits);

// Reverse-mode kernels. Each takes the forward input and dL/d(output).

struct ParamGrad {
  Tensor input;
  Tensor weights;
  std::vector<double> bias;
};

ParamGrad conv2d_backward(const Tensor& input, const Tensor& weights, std::size_t stride,
                          std::span<const std::uint8_t> mask, const Tensor& grad_out,
                          bool want_param_grads = true);

Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

Tensor maxpool2d_backward(const Tensor& input, const Tensor& grad_out);

ParamGrad dense_backward(const Tensor& input, const Tensor& weights,
                         std::span<const std::uint8_t> mask, const Tensor& grad_out,
                         bool want_param_grads = true);

/// d softmax(z)/dz applied to an upstream gradient on the probabilities.
std::vector<double> softmax_backward(std::span<const double> probs,
                                     std::span<const double> grad_probs);

}  // namespace stochdet
