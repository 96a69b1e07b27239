#include "stochdet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace stochdet {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t stride) {
  return (in - k) / stride + 1;
}

// Masked weights become exact zeros so a masked pass and a zeroed-weight pass
// execute the same arithmetic.
std::vector<double> effective_weights(const Tensor& weights, std::span<const std::uint8_t> mask) {
  std::vector<double> w(weights.data().begin(), weights.data().end());
  if (!mask.empty())
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!mask[i]) w[i] = 0.0;
  return w;
}

void check_conv(const Tensor& input, const Tensor& weights, std::size_t bias_len,
                std::size_t stride, std::span<const std::uint8_t> mask) {
  require(input.rank() == 3, "conv2d: input must be [C,H,W], got " + to_string(input.shape()));
  require(weights.rank() == 4,
          "conv2d: weights must be [C_out,C_in,kH,kW], got " + to_string(weights.shape()));
  require(stride >= 1, "conv2d: stride must be positive");
  require(weights.extent(1) == input.extent(0),
          "conv2d: weight channels " + std::to_string(weights.extent(1)) +
              " != input channels " + std::to_string(input.extent(0)));
  require(weights.extent(2) <= input.extent(1) && weights.extent(3) <= input.extent(2),
          "conv2d: kernel " + to_string(weights.shape()) + " larger than input " +
              to_string(input.shape()));
  require(bias_len == weights.extent(0), "conv2d: bias length " + std::to_string(bias_len) +
                                             " != output channels " +
                                             std::to_string(weights.extent(0)));
  require(mask.empty() || mask.size() == weights.size(),
          "conv2d: mask length " + std::to_string(mask.size()) + " != weight count " +
              std::to_string(weights.size()));
}

void check_dense(const Tensor& input, const Tensor& weights, std::size_t bias_len,
                 std::span<const std::uint8_t> mask) {
  require(weights.rank() == 2, "dense: weights must be [m,n], got " + to_string(weights.shape()));
  require(weights.extent(1) == input.size(), "dense: weight columns " +
                                                 std::to_string(weights.extent(1)) +
                                                 " != input length " + std::to_string(input.size()));
  require(bias_len == weights.extent(0), "dense: bias length " + std::to_string(bias_len) +
                                             " != rows " + std::to_string(weights.extent(0)));
  require(mask.empty() || mask.size() == weights.size(),
          "dense: mask length " + std::to_string(mask.size()) + " != weight count " +
              std::to_string(weights.size()));
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, std::span<const double> bias,
                      std::size_t stride, std::span<const std::uint8_t> mask) {
  check_conv(input, weights, bias.size(), stride, mask);
  const std::size_t cin = input.extent(0), h = input.extent(1), w = input.extent(2);
  const std::size_t cout = weights.extent(0), kh = weights.extent(2), kw = weights.extent(3);
  const std::size_t oh = out_extent(h, kh, stride), ow = out_extent(w, kw, stride);
  const auto wt = effective_weights(weights, mask);
  const auto x = input.data();

  Tensor out({cout, oh, ow});
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo) {
        double acc = bias[o];
        for (std::size_t c = 0; c < cin; ++c) {
          const double* wk = &wt[((o * cin + c) * kh) * kw];
          const double* xin = &x[(c * h + y * stride) * w + xo * stride];
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) acc += wk[i * kw + j] * xin[i * w + j];
        }
        out.at(o, y, xo) = acc;
      }
    }
  }
  return out;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  for (auto& v : out.data()) v = std::max(0.0, v);
  return out;
}

Tensor maxpool2d_forward(const Tensor& input) {
  require(input.rank() == 3, "maxpool2d: input must be [C,H,W], got " + to_string(input.shape()));
  const std::size_t c = input.extent(0), h = input.extent(1), w = input.extent(2);
  require(h % 2 == 0 && w % 2 == 0,
          "maxpool2d: spatial extents must be even, got " + to_string(input.shape()));
  Tensor out({c, h / 2, w / 2});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < h / 2; ++y)
      for (std::size_t x = 0; x < w / 2; ++x)
        out.at(k, y, x) = std::max({input.at(k, 2 * y, 2 * x), input.at(k, 2 * y, 2 * x + 1),
                                    input.at(k, 2 * y + 1, 2 * x),
                                    input.at(k, 2 * y + 1, 2 * x + 1)});
  return out;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, std::span<const double> bias,
                     std::span<const std::uint8_t> mask) {
  check_dense(input, weights, bias.size(), mask);
  const std::size_t m = weights.extent(0), n = weights.extent(1);
  const auto wt = effective_weights(weights, mask);
  const auto x = input.data();
  Tensor out({m});
  for (std::size_t r = 0; r < m; ++r) {
    double acc = bias[r];
    const double* row = &wt[r * n];
    for (std::size_t i = 0; i < n; ++i) acc += row[i] * x[i];
    out[r] = acc;
  }
  return out;
}

ProbVector softmax(std::span<const double> logits) {
  ProbVector p;
  p.logits.assign(logits.begin(), logits.end());
  if (logits.empty()) return p;
  const double top = *std::max_element(logits.begin(), logits.end());
  p.probs.resize(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p.probs[i] = std::exp(logits[i] - top);
    total += p.probs[i];
  }
  for (auto& v : p.probs) v /= total;
  return p;
}

ParamGrad conv2d_backward(const Tensor& input, const Tensor& weights, std::size_t stride,
                          std::span<const std::uint8_t> mask, const Tensor& grad_out,
                          bool want_param_grads) {
  check_conv(input, weights, weights.extent(0), stride, mask);
  const std::size_t cin = input.extent(0), h = input.extent(1), w = input.extent(2);
  const std::size_t cout = weights.extent(0), kh = weights.extent(2), kw = weights.extent(3);
  const std::size_t oh = out_extent(h, kh, stride), ow = out_extent(w, kw, stride);
  require(grad_out.shape() == Shape{cout, oh, ow},
          "conv2d_backward: upstream gradient " + to_string(grad_out.shape()) +
              " does not match output " + to_string(Shape{cout, oh, ow}));
  const auto wt = effective_weights(weights, mask);

  ParamGrad g{Tensor(input.shape()), {}, {}};
  if (want_param_grads) {
    g.weights = Tensor(weights.shape());
    g.bias.assign(cout, 0.0);
  }
  const auto x = input.data();
  auto gx = g.input.data();
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo) {
        const double go = grad_out.at(o, y, xo);
        if (go == 0.0) continue;
        if (want_param_grads) g.bias[o] += go;
        for (std::size_t c = 0; c < cin; ++c) {
          const std::size_t wbase = ((o * cin + c) * kh) * kw;
          const std::size_t xbase = (c * h + y * stride) * w + xo * stride;
          for (std::size_t i = 0; i < kh; ++i) {
            for (std::size_t j = 0; j < kw; ++j) {
              gx[xbase + i * w + j] += wt[wbase + i * kw + j] * go;
              if (want_param_grads) g.weights[wbase + i * kw + j] += x[xbase + i * w + j] * go;
            }
          }
        }
      }
    }
  }
  if (want_param_grads && !mask.empty())
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (!mask[i]) g.weights[i] = 0.0;
  return g;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  require(input.shape() == grad_out.shape(), "relu_backward: shape mismatch " +
                                                 to_string(input.shape()) + " vs " +
                                                 to_string(grad_out.shape()));
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (input[i] <= 0.0) g[i] = 0.0;
  return g;
}

Tensor maxpool2d_backward(const Tensor& input, const Tensor& grad_out) {
  const std::size_t c = input.extent(0), h = input.extent(1), w = input.extent(2);
  require(grad_out.shape() == Shape{c, h / 2, w / 2},
          "maxpool2d_backward: upstream gradient " + to_string(grad_out.shape()) +
              " does not match pooled shape");
  Tensor g(input.shape());
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < h / 2; ++y) {
      for (std::size_t x = 0; x < w / 2; ++x) {
        // Route to the first maximal element in row-major window order.
        std::size_t by = 2 * y, bx = 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx)
            if (input.at(k, 2 * y + dy, 2 * x + dx) > input.at(k, by, bx)) {
              by = 2 * y + dy;
              bx = 2 * x + dx;
            }
        g.at(k, by, bx) += grad_out.at(k, y, x);
      }
    }
  }
  return g;
}

ParamGrad dense_backward(const Tensor& input, const Tensor& weights,
                         std::span<const std::uint8_t> mask, const Tensor& grad_out,
                         bool want_param_grads) {
  check_dense(input, weights, weights.extent(0), mask);
  const std::size_t m = weights.extent(0), n = weights.extent(1);
  require(grad_out.size() == m, "dense_backward: upstream gradient length " +
                                    std::to_string(grad_out.size()) + " != rows " +
                                    std::to_string(m));
  const auto wt = effective_weights(weights, mask);
  ParamGrad g{Tensor(input.shape()), {}, {}};
  if (want_param_grads) {
    g.weights = Tensor(weights.shape());
    g.bias.assign(grad_out.data().begin(), grad_out.data().end());
  }
  const auto x = input.data();
  for (std::size_t r = 0; r < m; ++r) {
    const double go = grad_out[r];
    if (go == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      g.input[i] += wt[r * n + i] * go;
      if (want_param_grads && (mask.empty() || mask[r * n + i])) g.weights[r * n + i] = x[i] * go;
    }
  }
  return g;
}

std::vector<double> softmax_backward(std::span<const double> probs,
                                     std::span<const double> grad_probs) {
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * grad_probs[i];
  std::vector<double> g(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = probs[i] * (grad_probs[i] - dot);
  return g;
}

}  // namespace stochdet
