#include "stochdet/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "stochdet/layers.hpp"

namespace stochdet {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::dense: return "dense";
    case LayerKind::softmax: return "softmax";
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (auto k : {LayerKind::conv2d, LayerKind::relu, LayerKind::maxpool2d, LayerKind::dense,
                 LayerKind::softmax})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::conv(std::size_t channels, std::size_t kernel, bool eligible,
                          std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.out_channels = channels;
  s.kernel = kernel;
  s.stride = stride;
  s.noise_eligible = eligible;
  return s;
}

LayerSpec LayerSpec::dense(std::size_t features, bool eligible) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.out_features = features;
  s.noise_eligible = eligible;
  return s;
}

LayerSpec LayerSpec::relu(bool eligible) {
  LayerSpec s;
  s.kind = LayerKind::relu;
  s.noise_eligible = eligible;
  return s;
}

LayerSpec LayerSpec::maxpool() {
  LayerSpec s;
  s.kind = LayerKind::maxpool2d;
  return s;
}

LayerSpec LayerSpec::softmax() {
  LayerSpec s;
  s.kind = LayerKind::softmax;
  return s;
}

std::vector<LayerSpec> fixture_architecture(std::size_t class_count) {
  return {LayerSpec::conv(8, 3, false), LayerSpec::relu(false), LayerSpec::maxpool(),
          LayerSpec::conv(16, 3),       LayerSpec::relu(),      LayerSpec::maxpool(),
          LayerSpec::dense(class_count), LayerSpec::softmax()};
}

Model::Model(Shape input_shape, std::vector<LayerSpec> layers, std::size_t class_count)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), class_count_(class_count) {
  if (layers_.empty() || layers_.back().kind != LayerKind::softmax)
    throw ShapeError("model: architecture must end in softmax");
  if (std::count_if(layers_.begin(), layers_.end(),
                    [](const LayerSpec& l) { return l.kind == LayerKind::softmax; }) != 1)
    throw ShapeError("model: exactly one terminal softmax is allowed");
  if (input_shape_.size() != 3) throw ShapeError("model: input must be [C,H,W], got " + to_string(input_shape_));

  shapes_.push_back(input_shape_);
  params_.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& spec = layers_[i];
    const Shape& in = shapes_.back();
    const std::string where = "layer " + std::to_string(i) + " (" + std::string(stochdet::to_string(spec.kind)) + ")";
    Shape out;
    switch (spec.kind) {
      case LayerKind::conv2d: {
        if (in.size() != 3) throw ShapeError(where + ": expects [C,H,W] input, got " + to_string(in));
        if (spec.out_channels == 0 || spec.kernel == 0 || spec.stride == 0)
          throw ShapeError(where + ": channels, kernel and stride must be positive");
        if (spec.kernel > in[1] || spec.kernel > in[2])
          throw ShapeError(where + ": kernel " + std::to_string(spec.kernel) + " exceeds input " + to_string(in));
        out = {spec.out_channels, (in[1] - spec.kernel) / spec.stride + 1,
               (in[2] - spec.kernel) / spec.stride + 1};
        params_[i].weights = Tensor({spec.out_channels, in[0], spec.kernel, spec.kernel});
        params_[i].bias.assign(spec.out_channels, 0.0);
        break;
      }
      case LayerKind::dense: {
        if (spec.out_features == 0) throw ShapeError(where + ": out_features must be positive");
        out = {spec.out_features};
        params_[i].weights = Tensor({spec.out_features, element_count(in)});
        params_[i].bias.assign(spec.out_features, 0.0);
        break;
      }
      case LayerKind::maxpool2d:
        if (in.size() != 3 || in[1] % 2 || in[2] % 2)
          throw ShapeError(where + ": needs even spatial extents, got " + to_string(in));
        out = {in[0], in[1] / 2, in[2] / 2};
        break;
      case LayerKind::relu:
        out = in;
        break;
      case LayerKind::softmax:
        if (i + 1 != layers_.size()) throw ShapeError(where + ": softmax must be the last layer");
        if (in.size() != 1 || in[0] != class_count_)
          throw ShapeError(where + ": expects " + std::to_string(class_count_) + " logits, got " + to_string(in));
        out = in;
        break;
    }
    shapes_.push_back(out);
  }
  if (class_count_ < 2) throw ShapeError("model: need at least two classes");
}

std::size_t Model::filter_count(std::size_t layer) const {
  const auto& w = params_.at(layer).weights;
  if (!layers_.at(layer).parametric()) return 0;
  return w.extent(0);
}

std::size_t Model::filter_size(std::size_t layer) const {
  const auto& w = params_.at(layer).weights;
  if (!layers_.at(layer).parametric()) return 0;
  return w.size() / w.extent(0);
}

ForwardTrace Model::forward(const Tensor& input, const ForwardOptions& options) const {
  if (input.shape() != input_shape_)
    throw ShapeError("model: input shape " + to_string(input.shape()) + " != expected " +
                     to_string(input_shape_));
  if (!options.masks.empty() && options.masks.size() != layers_.size())
    throw ShapeError("model: " + std::to_string(options.masks.size()) + " masks for " +
                     std::to_string(layers_.size()) + " layers");

  ForwardTrace trace;
  trace.activations.reserve(layers_.size() + 1);
  trace.activations.push_back(input);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Tensor& x = trace.activations.back();
    const auto& p = params_[i];
    std::span<const std::uint8_t> mask;
    if (!options.masks.empty()) mask = options.masks[i];
    Tensor y;
    switch (layers_[i].kind) {
      case LayerKind::conv2d: y = conv2d_forward(x, p.weights, p.bias, layers_[i].stride, mask); break;
      case LayerKind::dense: y = dense_forward(x, p.weights, p.bias, mask); break;
      case LayerKind::relu: y = relu_forward(x); break;
      case LayerKind::maxpool2d: y = maxpool2d_forward(x); break;
      case LayerKind::softmax: y = x; break;
    }
    if (options.hook && layers_[i].kind != LayerKind::softmax) options.hook(i, y);
    trace.activations.push_back(std::move(y));
  }
  trace.output = softmax(trace.activations.back().data());
  return trace;
}

Model Model::with_masks_applied(std::span<const Mask> masks) const {
  if (!masks.empty() && masks.size() != layers_.size())
    throw ShapeError("model: mask list does not match layer count");
  Model copy = *this;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].empty()) continue;
    auto& w = copy.params_[i].weights;
    if (masks[i].size() != w.size())
      throw ShapeError("model: mask for layer " + std::to_string(i) + " has wrong length");
    for (std::size_t j = 0; j < w.size(); ++j)
      if (!masks[i][j]) w[j] = 0.0;
  }
  return copy;
}

bool Model::parameters_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](const LayerParams& p) {
    return (p.weights.empty() || p.weights.all_finite()) &&
           std::all_of(p.bias.begin(), p.bias.end(), [](double v) { return std::isfinite(v); });
  });
}

ProbVector predict(const Model& model, const Tensor& input) {
  return model.forward(input).output;
}

}  // namespace stochdet
