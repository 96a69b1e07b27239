#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stochdet/tensor.hpp"

namespace stochdet {

enum class LayerKind { conv2d, relu, maxpool2d, dense, softmax };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t out_channels = 0;  // conv2d
  std::size_t kernel = 0;        // conv2d, square
  std::size_t stride = 1;        // conv2d
  std::size_t out_features = 0;  // dense
  bool noise_eligible = false;

  static LayerSpec conv(std::size_t channels, std::size_t kernel, bool eligible = true,
                        std::size_t stride = 1);
  static LayerSpec dense(std::size_t features, bool eligible = true);
  static LayerSpec relu(bool eligible = true);
  static LayerSpec maxpool();
  static LayerSpec softmax();

  bool parametric() const { return kind == LayerKind::conv2d || kind == LayerKind::dense; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// conv8@3x3 -> relu -> pool -> conv16@3x3 -> relu -> pool -> dense -> softmax.
/// The first conv and its activation are not noise eligible.
std::vector<LayerSpec> fixture_architecture(std::size_t class_count = 4);

struct LayerParams {
  Tensor weights;
  std::vector<double> bias;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// One mask per layer; empty entries (or an empty list) mean dense.
using LayerMasks = std::vector<Mask>;

/// Optional per-layer rewrite of a layer's output during a forward pass.
using ActivationHook = std::function<void(std::size_t layer, Tensor& output)>;

struct ForwardOptions {
  std::span<const Mask> masks = {};
  ActivationHook hook = {};
};

/// All intermediate values of one pass: activations[0] is the input,
/// activations[i + 1] the output of layer i. The softmax layer passes its
/// input through, so activations.back() are the logits.
struct ForwardTrace {
  std::vector<Tensor> activations;
  ProbVector output;
};

class Model {
 public:
  Model() = default;
  /// Validates the layer stack and allocates zero parameters.
  Model(Shape input_shape, std::vector<LayerSpec> layers, std::size_t class_count);

  const Shape& input_shape() const { return input_shape_; }
  std::size_t class_count() const { return class_count_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t layer_count() const { return layers_.size(); }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  const Shape& layer_input_shape(std::size_t i) const { return shapes_.at(i); }
  const Shape& layer_output_shape(std::size_t i) const { return shapes_.at(i + 1); }

  const LayerParams& params(std::size_t i) const { return params_.at(i); }
  LayerParams& params(std::size_t i) { return params_.at(i); }
  const std::vector<LayerParams>& all_params() const { return params_; }

  /// Number of filters in a parametric layer: output channels for conv, rows for dense.
  std::size_t filter_count(std::size_t layer) const;
  /// Weights per filter: C_in*kH*kW for conv, n for dense.
  std::size_t filter_size(std::size_t layer) const;

  ForwardTrace forward(const Tensor& input, const ForwardOptions& options = {}) const;

  /// Copy whose weights are physically zero wherever the masks drop them.
  Model with_masks_applied(std::span<const Mask> masks) const;

  void set_noise_eligible(std::size_t layer, bool eligible) { layers_.at(layer).noise_eligible = eligible; }

  bool parameters_finite() const;

  friend bool operator==(const Model&, const Model&) = default;

 private:
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::size_t class_count_ = 0;
  std::vector<Shape> shapes_;
  std::vector<LayerParams> params_;
};

/// Reference dense pass.
ProbVector predict(const Model& model, const Tensor& input);

}  // namespace stochdet
