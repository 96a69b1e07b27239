#include "stochdet/model_io.hpp"

#include <string>

namespace stochdet {

namespace {
constexpr const char* kModelFormat = "stochdet-model/1";
}

nlohmann::json layer_to_json(const LayerSpec& spec) {
  nlohmann::json j{{"kind", std::string(to_string(spec.kind))}, {"noise_eligible", spec.noise_eligible}};
  if (spec.kind == LayerKind::conv2d) {
    j["out_channels"] = spec.out_channels;
    j["kernel"] = spec.kernel;
    j["stride"] = spec.stride;
  } else if (spec.kind == LayerKind::dense) {
    j["out_features"] = spec.out_features;
  }
  return j;
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec s;
  try {
    s.kind = parse_layer_kind(j.at("kind").get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
  s.noise_eligible = j.value("noise_eligible", false);
  s.out_channels = j.value("out_channels", std::size_t{0});
  s.kernel = j.value("kernel", std::size_t{0});
  s.stride = j.value("stride", std::size_t{1});
  s.out_features = j.value("out_features", std::size_t{0});
  return s;
}

std::vector<std::uint8_t> save_model(const Model& model, const nlohmann::json& meta) {
  Container c;
  c.manifest["format"] = kModelFormat;
  c.manifest["input_shape"] = model.input_shape();
  c.manifest["class_count"] = model.class_count();
  auto& layers = c.manifest["layers"] = nlohmann::json::array();
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    auto j = layer_to_json(model.layer(i));
    if (model.layer(i).parametric()) {
      const auto& p = model.params(i);
      j["weights"] = {{"shape", p.weights.shape()}, {"offset", c.blob.size() * 8}, {"count", p.weights.size()}};
      c.blob.insert(c.blob.end(), p.weights.data().begin(), p.weights.data().end());
      j["bias"] = {{"offset", c.blob.size() * 8}, {"count", p.bias.size()}};
      c.blob.insert(c.blob.end(), p.bias.begin(), p.bias.end());
    }
    layers.push_back(std::move(j));
  }
  if (!meta.is_null()) c.manifest["meta"] = meta;
  return encode_container(c);
}

Model load_model(std::span<const std::uint8_t> bytes) {
  const Container c = decode_container(bytes);
  const auto& m = c.manifest;
  if (m.value("format", std::string{}) != kModelFormat)
    throw FormatError("model: unexpected format tag '" + m.value("format", std::string{}) + "'");

  std::vector<LayerSpec> specs;
  try {
    for (const auto& j : m.at("layers")) specs.push_back(layer_from_json(j));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model: malformed layer list: ") + e.what());
  }
  Model model;
  try {
    model = Model(m.at("input_shape").get<Shape>(), specs, m.at("class_count").get<std::size_t>());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("model: invalid architecture: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model: malformed manifest: ") + e.what());
  }

  auto slice = [&](const nlohmann::json& ref, std::size_t expected, const std::string& where) {
    const auto offset = ref.at("offset").get<std::size_t>();
    const auto count = ref.at("count").get<std::size_t>();
    if (count != expected)
      throw FormatError(where + ": declares " + std::to_string(count) + " values, architecture needs " +
                        std::to_string(expected));
    if (offset % 8 || offset / 8 + count > c.blob.size())
      throw FormatError(where + ": range [" + std::to_string(offset) + ", +" + std::to_string(count * 8) +
                        ") exceeds blob of " + std::to_string(c.blob.size() * 8) + " bytes");
    const auto first = c.blob.begin() + static_cast<std::ptrdiff_t>(offset / 8);
    return std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count));
  };

  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    if (!model.layer(i).parametric()) continue;
    const std::string where = "model: layer " + std::to_string(i) + " (" + std::string(to_string(model.layer(i).kind)) + ")";
    const auto& j = m["layers"][i];
    auto& p = model.params(i);
    try {
      const auto declared = j.at("weights").at("shape").get<Shape>();
      if (declared != p.weights.shape())
        throw FormatError(where + ": weight shape " + to_string(declared) + " inconsistent with architecture " +
                          to_string(p.weights.shape()));
      p.weights = Tensor(declared, slice(j.at("weights"), p.weights.size(), where + " weights"));
      p.bias = slice(j.at("bias"), p.bias.size(), where + " bias");
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": malformed parameter entry: " + e.what());
    }
  }
  if (!model.parameters_finite()) throw FormatError("model: non-finite parameters");
  return model;
}

}  // namespace stochdet
