#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "stochdet/container.hpp"
#include "stochdet/model.hpp"

namespace stochdet {

/// Model container: manifest {format, input_shape, class_count, layers[...]},
/// each parametric layer listing its weight/bias shapes and blob offsets.
/// `meta` is stored verbatim under "meta".
std::vector<std::uint8_t> save_model(const Model& model, const nlohmann::json& meta = {});

/// Throws FormatError on blob/manifest disagreement, unknown layer kinds, or
/// parameter shapes inconsistent with the architecture (naming the layer).
Model load_model(std::span<const std::uint8_t> bytes);

nlohmann::json layer_to_json(const LayerSpec& spec);
LayerSpec layer_from_json(const nlohmann::json& j);

}  // namespace stochdet
