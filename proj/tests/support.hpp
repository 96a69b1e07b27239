#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stochdet/autodiff.hpp"
#include "stochdet/config.hpp"
#include "stochdet/dataset.hpp"
#include "stochdet/model.hpp"
#include "stochdet/threshold_table.hpp"

namespace stochdet::testing {

/// Small conv net on a [1,10,10] input with random weights and biases.
Model random_model(std::uint64_t seed, std::size_t classes = 4);
/// Uniform values in [lo, hi).
Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0);

struct Fixture {
  Model model;
  ThresholdTable table;
  Dataset test;
};
/// Fixture model trained on the synthetic corpus (seed 7, 4000 training
/// samples). Cached as a file in the build tree after the first training run.
const Fixture& fixture();

/// Largest finite-difference mismatch of the input gradient of `loss`, as
/// |analytic - numeric| / max(|analytic|, |numeric|, floor), over every input
/// element. Central differences with step h.
double input_gradient_error(const Model& model, const Tensor& input, const LossSpec& loss, double h = 1e-4,
                            double floor = 1e-3);

/// Loss specs of every kind on a random target, built from seed.
std::vector<LossSpec> random_losses(const Model& model, const Tensor& input, std::uint64_t seed);

/// Reduced pipeline config writing to `dir`: small splits, two training
/// epochs, short attacks. Runs end to end in a few seconds.
ExperimentConfig small_config(const std::filesystem::path& dir);

/// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& name);

}  // namespace stochdet::testing
