#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "stochdet/dataset.hpp"
#include "stochdet/model.hpp"

namespace stochdet {

struct TrainConfig {
  double lr = 0.05;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  std::size_t batch_size = 16;
  double momentum = 0.9;
};

struct TrainResult {
  Model model;
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
};

/// Raised when the loss stops being finite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// He-uniform weights, zero biases, drawn from `seed`.
Model initialize_model(const Shape& input_shape, const std::vector<LayerSpec>& arch,
                       std::size_t class_count, std::uint64_t seed);

/// Mini-batch SGD with momentum on cross-entropy. Deterministic for a given seed.
TrainResult train(const Dataset& train_set, const std::vector<LayerSpec>& arch,
                  const TrainConfig& cfg, const Dataset* test_set = nullptr);

double accuracy(const Model& model, const Dataset& data);

}  // namespace stochdet
