#include "stochdet/train.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "stochdet/autodiff.hpp"
#include "stochdet/rng.hpp"

namespace stochdet {

Model initialize_model(const Shape& input_shape, const std::vector<LayerSpec>& arch,
                       std::size_t class_count, std::uint64_t seed) {
  Model model(input_shape, arch, class_count);
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    if (!model.layer(i).parametric()) continue;
    auto& w = model.params(i).weights;
    const double bound = std::sqrt(6.0 / static_cast<double>(model.filter_size(i)));
    CounterStream rng(derive(seed, name_key("init"), i));
    for (auto& v : w.data()) v = rng.uniform(-bound, bound);
  }
  return model;
}

double accuracy(const Model& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (predict(model, data.images[i]).argmax() == data.labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

TrainResult train(const Dataset& train_set, const std::vector<LayerSpec>& arch,
                  const TrainConfig& cfg, const Dataset* test_set) {
  train_set.validate();
  if (train_set.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (arch.empty() || arch.back().kind != LayerKind::softmax)
    throw std::invalid_argument("train: architecture must end in softmax");

  TrainResult result;
  result.model = initialize_model(train_set.images.front().shape(), arch, train_set.class_count, cfg.seed);
  Model& model = result.model;
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);

  std::vector<LayerGrad> velocity(model.layer_count());
  for (std::size_t i = 0; i < model.layer_count(); ++i)
    if (model.layer(i).parametric())
      velocity[i] = {Tensor(model.params(i).weights.shape()), std::vector<double>(model.params(i).bias.size())};

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    CounterStream rng(derive(cfg.seed, name_key("shuffle"), epoch));
    shuffle(order, rng);

    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<LayerGrad> acc(model.layer_count());
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        const auto trace = model.forward(train_set.images[idx]);
        const auto lv = logit_loss(CrossEntropyLoss{train_set.labels[idx]}, trace.output);
        if (!std::isfinite(lv.value))
          throw TrainingDiverged("train: loss became non-finite at epoch " + std::to_string(epoch) +
                                 ", sample " + std::to_string(idx));
        total += lv.value;
        auto g = backward(model, trace, lv.grad_logits, {}, true);
        for (std::size_t i = 0; i < model.layer_count(); ++i) {
          if (!model.layer(i).parametric()) continue;
          if (acc[i].weights.empty()) {
            acc[i] = std::move(g.layers[i]);
            continue;
          }
          for (std::size_t j = 0; j < acc[i].weights.size(); ++j) acc[i].weights[j] += g.layers[i].weights[j];
          for (std::size_t j = 0; j < acc[i].bias.size(); ++j) acc[i].bias[j] += g.layers[i].bias[j];
        }
      }
      const double scale = cfg.lr / static_cast<double>(end - start);
      for (std::size_t i = 0; i < model.layer_count(); ++i) {
        if (!model.layer(i).parametric()) continue;
        auto& p = model.params(i);
        auto& v = velocity[i];
        for (std::size_t j = 0; j < p.weights.size(); ++j) {
          v.weights[j] = cfg.momentum * v.weights[j] - scale * acc[i].weights[j];
          p.weights[j] += v.weights[j];
        }
        for (std::size_t j = 0; j < p.bias.size(); ++j) {
          v.bias[j] = cfg.momentum * v.bias[j] - scale * acc[i].bias[j];
          p.bias[j] += v.bias[j];
        }
      }
    }
    const double mean = total / static_cast<double>(order.size());
    if (!std::isfinite(mean) || !model.parameters_finite())
      throw TrainingDiverged("train: diverged in epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(mean);
  }
  result.train_accuracy = accuracy(model, train_set);
  if (test_set) result.test_accuracy = accuracy(model, *test_set);
  return result;
}

}  // namespace stochdet
