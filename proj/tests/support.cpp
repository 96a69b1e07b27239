#include "support.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>

#include "stochdet/config.hpp"
#include "stochdet/container.hpp"
#include "stochdet/model_io.hpp"
#include "stochdet/rng.hpp"
#include "stochdet/train.hpp"

#ifndef STOCHDET_FIXTURE_CACHE
#define STOCHDET_FIXTURE_CACHE "fixture_model.bin"
#endif

namespace stochdet::testing {

namespace fs = std::filesystem;

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  Tensor t(shape);
  CounterStream rng(seed);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Model random_model(std::uint64_t seed, std::size_t classes) {
  const std::vector<LayerSpec> arch{LayerSpec::conv(3, 3, false), LayerSpec::relu(false), LayerSpec::maxpool(),
                                    LayerSpec::dense(classes), LayerSpec::softmax()};
  Model m = initialize_model({1, 10, 10}, arch, classes, seed);
  CounterStream rng(derive(seed, name_key("bias")));
  for (std::size_t i = 0; i < m.layer_count(); ++i)
    for (double& b : m.params(i).bias) b = rng.uniform(-0.2, 0.2);
  return m;
}

double input_gradient_error(const Model& model, const Tensor& input, const LossSpec& loss, double h,
                            double floor) {
  const Tensor g = loss_and_input_gradient(model, input, loss).second;
  double worst = 0.0;
  Tensor x = input;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    x[i] = v + h;
    const double up = evaluate_loss(model, x, loss);
    x[i] = v - h;
    const double down = evaluate_loss(model, x, loss);
    x[i] = v;
    const double num = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(g[i] - num) / std::max({std::abs(g[i]), std::abs(num), floor}));
  }
  return worst;
}

std::vector<LossSpec> random_losses(const Model& model, const Tensor& input, std::uint64_t seed) {
  CounterStream rng(seed);
  const std::size_t classes = model.class_count();
  const auto target = static_cast<std::size_t>(rng.below(classes));
  DefenseAwareLoss aware;
  aware.target = target;
  aware.k = rng.uniform(0.0, 0.5);
  aware.c = rng.uniform(0.5, 2.0);
  aware.beta = rng.uniform(0.1, 1.0);
  aware.reference_probs = predict(model, random_tensor(input.shape(), derive(seed, 1))).probs;
  aware.original = random_tensor(input.shape(), derive(seed, 2));
  return {CrossEntropyLoss{static_cast<std::size_t>(rng.below(classes))},
          MarginLoss{target, rng.uniform(0.0, 0.5)}, aware};
}

namespace {

Model train_fixture_model() {
  const ExperimentConfig cfg = default_config();
  const Dataset train_set = synth_dataset(cfg.dataset.seed, 4000, kFixtureImageSize);
  TrainConfig tc = cfg.train;
  tc.seed = derive(cfg.base_seed, name_key("train"));
  return train(train_set, fixture_architecture(kSynthClasses), tc).model;
}

Model cached_fixture_model() {
  const fs::path cache = STOCHDET_FIXTURE_CACHE;
  if (fs::exists(cache)) {
    try {
      return load_model(read_file_bytes(cache));
    } catch (const std::exception&) {
    }
  }
  Model m = train_fixture_model();
  const fs::path tmp = cache.string() + ".tmp" + std::to_string(::getpid());
  write_bytes(tmp, save_model(m));
  fs::rename(tmp, cache);
  return m;
}

}  // namespace

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    x.model = cached_fixture_model();
    x.table = profile_thresholds(x.model);
    x.test = synth_dataset(default_config().dataset.seed, 1000, kFixtureImageSize, 4000);
    return x;
  }();
  return f;
}

ExperimentConfig small_config(const fs::path& dir) {
  ExperimentConfig cfg = default_config();
  cfg.splits = {600, 200, 100};
  cfg.train.epochs = 3;
  for (auto& a : cfg.attacks) a.config.steps = 25;
  cfg.attack_samples = 12;
  cfg.benign_samples = 20;
  cfg.simulate_samples = 2;
  cfg.output_dir = dir;
  return cfg;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stochdet-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace stochdet::testing
