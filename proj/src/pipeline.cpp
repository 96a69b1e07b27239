#include "stochdet/pipeline.hpp"

#include <algorithm>
#include <iostream>
#include <map>

#include "stochdet/model_io.hpp"
#include "stochdet/report.hpp"
#include "stochdet/rng.hpp"

namespace stochdet {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::train: return "train";
    case Stage::profile: return "profile";
    case Stage::attack: return "attack";
    case Stage::calibrate: return "calibrate";
    case Stage::detect: return "detect";
    case Stage::eval: return "eval";
    case Stage::simulate: return "simulate";
    case Stage::report: return "report";
  }
  return "?";
}

std::optional<Stage> parse_stage(std::string_view name) {
  for (Stage s : kAllStages)
    if (to_string(s) == name) return s;
  return std::nullopt;
}

StageError::StageError(Stage stage, const std::string& cause)
    : std::runtime_error(std::string(to_string(stage)) + ": " + cause), stage_(stage) {}

Provenance provenance_of(const ExperimentConfig& cfg) { return {config_hash(cfg), cfg.base_seed, kToolVersion}; }

namespace {

// ---- data -----------------------------------------------------------------

std::size_t fitted_side(std::size_t n) {
  while (n >= 12 && n % 4 != 2) --n;
  return n;
}

Tensor crop_center(const Tensor& img, std::size_t h, std::size_t w) {
  const std::size_t top = (img.extent(1) - h) / 2, left = (img.extent(2) - w) / 2;
  Tensor out({img.extent(0), h, w});
  for (std::size_t c = 0; c < img.extent(0); ++c)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t q = 0; q < w; ++q) out.at(c, r, q) = img.at(c, top + r, left + q);
  return out;
}

Dataset slice(const Dataset& all, std::size_t begin, std::size_t count) {
  Dataset d;
  d.class_count = all.class_count;
  d.images.assign(all.images.begin() + static_cast<std::ptrdiff_t>(begin),
                  all.images.begin() + static_cast<std::ptrdiff_t>(begin + count));
  d.labels.assign(all.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                  all.labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
  return d;
}

// ---- artifact io ----------------------------------------------------------

class Store {
 public:
  explicit Store(const ExperimentConfig& cfg) : dir_(cfg.output_dir), prov_(provenance_of(cfg)) {}

  fs::path path(const fs::path& rel) const { return dir_ / rel; }
  void json_file(const fs::path& rel, const json& payload) const { write_text(path(rel), seal_json(payload, prov_)); }
  void csv_file(const fs::path& rel, const std::string& body) const { write_text(path(rel), seal_csv(body, prov_)); }
  void container_file(const fs::path& rel, const std::vector<std::uint8_t>& bytes) const {
    write_bytes(path(rel), seal_container(bytes, prov_));
  }

  json read_json(const fs::path& rel, Stage stage) const {
    require(rel, stage);
    return open_json(read_text(path(rel)));
  }
  std::vector<std::uint8_t> read_bytes(const fs::path& rel, Stage stage) const {
    require(rel, stage);
    return read_file_bytes(path(rel));
  }

 private:
  void require(const fs::path& rel, Stage stage) const {
    if (!fs::exists(path(rel)))
      throw StageError(stage, "missing input " + path(rel).string() + " (run the earlier stages first)");
  }

  fs::path dir_;
  Provenance prov_;
};

// Everything later stages rebuild from disk.
struct Context {
  const ExperimentConfig& cfg;
  Store store;
  Splits splits;
  std::optional<Model> model;
  std::optional<ThresholdTable> table;
};

const Model& model_of(Context& ctx, Stage stage) {
  if (!ctx.model) ctx.model = load_model(ctx.store.read_bytes("model.bin", stage));
  return *ctx.model;
}

const ThresholdTable& table_of(Context& ctx, Stage stage) {
  if (!ctx.table) {
    ctx.table = threshold_table_from_json(ctx.store.read_json("thresholds.json", stage).at("table"));
    ctx.table->check_matches(model_of(ctx, stage));
  }
  return *ctx.table;
}

/// Test indices of the first `limit` correctly classified inputs.
std::vector<std::size_t> correct_indices(const Model& model, const Dataset& test, std::size_t limit) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < test.images.size() && out.size() < limit; ++i)
    if (predict(model, test.images[i]).argmax() == test.labels[i]) out.push_back(i);
  return out;
}

std::uint64_t attack_seed(std::uint64_t base, const std::string& name) {
  return derive(base, name_key("attack"), name_key(name));
}

void log(Stage s, const std::string& msg) { std::cerr << "[" << to_string(s) << "] " << msg << "\n"; }

// ---- stages ---------------------------------------------------------------

void stage_train(Context& ctx) {
  const auto& cfg = ctx.cfg;
  json info;
  Model model = [&] {
    if (cfg.model_path) {
      info["source"] = cfg.model_path->string();
      return load_model(read_file_bytes(*cfg.model_path));
    }
    TrainConfig tc = cfg.train;
    tc.seed = derive(cfg.base_seed, name_key("train"));
    auto r = train(ctx.splits.train, fixture_architecture(ctx.splits.train.class_count), tc, &ctx.splits.test);
    info["source"] = "trained";
    info["epoch_loss"] = r.epoch_loss;
    info["train_accuracy"] = r.train_accuracy;
    return std::move(r.model);
  }();
  const double test_acc = accuracy(model, ctx.splits.test);
  info["test_accuracy"] = test_acc;
  info["test_samples"] = ctx.splits.test.images.size();
  ctx.store.container_file("model.bin", save_model(model, {{"dataset", cfg.dataset.to_string()}}));
  ctx.store.json_file("train.json", info);
  log(Stage::train, "test accuracy " + format_number(test_acc));
  ctx.model = std::move(model);
}

void stage_profile(Context& ctx) {
  const auto& model = model_of(ctx, Stage::profile);
  ctx.table = profile_thresholds(model);
  ctx.store.json_file("thresholds.json", {{"table", to_json(*ctx.table)}});
}

void stage_attack(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& model = model_of(ctx, Stage::attack);
  const auto sources = correct_indices(model, ctx.splits.test, cfg.attack_samples);
  const auto exemplars = choose_exemplars(model, ctx.splits.test);
  json summary = json::object();
  for (const auto& a : cfg.attacks) {
    AttackConfig ac = a.config;
    ac.seed = attack_seed(cfg.base_seed, a.name);
    std::vector<AdversarialSample> samples;
    for (std::size_t idx : sources) samples.push_back(run_attack(model, ctx.splits.test.images[idx], ac, exemplars));
    std::vector<double> l2, l1, conf;
    for (const auto& s : samples) {
      if (!s.success) continue;
      l2.push_back(s.l2_distortion);
      if (s.attack_l1_to_target) l1.push_back(*s.attack_l1_to_target);
      conf.push_back(confidence(predict(model, s.perturbed)));
    }
    json entry{{"kind", std::string(to_string(a.config.kind))},
               {"k", a.config.k},
               {"c", a.config.c},
               {"beta", a.config.beta},
               {"attempted", samples.size()},
               {"succeeded", l2.size()},
               {"mean_l2", l2.empty() ? json(nullptr) : json(sample_stats(l2).mean)},
               {"mean_l1_to_target", l1.empty() ? json(nullptr) : json(sample_stats(l1).mean)},
               {"mean_confidence", conf.empty() ? json(nullptr) : json(sample_stats(conf).mean)}};
    summary[a.name] = entry;
    ctx.store.container_file("adv/" + a.name + ".bin",
                             save_adversarial_set(samples, {{"attack", a.name}, {"sources", sources}}));
    log(Stage::attack, a.name + ": " + std::to_string(l2.size()) + "/" + std::to_string(samples.size()) + " succeeded");
  }
  ctx.store.json_file("attacks.json", {{"attacks", summary}});
}

std::vector<double> first_pass_distances(const Model& model, const ThresholdTable& table, const NoiseConfig& noise,
                                         std::span<const Tensor> inputs, std::uint64_t base, std::string_view set) {
  std::vector<double> out;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    out.push_back(noisy_pass_distance(model, table, inputs[i], predict(model, inputs[i]), noise,
                                      pass_seed(input_seed(base, set, i), 1)));
  return out;
}

void stage_calibrate(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& model = model_of(ctx, Stage::calibrate);
  const auto& table = table_of(ctx, Stage::calibrate);
  const auto d =
      first_pass_distances(model, table, cfg.noise, ctx.splits.calibration.images, cfg.base_seed, "calibration");
  const auto t = calibrate(d, cfg.target_fpr);
  ctx.store.json_file("calibration.json", {{"thresholds", to_json(t)},
                                           {"target_fpr", cfg.target_fpr},
                                           {"samples", d.size()},
                                           {"first_pass_l1", d}});
}

struct InputSet {
  std::string name;
  std::vector<std::string> ids;
  std::vector<Tensor> inputs;
};

std::vector<InputSet> detection_sets(Context& ctx, Stage stage) {
  const auto& cfg = ctx.cfg;
  const auto& model = model_of(ctx, stage);
  std::vector<InputSet> sets;
  InputSet benign{"benign", {}, {}};
  for (std::size_t idx : correct_indices(model, ctx.splits.test, cfg.benign_samples)) {
    benign.ids.push_back("test/" + std::to_string(idx));
    benign.inputs.push_back(ctx.splits.test.images[idx]);
  }
  sets.push_back(std::move(benign));
  for (const auto& a : cfg.attacks) {
    const auto bytes = ctx.store.read_bytes("adv/" + a.name + ".bin", stage);
    const auto sources = decode_container(bytes).manifest.at("meta").at("sources").get<std::vector<std::size_t>>();
    const auto samples = load_adversarial_set(bytes);
    InputSet s{a.name, {}, {}};
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!samples[i].success) continue;
      s.ids.push_back(a.name + "/test/" + std::to_string(sources.at(i)));
      s.inputs.push_back(samples[i].perturbed);
    }
    sets.push_back(std::move(s));
  }
  return sets;
}

DetectorConfig detector_config(Context& ctx, Stage stage) {
  DetectorConfig dc;
  dc.thresholds = thresholds_from_json(ctx.store.read_json("calibration.json", stage).at("thresholds"));
  dc.max_runs = ctx.cfg.max_runs;
  dc.noise = ctx.cfg.noise;
  dc.base_seed = ctx.cfg.base_seed;
  return dc;
}

void stage_detect(Context& ctx) {
  const auto& model = model_of(ctx, Stage::detect);
  const auto& table = table_of(ctx, Stage::detect);
  const DetectorConfig base = detector_config(ctx, Stage::detect);
  for (const auto& set : detection_sets(ctx, Stage::detect)) {
    json records = json::array();
    for (std::size_t i = 0; i < set.inputs.size(); ++i) {
      DetectorConfig dc = base;
      dc.base_seed = input_seed(base.base_seed, set.name, i);
      records.push_back(verdict_record(set.ids[i], stochastic_inference(model, table, set.inputs[i], dc)));
    }
    ctx.store.json_file("verdicts/" + set.name + ".json", {{"set", set.name}, {"records", records}});
  }
}

std::vector<DetectionVerdict> read_verdicts(Context& ctx, const std::string& set, Stage stage) {
  const json file = ctx.store.read_json("verdicts/" + set + ".json", stage);
  std::vector<DetectionVerdict> out;
  for (const auto& r : file.at("records")) out.push_back(verdict_from_record(r));
  return out;
}

std::optional<double> opt_number(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

std::vector<DetectionRow> detection_rows(Context& ctx, Stage stage) {
  std::vector<DetectionRow> rows;
  const auto benign = read_verdicts(ctx, "benign", stage);
  const auto bm = summarize(benign, {});
  DetectionRow b;
  b.set = "benign";
  b.attempted = b.samples = benign.size();
  b.fpr = bm.fpr;
  b.mean_runs = bm.mean_runs;
  rows.push_back(b);
  const json attacks = ctx.store.read_json("attacks.json", stage).at("attacks");
  for (const auto& a : ctx.cfg.attacks) {
    const auto verdicts = read_verdicts(ctx, a.name, stage);
    const auto m = summarize({}, verdicts);
    const json& info = attacks.at(a.name);
    DetectionRow r;
    r.set = a.name;
    r.kind = a.config.kind;
    r.k = a.config.k;
    r.c = a.config.c;
    r.beta = a.config.beta;
    r.attempted = info.at("attempted").get<std::size_t>();
    r.samples = verdicts.size();
    r.detection_rate = m.detection_rate;
    r.mean_runs = m.mean_runs;
    r.mean_l2 = opt_number(info, "mean_l2");
    r.mean_l1_to_target = opt_number(info, "mean_l1_to_target");
    r.mean_confidence = opt_number(info, "mean_confidence");
    rows.push_back(r);
  }
  return sorted_rows(std::move(rows));
}

json row_json(const DetectionRow& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"set", r.set},
          {"kind", r.kind ? json(std::string(to_string(*r.kind))) : json(nullptr)},
          {"k", r.k},
          {"c", r.c},
          {"beta", r.beta},
          {"attempted", r.attempted},
          {"samples", r.samples},
          {"detection_rate", opt(r.detection_rate)},
          {"fpr", opt(r.fpr)},
          {"mean_runs", r.mean_runs},
          {"mean_l2", opt(r.mean_l2)},
          {"mean_l1_to_target", opt(r.mean_l1_to_target)},
          {"mean_confidence", opt(r.mean_confidence)}};
}

void stage_eval(Context& ctx) {
  const auto rows = detection_rows(ctx, Stage::eval);
  json sets = json::array();
  for (const auto& r : rows) sets.push_back(row_json(r));
  ctx.store.json_file("metrics.json", {{"sets", sets}});
  ctx.store.csv_file("metrics.csv", detection_csv(rows));
  for (const auto& r : rows)
    log(Stage::eval, r.set + ": " + (r.fpr ? "fpr " + format_number(*r.fpr) : "detection " + format_number(r.detection_rate.value_or(0))));
}

void stage_simulate(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& model = model_of(ctx, Stage::simulate);
  const auto& table = table_of(ctx, Stage::simulate);
  const auto idx = correct_indices(model, ctx.splits.test, cfg.simulate_samples);
  std::map<std::size_t, LayerCycles> totals;
  CycleReport sum;
  json per_input = json::array();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensor& x = ctx.splits.test.images[idx[i]];
    const double budget = noise_budget(confidence(predict(model, x)), cfg.noise);
    const auto plan = draw_plan(model, table, budget, pass_seed(input_seed(cfg.base_seed, "benign", i), 1));
    const auto rep = simulate_model(model, plan, cfg.accelerator);
    per_input.push_back({{"input_id", "test/" + std::to_string(idx[i])},
                         {"max_rate", budget},
                         {"speedup", rep.speedup},
                         {"eligible_speedup", rep.eligible_speedup()},
                         {"eligible_sparsity", rep.eligible_sparsity()}});
    for (const auto& l : rep.layers) {
      auto& t = totals[l.layer];
      if (t.filters == 0) t = LayerCycles{l.layer, l.kind, l.eligible, l.filters, l.groups, l.positions};
      t.weights += l.weights;
      t.nnz += l.nnz;
      t.dense_cycles += l.dense_cycles;
      t.sparse_cycles += l.sparse_cycles;
      t.idle_mac_slots += l.idle_mac_slots;
      t.stall_cycles += l.stall_cycles;
      t.consumed_weights += l.consumed_weights;
    }
  }
  for (auto& [_, l] : totals) {
    sum.dense_cycles += l.dense_cycles;
    sum.sparse_cycles += l.sparse_cycles;
    sum.idle_mac_slots += l.idle_mac_slots;
    sum.stall_cycles += l.stall_cycles;
    sum.layers.push_back(l);
  }
  sum.speedup = sum.sparse_cycles ? static_cast<double>(sum.dense_cycles) / static_cast<double>(sum.sparse_cycles) : 1.0;
  json j = to_json(sum);
  j["inputs"] = per_input;
  j["accelerator"] = {{"group_size", cfg.accelerator.group_size},
                      {"window", cfg.accelerator.lookahead_window},
                      {"tiles", cfg.accelerator.tiles}};
  ctx.store.json_file("cycles.json", j);
  ctx.store.csv_file("cycles.csv", to_csv(sum));
  log(Stage::simulate, "speedup " + format_number(sum.speedup) + ", eligible sparsity " +
                           format_number(sum.eligible_sparsity()));
}

void stage_report(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& model = model_of(ctx, Stage::report);
  const auto& table = table_of(ctx, Stage::report);
  const auto rows = detection_rows(ctx, Stage::report);
  ctx.store.csv_file("detection.csv", detection_csv(rows));
  ctx.store.csv_file("k_sweep.csv", k_sweep_csv(rows));
  ctx.store.csv_file("beta_sweep.csv", beta_sweep_csv(rows));

  NoiseConfig adaptive = cfg.noise;
  adaptive.mode = NoiseMode::sparsify;
  std::vector<NamedHistogram> hists;
  std::vector<NoiseStudyRow> study;
  std::map<std::string, std::map<std::string, SampleStats>> stats;  // set -> mode label -> stats
  for (const auto& set : detection_sets(ctx, Stage::report)) {
    const auto verdicts = read_verdicts(ctx, set.name, Stage::report);
    std::vector<double> detector_first;
    for (const auto& v : verdicts) detector_first.push_back(v.l1_history.at(0));
    hists.push_back({set.name, "detector", l1_histogram(detector_first)});

    const auto sparse = first_pass_distances(model, table, adaptive, set.inputs, cfg.base_seed, set.name);
    hists.push_back({set.name, "adaptive_sparsify", l1_histogram(sparse)});
    study.push_back({set.name, "adaptive_sparsify", 0.0, sample_stats(sparse)});
    stats[set.name]["adaptive_sparsify"] = study.back().stats;
    for (double level : kStudyLevels) {
      std::vector<double> d;
      for (std::size_t i = 0; i < set.inputs.size(); ++i)
        d.push_back(l1_distance(
            noisy_activation_forward(model, level, set.inputs[i], pass_seed(input_seed(cfg.base_seed, set.name, i), 1)),
            predict(model, set.inputs[i])));
      const std::string label = "activation_" + format_number(level);
      hists.push_back({set.name, label, l1_histogram(d)});
      study.push_back({set.name, "activation", level, sample_stats(d)});
      stats[set.name][label] = study.back().stats;
    }
  }
  ctx.store.csv_file("histograms.csv", histogram_csv(hists));
  ctx.store.csv_file("noise_study.csv", noise_study_csv(study));

  json separations = json::object();
  for (const auto& [set, modes] : stats) {
    if (set == "benign") continue;
    for (const auto& [mode, s] : modes) separations[set][mode] = separation(stats["benign"][mode], s);
  }
  json sets = json::array();
  for (const auto& r : rows) sets.push_back(row_json(r));
  ctx.store.json_file("report.json", {{"sets", sets}, {"separation", separations}});
}

}  // namespace

Splits load_splits(const ExperimentConfig& cfg) {
  const std::size_t need = cfg.splits.train + cfg.splits.test + cfg.splits.calibration;
  Splits s;
  if (cfg.dataset.kind == DatasetSpec::Kind::synth) {
    const auto n = [](std::size_t v) { return static_cast<std::int64_t>(v); };
    if (cfg.splits.train) s.train = synth_dataset(cfg.dataset.seed, n(cfg.splits.train), cfg.image_size, 0);
    s.train.class_count = kSynthClasses;
    s.test = synth_dataset(cfg.dataset.seed, n(cfg.splits.test), cfg.image_size, cfg.splits.train);
    s.calibration = synth_dataset(cfg.dataset.seed, n(cfg.splits.calibration), cfg.image_size,
                                  cfg.splits.train + cfg.splits.test);
    return s;
  }
  Dataset all = load_idx_dataset(cfg.dataset.images, cfg.dataset.labels);
  if (all.images.size() < need)
    throw std::invalid_argument("dataset: " + std::to_string(all.images.size()) + " samples, splits need " +
                                std::to_string(need));
  const std::size_t h = fitted_side(all.images[0].extent(1)), w = fitted_side(all.images[0].extent(2));
  if (h < 12 || w < 12) throw std::invalid_argument("dataset: images too small for the fixture architecture");
  for (auto& img : all.images)
    if (img.extent(1) != h || img.extent(2) != w) img = crop_center(img, h, w);
  s.train = slice(all, 0, cfg.splits.train);
  s.test = slice(all, cfg.splits.train, cfg.splits.test);
  s.calibration = slice(all, cfg.splits.train + cfg.splits.test, cfg.splits.calibration);
  return s;
}

void run_stage(const ExperimentConfig& cfg, Stage stage) {
  try {
    Context ctx{cfg, Store(cfg), load_splits(cfg), std::nullopt, std::nullopt};
    ctx.store.json_file("config.json", {{"config", to_json(cfg)}});
    switch (stage) {
      case Stage::train: stage_train(ctx); break;
      case Stage::profile: stage_profile(ctx); break;
      case Stage::attack: stage_attack(ctx); break;
      case Stage::calibrate: stage_calibrate(ctx); break;
      case Stage::detect: stage_detect(ctx); break;
      case Stage::eval: stage_eval(ctx); break;
      case Stage::simulate: stage_simulate(ctx); break;
      case Stage::report: stage_report(ctx); break;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void run_pipeline(const ExperimentConfig& cfg) {
  for (Stage s : kAllStages) run_stage(cfg, s);
}

std::vector<VerifyIssue> verify_outputs(const ExperimentConfig& cfg) {
  std::vector<VerifyIssue> issues;
  if (!fs::is_directory(cfg.output_dir)) return {{cfg.output_dir, "output directory does not exist"}};
  const Provenance want = provenance_of(cfg);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(cfg.output_dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto check = check_artifact(f);
    if (!check.problem.empty()) {
      issues.push_back({f, check.problem});
      continue;
    }
    if (check.provenance->config_hash != want.config_hash)
      issues.push_back({f, "config hash " + check.provenance->config_hash + " differs from " + want.config_hash});
    else if (check.provenance->base_seed != want.base_seed)
      issues.push_back({f, "base_seed " + std::to_string(check.provenance->base_seed) + " differs from " +
                               std::to_string(want.base_seed)});
    else if (check.provenance->tool_version != want.tool_version)
      issues.push_back({f, "tool version " + check.provenance->tool_version + " differs from " + want.tool_version});
  }
  return issues;
}

DetectionVerdict verdict_from_record(const json& r) {
  DetectionVerdict v;
  const auto label = r.at("label").get<std::string>();
  if (label == "benign") v.label = Label::benign;
  else if (label == "adversarial") v.label = Label::adversarial;
  else throw FormatError("verdict: unknown label '" + label + "'");
  const auto by = r.at("terminated_by").get<std::string>();
  if (by == "greedy") v.terminated_by = Termination::greedy;
  else if (by == "average") v.terminated_by = Termination::average;
  else if (by == "cap") v.terminated_by = Termination::cap;
  else throw FormatError("verdict: unknown termination '" + by + "'");
  v.runs_used = r.at("runs_used").get<std::size_t>();
  v.final_class = r.at("final_class").get<std::size_t>();
  v.l1_history = r.at("l1_history").get<std::vector<double>>();
  return v;
}

}  // namespace stochdet
