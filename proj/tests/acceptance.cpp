// One PASS/FAIL line per acceptance criterion. Exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "detector_table.hpp"
#include "stochdet/dyscnn.hpp"
#include "stochdet/pipeline.hpp"
#include "stochdet/report.hpp"
#include "stochdet/rng.hpp"
#include "stochdet/sparsifier.hpp"
#include "support.hpp"

using namespace stochdet;
using namespace stochdet::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

int failures = 0;

void run(int id, const std::string& title, double budget_s, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.note(std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.require(secs < budget_s, "runtime " + num(secs) + " s over budget " + num(budget_s) + " s");
  if (!o.pass) ++failures;
  std::printf("criterion %d %s: %s (%.1f s) [%s]\n", id, o.pass ? "PASS" : "FAIL", title.c_str(), secs,
              o.detail.c_str());
  std::fflush(stdout);
}

// ---- criterion 1 --------------------------------------------------------

void numerical_core(Outcome& o) {
  double worst[3] = {0, 0, 0};
  double worst_sum = 0;
  std::size_t pairs = 0;
  for (std::uint64_t s = 1; s <= 24; ++s, ++pairs) {
    const Model m = random_model(s);
    const Tensor x = random_tensor(m.input_shape(), 1000 + s);
    const auto losses = random_losses(m, x, 2000 + s);
    for (std::size_t k = 0; k < losses.size(); ++k) worst[k] = std::max(worst[k], input_gradient_error(m, x, losses[k]));
    for (std::uint64_t r = 0; r < 5; ++r) {
      const auto p = predict(m, random_tensor(m.input_shape(), derive(s, r), -4, 4));
      worst_sum = std::max(worst_sum, std::abs(std::accumulate(p.probs.begin(), p.probs.end(), 0.0) - 1.0));
    }
  }
  const auto& f = fixture();
  for (std::size_t i = 0; i < 50; ++i) {
    for (const auto& p : {predict(f.model, f.test.images[i]),
                          noisy_forward(f.model, draw_plan(f.model, f.table, 0.6, i), f.test.images[i]),
                          noisy_activation_forward(f.model, 0.9, f.test.images[i], i)})
      worst_sum = std::max(worst_sum, std::abs(std::accumulate(p.probs.begin(), p.probs.end(), 0.0) - 1.0));
  }
  o.note(std::to_string(pairs) + " random pairs; worst relative gradient error: cross-entropy " + num(worst[0]) +
         ", margin " + num(worst[1]) + ", defense-aware " + num(worst[2]) + "; worst |sum(p)-1| " + num(worst_sum));
  o.require(pairs >= 20, "at least 20 pairs");
  for (double w : worst) o.require(w <= 1e-3, "gradient error " + num(w) + " > 1e-3");
  o.require(worst_sum <= 1e-9, "probabilities sum to 1 within 1e-9");
}

// ---- criterion 2 --------------------------------------------------------

void sparsification_suite(Outcome& o) {
  const auto& f = fixture();
  std::size_t filters = 0, mask_checks = 0;
  bool monotone = true, oracle = true, rule = true, bitwise = true, determinism = true;
  for (std::size_t l = 0; l < f.model.layer_count(); ++l) {
    if (!f.model.layer(l).parametric()) continue;
    const std::size_t fs_ = f.model.filter_size(l);
    for (std::size_t k = 0; k < f.model.filter_count(l); ++k, ++filters) {
      const auto& ft = f.table.filter(l, k);
      std::vector<double> mags;
      for (std::size_t j = 0; j < fs_; ++j) mags.push_back(std::abs(f.model.params(l).weights[k * fs_ + j]));
      std::vector<double> sorted = mags;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t g = 0; g < kRateSteps; ++g) {
        if (g > 0 && (ft.tau[g] < ft.tau[g - 1] || ft.drop_count[g] < ft.drop_count[g - 1])) monotone = false;
        auto d = static_cast<std::size_t>(std::floor(grid_rate(g) * static_cast<double>(fs_) + 1e-12));
        while (d > 0 && d < fs_ && sorted[d - 1] == sorted[d]) --d;
        const auto below = static_cast<std::size_t>(
            std::count_if(mags.begin(), mags.end(), [&](double m) { return m < ft.tau[g]; }));
        if (ft.drop_count[g] != d || below != d) oracle = false;
      }
    }
  }
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    const double rate = 0.1 + 0.02 * static_cast<double>(seed % 35);
    const auto plan = draw_plan(f.model, f.table, rate, seed);
    if (!(plan == draw_plan(f.model, f.table, rate, seed))) determinism = false;
    for (std::size_t l = 0; l < f.model.layer_count(); ++l) {
      const auto& lp = plan.layers[l];
      if (lp.mask.empty()) continue;
      const std::size_t fs_ = f.model.filter_size(l);
      for (std::size_t k = 0; k < lp.filters.size(); ++k)
        for (std::size_t j = 0; j < fs_; ++j, ++mask_checks) {
          const bool drop = std::abs(f.model.params(l).weights[k * fs_ + j]) < lp.filters[k].threshold;
          if (lp.mask[k * fs_ + j] != (drop ? 0 : 1)) rule = false;
        }
    }
    const Model zeroed = f.model.with_masks_applied(plan.masks());
    const Tensor& x = f.test.images[seed];
    if (!(noisy_forward(f.model, plan, x) == predict(zeroed, x))) bitwise = false;
  }
  o.note(std::to_string(filters) + " filters x " + std::to_string(kRateSteps) + " rates; " +
         std::to_string(mask_checks) + " mask bits checked over 40 plans");
  o.require(monotone, "threshold monotonicity");
  o.require(oracle, "sort-based oracle");
  o.require(rule, "strict-below-threshold mask rule");
  o.require(bitwise, "masked forward equals zeroed-weight forward bitwise");
  o.require(determinism, "plan determinism");
}

// ---- criterion 3 --------------------------------------------------------

void detector_table(Outcome& o) {
  std::set<std::pair<Label, Termination>> outcomes;
  std::size_t passed = 0;
  const auto table = decision_table();
  for (const auto& c : table) {
    const auto err = check_case(c);
    o.require(err.empty(), c.name + ":" + err);
    if (err.empty()) ++passed;
    outcomes.insert({c.label, c.by});
  }
  const auto t = table_thresholds();
  const bool pending = !decide(std::vector<double>{}, t, 5) && !decide(std::vector<double>{1.0}, t, 5) &&
                       !decide(std::vector<double>{1.0, 1.1}, t, 5);
  o.note(std::to_string(passed) + "/" + std::to_string(table.size()) + " cases; " + std::to_string(outcomes.size()) +
         "/6 (label, termination) outcomes; pending branch " + (pending ? "hit" : "missed"));
  o.require(outcomes.size() == 6, "every labelled outcome reached");
  o.require(pending, "undecided branch");
}

// ---- criteria 4-7, 9 ------------------------------------------------------

struct Run {
  fs::path dir;
  json sets;       // report.json "sets"
  json separation; // report.json "separation"
  std::vector<NoiseStudyRow> noise;
  double test_accuracy = 0;
};

std::vector<NoiseStudyRow> parse_noise_csv(const std::string& body) {
  std::vector<NoiseStudyRow> rows;
  std::istringstream in(body);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string f[6];
    for (auto& s : f) std::getline(ls, s, ',');
    rows.push_back({f[0], f[1], std::stod(f[2]), {std::stoul(f[3]), std::stod(f[4]), std::stod(f[5])}});
  }
  return rows;
}

Run pipeline_run(const std::string& name, std::uint64_t base_seed) {
  Run r;
  r.dir = temp_dir("accept-" + name);
  ExperimentConfig cfg = default_config();
  cfg.output_dir = r.dir;
  cfg.base_seed = base_seed;
  run_pipeline(cfg);
  const json rep = open_json(read_text(r.dir / "report.json"));
  r.sets = rep.at("sets");
  r.separation = rep.at("separation");
  r.noise = parse_noise_csv(open_csv(read_text(r.dir / "noise_study.csv")));
  r.test_accuracy = open_json(read_text(r.dir / "train.json")).at("test_accuracy").get<double>();
  if (const auto issues = verify_outputs(cfg); !issues.empty())
    throw std::runtime_error("artifact verification failed: " + issues[0].path.string() + ": " + issues[0].problem);
  return r;
}

const json& set_row(const Run& r, const std::string& name) {
  for (const auto& s : r.sets)
    if (s.at("set") == name) return s;
  throw std::runtime_error("no row for set " + name);
}

double field(const Run& r, const std::string& set, const std::string& key) {
  const auto& v = set_row(r, set).at(key);
  if (v.is_null()) throw std::runtime_error(set + "." + key + " is empty");
  return v.get<double>();
}

const NoiseStudyRow& noise_row(const Run& r, const std::string& set, const std::string& mode, double level) {
  for (const auto& n : r.noise)
    if (n.set == set && n.mode == mode && std::abs(n.level - level) < 1e-9) return n;
  throw std::runtime_error("no noise-study row for " + set + "/" + mode);
}

const std::string kCwK2 = "cw_k2";
const char* const kCw[] = {"cw_k0", "cw_k2", "cw_k5"};
const std::string kAwareLo = "aware_b0.0001", kAwareHi = "aware_b0.1";

void separation_gate(const Run& r, Outcome& o) {
  const auto& benign = noise_row(r, "benign", "adaptive_sparsify", 0);
  const auto& adv = noise_row(r, kCwK2, "adaptive_sparsify", 0);
  const double sep = separation(benign.stats, adv.stats);
  o.note("test accuracy " + num(r.test_accuracy) + "; benign mean " + num(benign.stats.mean) + " std " +
         num(benign.stats.std) + " (n=" + std::to_string(benign.stats.count) + "); cw k=2 mean " +
         num(adv.stats.mean) + " (n=" + std::to_string(adv.stats.count) + "); separation " + num(sep) + " std");
  o.require(r.test_accuracy >= 0.95, "fixture accuracy >= 95%");
  o.require(benign.stats.count >= 200 && adv.stats.count >= 200, ">= 200 samples per set");
  o.require(sep >= 2.0, "separation >= 2 benign std");
}

void detection_gate(const Run& r, Outcome& o) {
  const double fpr = field(r, "benign", "fpr");
  std::string rates;
  for (const char* s : kCw) {
    const double d = field(r, s, "detection_rate");
    rates += std::string(rates.empty() ? "" : ", ") + s + " " + num(d);
    o.require(d >= 0.70, std::string(s) + " detection >= 70%");
  }
  const double gap = std::abs(field(r, "cw_k5", "detection_rate") - field(r, "cw_k0", "detection_rate"));
  o.note("benign FPR " + num(fpr) + "; detection " + rates + "; |k5 - k0| " + num(gap));
  o.require(fpr <= 0.10, "benign FPR <= 10%");
  o.require(gap <= 0.15, "k=5 within 15 points of k=0");
}

void adaptive_attack_gate(const Run& r, Outcome& o) {
  const double n_lo = field(r, kAwareLo, "samples"), n_hi = field(r, kAwareHi, "samples");
  const double l1_lo = field(r, kAwareLo, "mean_l1_to_target"), l1_hi = field(r, kAwareHi, "mean_l1_to_target");
  const double l2_lo = field(r, kAwareLo, "mean_l2"), l2_hi = field(r, kAwareHi, "mean_l2");
  const double d_lo = field(r, kAwareLo, "detection_rate"), d_hi = field(r, kAwareHi, "detection_rate");
  o.note("beta 1e-4 vs 1e-1: successes " + num(n_lo) + "/" + num(n_hi) + ", L1 to target " + num(l1_lo) + "/" +
         num(l1_hi) + ", L2 " + num(l2_lo) + "/" + num(l2_hi) + ", detection " + num(d_lo) + "/" + num(d_hi));
  o.require(n_lo >= 50 && n_hi >= 50, ">= 50 successes per setting");
  o.require(l1_hi < l1_lo, "lower L1 to target at beta 1e-1");
  o.require(l2_hi > l2_lo, "higher L2 at beta 1e-1");
  o.require(d_lo > d_hi, "higher detection at beta 1e-4");
}

void activation_study_gate(const Run& r, Outcome& o) {
  const double lo = kStudyLevels[0], hi = kStudyLevels[1];
  std::set<std::string> sets;
  for (const auto& n : r.noise) sets.insert(n.set);
  for (const auto& s : sets) {
    const double m_lo = noise_row(r, s, "activation", lo).stats.mean, m_hi = noise_row(r, s, "activation", hi).stats.mean;
    o.require(m_hi > m_lo, s + " mean L1 at level " + num(hi) + " (" + num(m_hi) + ") > level " + num(lo) + " (" +
                               num(m_lo) + ")");
  }
  const auto sep_of = [&](const std::string& mode, double level) {
    return separation(noise_row(r, "benign", mode, level).stats, noise_row(r, kCwK2, mode, level).stats);
  };
  const double adaptive = sep_of("adaptive_sparsify", 0), act_lo = sep_of("activation", lo),
               act_hi = sep_of("activation", hi);
  o.note("level ordering checked on " + std::to_string(sets.size()) + " sets; cw k=2 separation: adaptive " +
         num(adaptive) + ", activation " + num(lo) + " " + num(act_lo) + ", activation " + num(hi) + " " + num(act_hi));
  o.require(adaptive > act_lo, "adaptive separation > activation level " + num(lo));
  o.require(adaptive > act_hi, "adaptive separation > activation level " + num(hi));
}

// ---- criterion 8 --------------------------------------------------------

std::size_t schedule_cost(const Schedule& s) {
  std::size_t c = 0;
  for (const auto& g : s.groups) c += group_cost(g);
  return c;
}

std::size_t chunk_cost(const std::vector<std::size_t>& order, const std::vector<std::size_t>& nnz, std::size_t k) {
  std::size_t cost = 0;
  for (std::size_t i = 0; i < order.size(); i += k) {
    std::size_t m = 0;
    for (std::size_t j = i; j < std::min(order.size(), i + k); ++j) m = std::max(m, nnz[order[j]]);
    cost += m;
  }
  return cost;
}

void simulator_gate(Outcome& o) {
  // Hand examples on a one-layer dense model, one output position.
  auto dense_case = [](const std::vector<std::size_t>& nnz, std::size_t width) {
    std::pair<Model, SparsificationPlan> c{
        Model({1, 1, width}, {LayerSpec::dense(nnz.size()), LayerSpec::softmax()}, nnz.size()), {}};
    c.second.layers.resize(2);
    for (std::size_t f = 0; f < nnz.size(); ++f) {
      for (std::size_t j = 0; j < width; ++j) c.second.layers[0].mask.push_back(j < nnz[f] ? 1 : 0);
      FilterPlan fp;
      fp.nnz = nnz[f];
      fp.weight_count = width;
      c.second.layers[0].filters.push_back(fp);
    }
    return c;
  };
  AcceleratorConfig cfg;
  cfg.group_size = 4;
  cfg.lookahead_window = 5;
  const auto [m1, p1] = dense_case({3, 5, 2, 4}, 8);
  const auto r1 = simulate_layer(m1, 0, p1, group_filters(p1, 0, cfg), cfg);
  o.require(r1.sparse_cycles == 5 && r1.idle_mac_slots == 6, "idle-slot example (cycles " +
                                                                 std::to_string(r1.sparse_cycles) + ", idle " +
                                                                 std::to_string(r1.idle_mac_slots) + ")");
  cfg.group_size = 2;
  cfg.lookahead_window = 6;
  const auto [m2, p2] = dense_case({2, 3, 4, 5}, 6);
  const auto sorted = simulate_layer(m2, 0, p2, group_filters(p2, 0, cfg), cfg).sparse_cycles;
  Schedule bad;
  bad.groups = {{{3, 5}, {0, 2}}, {{2, 4}, {1, 3}}};
  const auto paired = simulate_layer(m2, 0, p2, bad, cfg).sparse_cycles;
  o.require(sorted == 8 && paired == 9, "grouping example (" + std::to_string(sorted) + " vs " +
                                            std::to_string(paired) + ")");

  CounterStream rng(8);
  std::size_t random_trials = 0, exhaustive = 0;
  bool beats = true, optimal = true, monotone = true, conserved = true;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 6 + rng.below(26), k = 2 + rng.below(6);
    std::vector<std::size_t> nnz(n);
    for (auto& v : nnz) v = rng.below(80);
    const std::size_t best = schedule_cost(group_by_nnz(nnz, k));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int r = 0; r < 1000; ++r, ++random_trials) {
      shuffle(order, rng);
      if (chunk_cost(order, nnz, k) < best) beats = false;
    }
  }
  for (std::size_t n = 1; n <= 8; ++n)
    for (std::size_t k = 1; k <= n; ++k, ++exhaustive) {
      std::vector<std::size_t> nnz(n);
      for (auto& v : nnz) v = rng.below(12);
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::size_t best = SIZE_MAX;
      do best = std::min(best, chunk_cost(order, nnz, k));
      while (std::next_permutation(order.begin(), order.end()));
      if (schedule_cost(group_by_nnz(nnz, k)) != best) optimal = false;
    }
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t len = 1 + rng.below(40), lanes_n = 1 + rng.below(6);
    std::vector<Mask> lanes(lanes_n, Mask(len));
    for (auto& m : lanes) {
      const double keep = rng.uniform();
      for (auto& b : m) b = rng.uniform() < keep;
    }
    std::size_t prev = SIZE_MAX;
    for (std::size_t w = 1; w <= len + 1; ++w) {
      const auto s = mask_stream_trace(lanes, w).stalls;
      if (s > prev) monotone = false;
      prev = s;
    }
  }
  const auto& f = fixture();
  std::size_t layers = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed)
    for (std::size_t w : {1, 2, 4, 8}) {
      AcceleratorConfig c;
      c.lookahead_window = w;
      const auto rep = simulate_model(f.model, draw_plan(f.model, f.table, 0.04 * static_cast<double>(seed), seed), c);
      for (const auto& l : rep.layers) {
        ++layers;
        if (l.filters % c.group_size != 0 || l.consumed_weights != l.nnz ||
            c.group_size * l.sparse_cycles != l.nnz * l.positions + l.idle_mac_slots + c.group_size * l.stall_cycles)
          conserved = false;
      }
    }
  o.note(std::to_string(random_trials) + " random chunkings, " + std::to_string(exhaustive) +
         " exhaustive cases, 300 random mask groups, " + std::to_string(layers) + " simulated layers");
  o.require(beats, "sorted chunking beats or ties random chunkings");
  o.require(optimal, "sorted chunking exhaustively optimal");
  o.require(monotone, "stalls non-increasing in W");
  o.require(conserved, "work conservation");
}

// ---- criterion 9 --------------------------------------------------------

void determinism_gate(const Run& a, Outcome& o) {
  const Run b = pipeline_run("b", default_config().base_seed);
  std::size_t identical = 0, compared = 0;
  for (const char* f : {"metrics.csv", "detection.csv", "k_sweep.csv", "beta_sweep.csv", "histograms.csv",
                        "noise_study.csv", "cycles.csv"}) {
    ++compared;
    const bool same = read_text(a.dir / f) == read_text(b.dir / f);
    identical += same;
    o.require(same, std::string(f) + " differs between identical runs");
  }
  const Run c = pipeline_run("c", default_config().base_seed + 1);
  std::size_t changed_logs = 0, logs = 0;
  for (const auto& entry : fs::directory_iterator(a.dir / "verdicts")) {
    const auto other = c.dir / "verdicts" / entry.path().filename();
    if (!fs::exists(other)) continue;
    ++logs;
    changed_logs += open_json(read_text(entry.path())) != open_json(read_text(other));
  }
  o.require(logs > 0 && changed_logs == logs, "every verdict log changes with base_seed");
  double worst = std::abs(field(a, "benign", "fpr") - field(c, "benign", "fpr"));
  for (const char* s : kCw)
    worst = std::max(worst, std::abs(field(a, s, "detection_rate") - field(c, s, "detection_rate")));
  o.note(std::to_string(identical) + "/" + std::to_string(compared) + " metric CSVs bitwise identical; " +
         std::to_string(changed_logs) + "/" + std::to_string(logs) + " verdict logs changed under base_seed+1; FPR " +
         num(field(c, "benign", "fpr")) + "; largest aggregate shift " + num(worst * 100) + " points");
  o.require(worst <= 0.05, "aggregate metrics within 5 points");
  fs::remove_all(b.dir);
  fs::remove_all(c.dir);
}

}  // namespace

int main() {
  run(1, "numerical core", 60, numerical_core);
  run(2, "sparsification soundness", 60, sparsification_suite);
  run(3, "detector state machine", 60, detector_table);

  std::optional<Run> base;
  double base_secs = 0;
  {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      base = pipeline_run("a", default_config().base_seed);
    } catch (const std::exception& e) {
      std::printf("fixture pipeline failed: %s\n", e.what());
    }
    base_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("fixture pipeline: %.1f s\n", base_secs);
  }
  auto on_base = [&](void (*gate)(const Run&, Outcome&)) {
    return [&, gate](Outcome& o) {
      if (!base) throw std::runtime_error("fixture pipeline did not complete");
      gate(*base, o);
    };
  };
  // The shared pipeline run counts against each budget that depends on it.
  run(4, "separation on the fixture", 300 - base_secs, on_base(separation_gate));
  run(5, "detection gate", 600 - base_secs, on_base(detection_gate));
  run(6, "adaptive-attack tradeoff", 600 - base_secs, on_base(adaptive_attack_gate));
  run(7, "activation-noise study", 300 - base_secs, on_base(activation_study_gate));
  run(8, "simulator correctness", 120, simulator_gate);
  run(9, "end-to-end determinism", 1800 - base_secs, on_base(determinism_gate));
  if (base) fs::remove_all(base->dir);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
