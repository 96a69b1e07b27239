#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "stochdet/dyscnn.hpp"
#include "stochdet/rng.hpp"
#include "stochdet/sparsifier.hpp"
#include "support.hpp"

using namespace stochdet;
using namespace stochdet::testing;

namespace {

// One dense layer of `filters` rows over `width` inputs; filter f keeps its first nnz[f] weights.
struct DenseCase {
  Model model;
  SparsificationPlan plan;
};

DenseCase dense_case(const std::vector<std::size_t>& nnz, std::size_t width) {
  DenseCase c{Model({1, 1, width}, {LayerSpec::dense(nnz.size()), LayerSpec::softmax()}, nnz.size()), {}};
  c.plan.layers.resize(2);
  auto& lp = c.plan.layers[0];
  for (std::size_t f = 0; f < nnz.size(); ++f) {
    for (std::size_t j = 0; j < width; ++j) lp.mask.push_back(j < nnz[f] ? 1 : 0);
    FilterPlan fp;
    fp.nnz = nnz[f];
    fp.weight_count = width;
    lp.filters.push_back(fp);
  }
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

std::size_t schedule_cost(const Schedule& s) {
  std::size_t c = 0;
  for (const auto& g : s.groups) c += group_cost(g);
  return c;
}

Mask bits(const std::string& s) {
  Mask m;
  for (char ch : s) m.push_back(ch == '1');
  return m;
}

Mask random_mask(CounterStream& rng, std::size_t len, double keep) {
  Mask m(len);
  for (auto& b : m) b = rng.uniform() < keep;
  return m;
}

// Cycle-by-cycle replay written from the rule: the window opens at the
// slowest unfinished lane's next input and spans `w` inputs.
std::pair<std::size_t, std::size_t> replay(const std::vector<Mask>& lanes, std::size_t w) {
  const std::size_t len = lanes[0].size();
  std::vector<std::size_t> pos(lanes.size(), 0);
  auto advance = [&](std::size_t l) {
    while (pos[l] < len && !lanes[l][pos[l]]) ++pos[l];
  };
  for (std::size_t l = 0; l < lanes.size(); ++l) advance(l);
  std::size_t cycles = 0, densest = 0;
  for (const auto& m : lanes) densest = std::max<std::size_t>(densest, std::count(m.begin(), m.end(), 1));
  while (true) {
    const std::size_t slowest = *std::min_element(pos.begin(), pos.end());
    if (slowest >= len) break;
    ++cycles;
    for (std::size_t l = 0; l < lanes.size(); ++l)
      if (pos[l] < len && pos[l] - slowest < w) {
        ++pos[l];
        advance(l);
      }
  }
  return {cycles, cycles - densest};
}

}  // namespace

TEST_CASE("one group: six idle slots") {
  const auto c = dense_case({3, 5, 2, 4}, 8);
  AcceleratorConfig cfg;
  cfg.group_size = 4;
  cfg.lookahead_window = 5;
  const auto sched = group_filters(c.plan, 0, cfg);
  REQUIRE(sched.groups.size() == 1);
  const auto r = simulate_layer(c.model, 0, c.plan, sched, cfg);
  CHECK(r.positions == 1);
  CHECK(r.sparse_cycles == 5);
  CHECK(r.idle_mac_slots == 6);
  CHECK(r.stall_cycles == 0);
  CHECK(r.dense_cycles == 8);
}

TEST_CASE("grouping by nnz: 8 cycles sorted vs 9 adversarial") {
  const std::vector<std::size_t> nnz{2, 3, 4, 5};
  const auto s = group_by_nnz(nnz, 2);
  REQUIRE(s.groups.size() == 2);
  CHECK(s.groups[0] == std::vector<ScheduledFilter>{{3, 5}, {2, 4}});
  CHECK(s.groups[1] == std::vector<ScheduledFilter>{{1, 3}, {0, 2}});
  CHECK(schedule_cost(s) == 8);

  const auto c = dense_case(nnz, 6);
  AcceleratorConfig cfg;
  cfg.group_size = 2;
  cfg.lookahead_window = 6;
  CHECK(simulate_layer(c.model, 0, c.plan, group_filters(c.plan, 0, cfg), cfg).sparse_cycles == 8);
  Schedule bad;
  bad.groups = {{{3, 5}, {0, 2}}, {{2, 4}, {1, 3}}};
  CHECK(simulate_layer(c.model, 0, c.plan, bad, cfg).sparse_cycles == 9);
}

TEST_CASE("grouping edge cases") {
  CHECK(group_by_nnz(std::vector<std::size_t>{4, 1, 3}, 8).groups.size() == 1);
  const auto c = dense_case({3, 3, 3, 3, 3, 3}, 5);
  AcceleratorConfig cfg;
  cfg.group_size = 4;
  const auto r = simulate_layer(c.model, 0, c.plan, group_filters(c.plan, 0, cfg), cfg);
  CHECK(r.idle_mac_slots == 0);
  CHECK(r.groups == 2);
  Schedule missing;
  missing.groups = {{{0, 3}, {1, 3}}};
  CHECK_THROWS(simulate_layer(c.model, 0, c.plan, missing, cfg));
  Schedule wrong;
  wrong.groups = {{{0, 2}, {1, 3}, {2, 3}, {3, 3}}, {{4, 3}, {5, 3}}};
  CHECK_THROWS(simulate_layer(c.model, 0, c.plan, wrong, cfg));
}

TEST_CASE("sorted chunking beats or ties random chunkings") {
  CounterStream rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 6 + rng.below(20), k = 2 + rng.below(4);
    std::vector<std::size_t> nnz(n);
    for (auto& v : nnz) v = rng.below(50);
    const std::size_t sorted = schedule_cost(group_by_nnz(nnz, k));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int r = 0; r < 1000; ++r) {
      shuffle(order, rng);
      CHECK(sorted <= chunk_cost(order, nnz, k));
    }
  }
}

TEST_CASE("sorted chunking is optimal among all chunkings of up to 8 filters") {
  CounterStream rng(7);
  for (std::size_t n = 1; n <= 8; ++n)
    for (std::size_t k = 1; k <= n; ++k) {
      std::vector<std::size_t> nnz(n);
      for (auto& v : nnz) v = rng.below(10);
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::size_t best = SIZE_MAX;
      do best = std::min(best, chunk_cost(order, nnz, k));
      while (std::next_permutation(order.begin(), order.end()));
      CAPTURE(n);
      CAPTURE(k);
      CHECK(schedule_cost(group_by_nnz(nnz, k)) == best);
    }
}

TEST_CASE("stream trace: disjoint halves at W=1") {
  const std::vector<Mask> lanes{bits("111100000"), bits("000011111")};
  const auto t = mask_stream_trace(lanes, 1);
  const auto [cycles, stalls] = replay(lanes, 1);
  CHECK(t.cycles == cycles);
  CHECK(t.stalls == stalls);
  CHECK(t.cycles == 9);
  CHECK(t.stalls == 4);
  CHECK(t.consumed == 9);
  REQUIRE(t.selections.size() == 9);
  CHECK(t.selections[0] == std::vector<long>{0, -1});
  CHECK(t.selections[4] == std::vector<long>{-1, 4});
  CHECK(mask_stream_trace(lanes, 9).stalls == 0);
}

TEST_CASE("stream trace: properties on random masks") {
  CounterStream rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = 1 + rng.below(30), lanes_n = 1 + rng.below(5);
    std::vector<Mask> lanes;
    for (std::size_t l = 0; l < lanes_n; ++l) lanes.push_back(random_mask(rng, len, rng.uniform()));
    std::size_t total = 0;
    for (const auto& m : lanes) total += std::count(m.begin(), m.end(), 1);
    std::size_t prev = SIZE_MAX;
    for (std::size_t w = 1; w <= len + 1; ++w) {
      const auto t = mask_stream_trace(lanes, w);
      const auto [cycles, stalls] = replay(lanes, w);
      CHECK(t.cycles == cycles);
      CHECK(t.stalls == stalls);
      CHECK(t.consumed == total);
      CHECK(t.stalls <= prev);
      prev = t.stalls;
      if (w >= len) CHECK(t.stalls == 0);
    }
    const std::vector<Mask> same(3, lanes[0]);
    for (std::size_t w = 1; w <= 4; ++w) CHECK(mask_stream_trace(same, w).stalls == 0);
  }
}

TEST_CASE("fixture model: work conservation, dense plan, speedup bounds") {
  const auto& f = fixture();
  AcceleratorConfig cfg;
  const auto dense = simulate_model(f.model, draw_plan(f.model, f.table, 0.0, 1), cfg);
  CHECK(dense.sparse_cycles == dense.dense_cycles);
  CHECK(dense.idle_mac_slots == 0);
  CHECK(dense.speedup == 1.0);

  const NoiseConfig noise;
  for (std::size_t i = 0; i < 20; ++i) {
    const double budget = noise.sr_lo + (noise.sr_hi - noise.sr_lo) * static_cast<double>(i) / 19.0;
    const auto plan = draw_plan(f.model, f.table, budget, 500 + i);
    for (std::size_t w : {1, 2, 4, 16}) {
      cfg.lookahead_window = w;
      const auto rep = simulate_model(f.model, plan, cfg);
      for (const auto& l : rep.layers) {
        REQUIRE(l.filters % cfg.group_size == 0);
        CHECK(cfg.group_size * l.sparse_cycles ==
              l.nnz * l.positions + l.idle_mac_slots + cfg.group_size * l.stall_cycles);
        CHECK(l.consumed_weights == l.nnz);
      }
      const double s = rep.eligible_sparsity();
      CHECK(rep.eligible_speedup() <= 1.0 / (1.0 - s) + 1e-12);
      if (w == AcceleratorConfig{}.lookahead_window) {
        CHECK(rep.eligible_speedup() >= 1.0 / (1.0 - s + 0.15));
        CHECK(rep.eligible_speedup() <= 1.0 / (1.0 - s - 0.05));
      }
    }
  }
}

TEST_CASE("tiles take the busiest tile's cycles") {
  const auto c = dense_case({5, 4, 3, 2}, 6);
  AcceleratorConfig cfg;
  cfg.group_size = 1;
  cfg.lookahead_window = 6;
  cfg.tiles = 2;
  const auto r = simulate_layer(c.model, 0, c.plan, group_filters(c.plan, 0, cfg), cfg);
  CHECK(r.sparse_cycles == 5 + 3);
  CHECK(r.dense_cycles == 12);
}

TEST_CASE("accelerator config validation") {
  AcceleratorConfig cfg;
  cfg.group_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.lookahead_window = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

