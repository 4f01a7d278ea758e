#include <doctest.h>

#include <algorithm>

#include "flexquant/eqm.hpp"
#include "flexquant/runtime.hpp"
#include "support.hpp"

using namespace flexquant;
using namespace flexquant::testing;

namespace {

// Ladder QM(8) -> ... -> QM(2) downgrading modules in list order.
std::vector<EQMConfig> list_order_ladder(const ModelStore& store) {
  std::vector<EQMConfig> ladder{uniform_config(store, store.high())};
  for (std::size_t i = 0; i < store.module_count(); ++i) {
    auto a = ladder.back().assignment;
    a[i] = store.low();
    ladder.push_back(make_config(a, store));
  }
  return ladder;
}

// Bytes of every module version present in `to` but not in `from`.
std::size_t delta_bytes(const EQMConfig* from, const EQMConfig& to, const ModelStore& store) {
  std::size_t io = 0;
  for (std::size_t i = 0; i < to.assignment.size(); ++i) {
    if (!from || from->assignment[i] != to.assignment[i]) io += store.module_footprint(i, to.assignment[i]);
  }
  return io;
}

}  // namespace

TEST_CASE("select_config picks the largest config that fits") {
  const auto store = toy_store(0, {2, 8});
  const auto ladder = list_order_ladder(store);
  CHECK(select_config(ladder, 1000000) == 0u);
  CHECK(select_config(ladder, 208896) == 0u);
  CHECK(select_config(ladder, 208895) == 1u);
  CHECK(select_config(ladder, 61440) == 8u);
  CHECK_FALSE(select_config(ladder, 61439));
  for (std::size_t k = 0; k + 1 < ladder.size(); ++k) {
    CHECK(select_config(ladder, ladder[k].footprint_bytes - 1) == k + 1);
  }
}

TEST_CASE("transition cost") {
  const auto store = toy_store(0, {2, 8});
  const auto ladder = list_order_ladder(store);
  const auto same = transition_cost(ladder[0], ladder[0], store);
  CHECK(same.io_bytes == 0);
  CHECK(same.peak_bytes == 208896);

  // (0,ATTN) then (0,MLP): ladder[1] -> ladder[2] swaps the MLP 8 -> 2
  const auto mlp = transition_cost(ladder[1], ladder[2], store);
  CHECK(mlp.io_bytes == 10240);
  CHECK(mlp.peak_bytes == ladder[1].footprint_bytes + 10240);
  std::vector<BitWidth> only_mlp(8, BitWidth(8));
  only_mlp[1] = BitWidth(2);
  const auto direct = transition_cost(ladder[0], make_config(only_mlp, store), store);
  CHECK(direct.io_bytes == 10240);
  CHECK(direct.peak_bytes == 219136);

  for (std::size_t k = 0; k < ladder.size(); ++k) {
    for (std::size_t j = k + 1; j < ladder.size(); ++j) {
      const auto c = transition_cost(ladder[k], ladder[j], store);
      CHECK(c.io_bytes == delta_bytes(&ladder[k], ladder[j], store));
      std::size_t largest = 0;
      for (std::size_t i = 0; i < store.module_count(); ++i) {
        if (ladder[k].assignment[i] != ladder[j].assignment[i]) {
          largest = std::max(largest, store.module_footprint(i, ladder[j].assignment[i]));
        }
      }
      CHECK(c.peak_bytes == ladder[k].footprint_bytes + largest);
      // upward moves are never cheaper than the downward ones they undo
      const auto up = transition_cost(ladder[j], ladder[k], store);
      CHECK(up.io_bytes == delta_bytes(&ladder[j], ladder[k], store));
      CHECK(up.peak_bytes >= ladder[k].footprint_bytes);
    }
  }
  const auto load = load_cost(ladder[3], store);
  CHECK(load.io_bytes == ladder[3].footprint_bytes);
  CHECK(load.peak_bytes == ladder[3].footprint_bytes);
}

TEST_CASE("simulation under constant and stepped budgets") {
  const auto store = toy_store(0, {2, 8});
  const auto ladder = list_order_ladder(store);
  MemoryTrace flat;
  for (std::size_t s = 0; s < 10; ++s) flat.steps.push_back({s, 300000});
  const auto r = simulate(ladder, flat, store);
  CHECK(r.total_io == 208896);
  for (std::size_t s = 1; s < 10; ++s) CHECK(r.steps[s].io_bytes == 0);
  CHECK(r.violations_count == 0);

  MemoryTrace down;
  for (std::size_t k = 0; k < ladder.size(); ++k) down.steps.push_back({k, ladder[k].footprint_bytes});
  const auto d = simulate(ladder, down, store);
  std::size_t expected = ladder[0].footprint_bytes;
  for (std::size_t k = 1; k < ladder.size(); ++k) expected += delta_bytes(&ladder[k - 1], ladder[k], store);
  CHECK(d.total_io == expected);
  for (std::size_t k = 0; k < ladder.size(); ++k) CHECK(d.steps[k].chosen_config_index == k);
  // every step down overshoots its budget while the incoming version loads
  CHECK(d.violations_count == ladder.size() - 1);

  // round trip down and back up costs both directions
  MemoryTrace bounce{{{0, 300000}, {1, 61440}, {2, 300000}}};
  const auto b = simulate(ladder, bounce, store);
  CHECK(b.total_io == 208896 + delta_bytes(&ladder[0], ladder[8], store) + delta_bytes(&ladder[8], ladder[0], store));
  CHECK(b.steps[1].violation);  // peak exceeds the tight budget
  CHECK(b.steps[1].footprint <= b.steps[1].budget);
}

TEST_CASE("eviction when nothing fits") {
  const auto store = toy_store(0, {2, 8});
  const auto ladder = list_order_ladder(store);
  MemoryTrace t{{{0, 300000}, {1, 100}, {2, 300000}}};
  const auto r = simulate(ladder, t, store);
  CHECK(r.steps[1].violation);
  CHECK_FALSE(r.steps[1].chosen_config_index);
  CHECK(r.steps[1].io_bytes == 0);
  CHECK(r.steps[2].io_bytes == 208896);  // reload from nothing
  CHECK(r.violations_count == 1);
}

TEST_CASE("random-walk replay matches an independent oracle") {
  const auto store = toy_store(0, {2, 8});
  const auto ladder = list_order_ladder(store);
  const auto trace = random_walk_trace(200, 40000, 260000, 30000, 9);
  CHECK(trace.steps.size() == 200);
  CHECK(trace.steps[0].available_bytes == 260000);
  const auto r = simulate(ladder, trace, store);

  std::size_t io = 0;
  const EQMConfig* cur = nullptr;
  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    const EQMConfig* pick = nullptr;
    for (const auto& c : ladder) {
      if (c.footprint_bytes <= trace.steps[s].available_bytes) {
        pick = &c;
        break;
      }
    }
    if (pick) io += delta_bytes(cur, *pick, store);
    cur = pick;
    if (pick) CHECK(r.steps[s].footprint <= trace.steps[s].available_bytes);
  }
  CHECK(r.total_io == io);
  const auto again = simulate(ladder, trace, store);
  CHECK(again.total_io == r.total_io);
  CHECK(again.violations_count == r.violations_count);
}

TEST_CASE("full-model policy and granularity") {
  const auto store = toy_store(0, {2, 8});
  const auto ladder = list_order_ladder(store);
  CHECK(granularity(ladder) == 24576);
  CHECK(granularity(uniform_baseline(store)) == 147456);
  CHECK(granularity(std::vector<EQMConfig>{ladder[0]}) == 0);
  const auto base = uniform_baseline(toy_store(0, {2, 4, 8}));
  REQUIRE(base.size() == 3);
  CHECK(base[0].footprint_bytes > base[1].footprint_bytes);

  MemoryTrace t{{{0, 500000}, {1, 61440}}};
  const auto full = simulate(ladder, t, store, SwapPolicy::FullModel);
  CHECK(full.steps[1].io_bytes == 61440);
  CHECK(full.steps[1].peak_bytes == 208896 + 61440);
  CHECK(to_string(SwapPolicy::FullModel) == "full_model");
}

TEST_CASE("trace CSV parsing") {
  const auto t = parse_trace_csv("step,available_bytes\n0,100\r\n1, 200\n\n");
  REQUIRE(t.steps.size() == 2);
  CHECK(t.steps[1].available_bytes == 200);
  CHECK_THROWS_AS(parse_trace_csv("0,100\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_trace_csv("step,available_bytes\n0,abc\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_trace_csv("step,available_bytes\n0\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_trace_csv("step,available_bytes\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_trace_csv("step,available_bytes\n0,-5\n"), std::invalid_argument);
  CHECK_THROWS(load_trace_csv("/nonexistent/trace.csv"));
}
