#include <doctest.h>

#include <map>
#include <tuple>

#include "flexquant/eqm.hpp"
#include "flexquant/pruning.hpp"
#include "flexquant/serialization.hpp"
#include "support.hpp"

using namespace flexquant;
using namespace flexquant::testing;

namespace {

Ensemble handcrafted(const ModelStore& store, const std::vector<std::vector<int>>& rows) {
  Ensemble e;
  e.precisions = store.precisions();
  for (const auto& r : rows) {
    std::vector<BitWidth> a;
    for (int b : r) a.emplace_back(b);
    e.trajectory.push_back(make_config(a, store));
  }
  return e;
}

struct Setup {
  ModelStore store;
  CalibrationSet calib;
  SensitivityTable table;
  Evaluator evaluator;
  SearchParams params{2, 3, MetricKind::LogitDistance};
  Ensemble base;

  explicit Setup(std::uint64_t seed)
      : store(toy_store(seed, {2, 4, 8})),
        calib(test_calibration(32, 1)),
        table(build_sensitivity_table(store, calib)),
        evaluator(MetricKind::LogitDistance, calib, materialize(uniform_config(store, BitWidth(8)), store)),
        base(search_ensemble(store, evaluator, table, params, CandidatePool::all(store))) {}

  Ensemble prune(double rate) const {
    return prune_and_search(store, evaluator, table, rank_mid_modules(base, store), PruneRate(rate), params);
  }
};

}  // namespace

TEST_CASE("usage ranking rules") {
  const auto store = toy_store(0, {2, 3, 4, 8}, three_module_config());
  const auto a = handcrafted(store, {{8, 8, 8}, {8, 4, 8}, {4, 4, 8}, {4, 4, 2}, {2, 4, 2}, {2, 2, 2}});
  const auto ra = rank_mid_modules(a, store);
  REQUIRE(ra.entries.size() == 6);
  CHECK(ra.entries[0].module == ModuleId{0, ModuleKind::Mlp});
  CHECK(ra.entries[0].usage_count == 4);
  CHECK(ra.entries[0].first_use_index == 1u);
  CHECK(ra.entries[1].module == ModuleId{0, ModuleKind::Attn});
  CHECK(ra.entries[1].usage_count == 2);
  // unused pairs, lexicographic
  const std::vector<std::pair<ModuleId, int>> unused = {
      {{0, ModuleKind::Attn}, 3}, {{0, ModuleKind::Mlp}, 3}, {{1, ModuleKind::Attn}, 3}, {{1, ModuleKind::Attn}, 4}};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(ra.entries[2 + i].module == unused[i].first);
    CHECK(ra.entries[2 + i].bits == BitWidth(unused[i].second));
    CHECK(ra.entries[2 + i].usage_count == 0);
    CHECK_FALSE(ra.entries[2 + i].first_use_index);
  }

  // equal usage: the later (smaller-footprint) first use ranks higher
  const auto b = handcrafted(store, {{8, 8, 8}, {4, 8, 8}, {4, 4, 8}, {2, 4, 8}, {2, 2, 8}, {2, 2, 2}});
  const auto rb = rank_mid_modules(b, store);
  CHECK(rb.entries[0].module == ModuleId{0, ModuleKind::Mlp});
  CHECK(rb.entries[1].module == ModuleId{0, ModuleKind::Attn});
  CHECK(rb.entries[0].usage_count == rb.entries[1].usage_count);

  CHECK_THROWS_AS(rank_mid_modules(handcrafted(toy_store(0, {2, 8}, three_module_config()), {{8, 8, 8}}),
                                   toy_store(0, {2, 8}, three_module_config())),
                  std::invalid_argument);
}

TEST_CASE("prune count and rate validation") {
  CHECK(PruneRate(0.0).prune_count(8) == 0);
  CHECK(PruneRate(0.25).prune_count(8) == 2);
  CHECK(PruneRate(0.3).prune_count(8) == 3);
  CHECK(PruneRate(1.0).prune_count(8) == 8);
  CHECK(PruneRate(0.1).prune_count(30) == 3);
  CHECK(PruneRate(0.7).prune_count(10) == 7);
  CHECK_THROWS_AS(PruneRate(-0.1), std::invalid_argument);
  CHECK_THROWS_AS(PruneRate(1.5), std::invalid_argument);
}

TEST_CASE("storage cost") {
  const auto two = toy_store(0, {2, 8});
  const auto e = handcrafted(two, {{8, 8, 8, 8, 8, 8, 8, 8}, {2, 8, 8, 8, 8, 8, 8, 8}, {2, 2, 2, 2, 2, 2, 2, 2}});
  CHECK(storage_cost(e, two) == 270336);

  const auto three = toy_store(0, {2, 4, 8});
  const auto f = handcrafted(three, {{8, 8, 8, 8, 8, 8, 8, 8},
                                     {4, 8, 8, 8, 8, 8, 8, 8},
                                     {4, 4, 8, 8, 8, 8, 8, 8},
                                     {4, 4, 8, 4, 8, 8, 8, 8},
                                     {2, 2, 2, 2, 2, 2, 2, 2}});
  // ATTN 4-bit: 8192 + 1024, MLP 4-bit: 16384 + 2048
  CHECK(storage_cost(f, three) == 270336 + 9216 + 18432 + 18432);
}

TEST_CASE("independent usage count over the serialized manifest") {
  Setup s(0);
  const auto j = ensemble_to_json(s.base, s.store);
  std::map<std::tuple<int, std::string, int>, std::size_t> counts;
  for (const auto& c : j.at("trajectory")) {
    for (const auto& m : c.at("assignment")) {
      const int bits = m.at("bits").get<int>();
      if (bits == 4) ++counts[{m.at("layer").get<int>(), m.at("kind").get<std::string>(), bits}];
    }
  }
  const auto ranking = rank_mid_modules(s.base, s.store);
  CHECK(ranking.entries.size() == 8);
  for (const auto& e : ranking.entries) {
    const auto key = std::make_tuple(static_cast<int>(e.module.layer), std::string(to_string(e.module.kind)), 4);
    const auto it = counts.find(key);
    CHECK(e.usage_count == (it == counts.end() ? 0u : it->second));
  }
  for (std::size_t i = 0; i + 1 < ranking.entries.size(); ++i) {
    CHECK(ranking.entries[i].usage_count >= ranking.entries[i + 1].usage_count);
  }
}

TEST_CASE("prune rate boundaries and monotone storage") {
  Setup s(1);
  const auto p0 = s.prune(0.0);
  REQUIRE(p0.trajectory.size() == s.base.trajectory.size());
  for (std::size_t k = 0; k < p0.trajectory.size(); ++k) {
    CHECK(p0.trajectory[k].assignment == s.base.trajectory[k].assignment);
    CHECK(*p0.trajectory[k].metric == *s.base.trajectory[k].metric);
  }
  CHECK(p0.pruned_pairs.empty());
  CHECK(*p0.prune_rate == 0.0);

  const auto p1 = s.prune(1.0);
  CHECK(p1.pruned_pairs.size() == 8);
  CHECK(p1.trajectory.size() == 9);
  const auto two = toy_store(1, {2, 8});
  const auto table2 = build_sensitivity_table(two, s.calib);
  const Evaluator ev2(MetricKind::LogitDistance, s.calib, materialize(uniform_config(two, BitWidth(8)), two));
  const auto ref = search_ensemble(two, ev2, table2, s.params, CandidatePool::all(two));
  REQUIRE(ref.trajectory.size() == p1.trajectory.size());
  for (std::size_t k = 0; k < ref.trajectory.size(); ++k) {
    CHECK(ref.trajectory[k].assignment == p1.trajectory[k].assignment);
    CHECK(ref.trajectory[k].footprint_bytes == p1.trajectory[k].footprint_bytes);
    CHECK(*ref.trajectory[k].metric == *p1.trajectory[k].metric);
  }
  CHECK(storage_cost(p1, s.store) == 270336);

  const auto half = s.prune(0.5);
  CHECK(half.pruned_pairs.size() == 4);
  CHECK(ensemble_violation(half, s.store).empty());
  bool pruned_a_used_pair = false;
  for (const auto& p : half.pruned_pairs) {
    const auto idx = s.store.base().module_index(p.module);
    for (const auto& c : s.base.trajectory) pruned_a_used_pair |= c.assignment[idx] == p.bits;
  }
  if (pruned_a_used_pair) CHECK(storage_cost(half, s.store) < storage_cost(s.base, s.store));

  std::size_t prev = storage_cost(p0, s.store);
  for (double rate : {0.25, 0.5, 0.75, 1.0}) {
    const std::size_t cur = storage_cost(s.prune(rate), s.store);
    CHECK(cur <= prev);
    prev = cur;
  }
}
