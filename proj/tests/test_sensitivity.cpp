#include <doctest.h>

#include <cmath>

#include "flexquant/eqm.hpp"
#include "flexquant/sensitivity.hpp"
#include "flexquant/serialization.hpp"
#include "support.hpp"

using namespace flexquant;
using namespace flexquant::testing;

TEST_CASE("table size is module count times lower precisions") {
  const auto calib = test_calibration();
  CHECK(build_sensitivity_table(toy_store(0, {2, 8}), calib).size() == 8);
  CHECK(build_sensitivity_table(toy_store(0, {2, 4, 8}), calib).size() == 16);
  const auto t = build_sensitivity_table(toy_store(0, {2, 8}, three_module_config()), calib);
  CHECK(t.size() == 3);
  CHECK(t.reference_bits() == BitWidth(8));
  CHECK(t.calibration_fingerprint() == calib.fingerprint);
}

TEST_CASE("scores match a direct single-replacement evaluation") {
  const auto calib = test_calibration();
  const auto store = toy_store(3, {2, 4, 8});
  const auto table = build_sensitivity_table(store, calib);
  const auto top = uniform_config(store, BitWidth(8));
  for (std::size_t i = 0; i < store.module_count(); ++i) {
    for (int b : {2, 4}) {
      ModelView view = materialize(top, store);
      view.override_module(i, store.dequantized(i, BitWidth(b)));
      const double want = logit_distance(view, materialize(top, store), calib).value;
      CHECK(table.score(store.base().modules()[i], BitWidth(b)) == doctest::Approx(want).epsilon(1e-12));
    }
  }
  CHECK_FALSE(table.contains(ModuleId{0, ModuleKind::Attn}, BitWidth(8)));
  CHECK_THROWS_AS(table.score(ModuleId{0, ModuleKind::Attn}, BitWidth(3)), std::out_of_range);
}

TEST_CASE("a losslessly quantized module scores zero") {
  const auto base = toy_model(0);
  std::vector<float> emb(base->embedding().begin(), base->embedding().end());
  std::vector<WeightBlock> blocks;
  for (std::size_t i = 0; i < base->modules().size(); ++i) blocks.push_back(base->block(i));
  std::fill(blocks[2].values.begin(), blocks[2].values.end(), 0.25f);
  auto model = std::make_shared<const Model>(Model::from_weights(base->config(), emb, blocks));
  const ModelStore store(model, bits_of({2, 8}), 64);
  const auto table = build_sensitivity_table(store, test_calibration());
  CHECK(table.score(ModuleId{1, ModuleKind::Attn}, BitWidth(2)) == 0.0);
  CHECK(table.ranked().front().module == ModuleId{1, ModuleKind::Attn});
}

TEST_CASE("ranking order and tie-break") {
  const std::vector<SensitivityEntry> entries = {
      {{1, ModuleKind::Mlp}, BitWidth(2), 0.5},
      {{0, ModuleKind::Mlp}, BitWidth(2), 0.1},
      {{1, ModuleKind::Attn}, BitWidth(4), 0.5},
      {{1, ModuleKind::Attn}, BitWidth(2), 0.5},
      {{0, ModuleKind::Attn}, BitWidth(2), 0.9},
  };
  const SensitivityTable t(BitWidth(8), 0, entries);
  const auto& r = t.ranked();
  REQUIRE(r.size() == 5);
  CHECK(r[0].module == ModuleId{0, ModuleKind::Mlp});
  CHECK((r[1].module == ModuleId{1, ModuleKind::Attn} && r[1].bits == BitWidth(2)));
  CHECK((r[2].module == ModuleId{1, ModuleKind::Attn} && r[2].bits == BitWidth(4)));
  CHECK(r[3].module == ModuleId{1, ModuleKind::Mlp});
  CHECK(r[4].module == ModuleId{0, ModuleKind::Attn});

  auto dup = entries;
  dup.push_back(entries[0]);
  CHECK_THROWS_AS(SensitivityTable(BitWidth(8), 0, dup), std::invalid_argument);
  CHECK_THROWS_AS(SensitivityTable(BitWidth(8), 0, {{{0, ModuleKind::Attn}, BitWidth(8), 0.1}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(SensitivityTable(BitWidth(8), 0, {{{0, ModuleKind::Attn}, BitWidth(2), -1.0}}),
                  std::invalid_argument);
}

TEST_CASE("lower bits are at least as sensitive on >= 90% of modules") {
  const auto calib = test_calibration();
  int ok = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto store = toy_store(seed, {2, 4, 8});
    const auto t = build_sensitivity_table(store, calib);
    for (const auto& m : store.base().modules()) {
      ++total;
      ok += t.score(m, BitWidth(2)) >= t.score(m, BitWidth(4));
    }
  }
  CHECK(ok >= 0.9 * total);
}

TEST_CASE("rebuild is identical and JSON round-trips") {
  const auto calib = test_calibration();
  const auto store = toy_store(1, {2, 4, 8});
  const auto a = build_sensitivity_table(store, calib);
  const auto b = build_sensitivity_table(store, calib);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.ranked()[i].module == b.ranked()[i].module);
    CHECK(a.ranked()[i].bits == b.ranked()[i].bits);
    CHECK(a.ranked()[i].score == b.ranked()[i].score);
  }
  const auto j = sensitivity_to_json(a);
  const auto c = sensitivity_from_json(Json::parse(j.dump()));
  CHECK(c.calibration_fingerprint() == a.calibration_fingerprint());
  CHECK(c.reference_bits() == a.reference_bits());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(c.ranked()[i].score == a.ranked()[i].score);
}
