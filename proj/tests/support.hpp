#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "flexquant/eqm.hpp"
#include "flexquant/evaluation.hpp"
#include "flexquant/model.hpp"
#include "flexquant/quantizer.hpp"

namespace flexquant::testing {

// First n sequences of the shipped corpus, chunked at seq_len tokens.
inline CalibrationSet test_calibration(std::size_t seq_len = 32, std::size_t n = 2) {
  return load_calibration(FLEXQUANT_TEST_CALIB, seq_len).truncated(n);
}

inline std::shared_ptr<const Model> toy_model(std::uint64_t seed, ModelConfig cfg = {}) {
  cfg.seed = seed;
  return std::make_shared<const Model>(Model::build(cfg));
}

inline std::vector<BitWidth> bits_of(std::initializer_list<int> list) {
  std::vector<BitWidth> out;
  for (int b : list) out.emplace_back(b);
  return out;
}

inline ModelStore toy_store(std::uint64_t seed, std::initializer_list<int> bits, ModelConfig cfg = {},
                            std::size_t group_size = 64) {
  return ModelStore(toy_model(seed, cfg), bits_of(bits), group_size);
}

// Two layers with the second MLP removed: modules (0,ATTN), (0,MLP), (1,ATTN).
inline ModelConfig three_module_config() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.disabled_modules = {ModuleId{1, ModuleKind::Mlp}};
  return cfg;
}

inline std::vector<float> random_block(std::mt19937_64& rng, std::size_t n, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

}  // namespace flexquant::testing
