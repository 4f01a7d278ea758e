#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "flexquant/model.hpp"
#include "flexquant/quantizer.hpp"

namespace flexquant {

// One hybrid model: a bit-width for every module, indexed in list_modules
// order, plus cached footprint and (once evaluated) quality metric.
struct EQMConfig {
  std::vector<BitWidth> assignment;
  std::size_t footprint_bytes = 0;
  std::optional<double> metric;

  // Compares assignments only.
  bool same_assignment(const EQMConfig& other) const { return assignment == other.assignment; }
  std::vector<std::uint8_t> key() const;
  std::size_t total_bits() const;
};

// Sum of the referenced quantized module footprints. Throws std::out_of_range
// when a referenced precision is not in the store.
std::size_t config_footprint(const std::vector<BitWidth>& assignment, const ModelStore& store);

EQMConfig make_config(std::vector<BitWidth> assignment, const ModelStore& store);
EQMConfig uniform_config(const ModelStore& store, BitWidth bits);

// Model view whose every module uses the store's dequantized block at the
// assigned precision. Valid while the store is alive.
ModelView materialize(const std::vector<BitWidth>& assignment, const ModelStore& store);
inline ModelView materialize(const EQMConfig& config, const ModelStore& store) {
  return materialize(config.assignment, store);
}

}  // namespace flexquant
