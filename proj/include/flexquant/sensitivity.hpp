#pragma once

#include <cstdint>
#include <vector>

#include "flexquant/evaluation.hpp"
#include "flexquant/model.hpp"
#include "flexquant/quantizer.hpp"

namespace flexquant {

struct SensitivityEntry {
  ModuleId module;
  BitWidth bits{2};
  double score = 0.0;
};

// Error of replacing exactly one module of QM(n_up) by its lower-bit version,
// measured as logit distance to QM(n_up).
class SensitivityTable {
 public:
  SensitivityTable(BitWidth reference_bits, std::uint64_t calibration_fingerprint,
                   std::vector<SensitivityEntry> entries);

  BitWidth reference_bits() const { return reference_bits_; }
  std::uint64_t calibration_fingerprint() const { return fingerprint_; }

  // Ascending score; ties by (layer, kind, bits).
  const std::vector<SensitivityEntry>& ranked() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Throws std::out_of_range for an unknown pair.
  double score(const ModuleId& module, BitWidth bits) const;
  bool contains(const ModuleId& module, BitWidth bits) const;

 private:
  BitWidth reference_bits_;
  std::uint64_t fingerprint_;
  std::vector<SensitivityEntry> entries_;
  std::vector<std::size_t> by_key_;  // entry indices sorted by (module, bits)
};

// Orders entries by the ranking rule above.
bool sensitivity_rank_less(const SensitivityEntry& a, const SensitivityEntry& b);

SensitivityTable build_sensitivity_table(const ModelStore& store, const CalibrationSet& calib);

}  // namespace flexquant
