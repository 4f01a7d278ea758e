#include "flexquant/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

#include "flexquant/eqm.hpp"

namespace flexquant {

namespace {

auto pair_key(const ModuleId& m, BitWidth b) { return std::make_tuple(m.layer, m.kind, b.bits()); }

}  // namespace

bool sensitivity_rank_less(const SensitivityEntry& a, const SensitivityEntry& b) {
  if (a.score != b.score) return a.score < b.score;
  return pair_key(a.module, a.bits) < pair_key(b.module, b.bits);
}

SensitivityTable::SensitivityTable(BitWidth reference_bits, std::uint64_t calibration_fingerprint,
                                   std::vector<SensitivityEntry> entries)
    : reference_bits_(reference_bits), fingerprint_(calibration_fingerprint), entries_(std::move(entries)) {
  for (const auto& e : entries_) {
    if (!std::isfinite(e.score) || e.score < 0.0) throw std::invalid_argument("sensitivity score must be finite and >= 0");
    if (!(e.bits < reference_bits_)) throw std::invalid_argument("sensitivity entry at or above reference precision");
  }
  std::sort(entries_.begin(), entries_.end(), sensitivity_rank_less);
  by_key_.resize(entries_.size());
  for (std::size_t i = 0; i < by_key_.size(); ++i) by_key_[i] = i;
  std::sort(by_key_.begin(), by_key_.end(), [&](std::size_t a, std::size_t b) {
    return pair_key(entries_[a].module, entries_[a].bits) < pair_key(entries_[b].module, entries_[b].bits);
  });
  for (std::size_t i = 1; i < by_key_.size(); ++i) {
    const auto& a = entries_[by_key_[i - 1]];
    const auto& b = entries_[by_key_[i]];
    if (pair_key(a.module, a.bits) == pair_key(b.module, b.bits)) {
      throw std::invalid_argument("duplicate sensitivity entry for " + to_string(a.module));
    }
  }
}

bool SensitivityTable::contains(const ModuleId& module, BitWidth bits) const {
  const auto key = pair_key(module, bits);
  const auto it = std::lower_bound(by_key_.begin(), by_key_.end(), key, [&](std::size_t i, const auto& k) {
    return pair_key(entries_[i].module, entries_[i].bits) < k;
  });
  return it != by_key_.end() && pair_key(entries_[*it].module, entries_[*it].bits) == key;
}

double SensitivityTable::score(const ModuleId& module, BitWidth bits) const {
  const auto key = pair_key(module, bits);
  const auto it = std::lower_bound(by_key_.begin(), by_key_.end(), key, [&](std::size_t i, const auto& k) {
    return pair_key(entries_[i].module, entries_[i].bits) < k;
  });
  if (it == by_key_.end() || pair_key(entries_[*it].module, entries_[*it].bits) != key) {
    throw std::out_of_range("no sensitivity entry for " + to_string(module) + " at " +
                            std::to_string(bits.bits()) + " bits");
  }
  return entries_[*it].score;
}

SensitivityTable build_sensitivity_table(const ModelStore& store, const CalibrationSet& calib) {
  const BitWidth high = store.high();
  const auto top = uniform_config(store, high);
  const ReferenceLogits reference(materialize(top, store), calib);

  std::vector<SensitivityEntry> entries;
  const auto& modules = store.base().modules();
  for (std::size_t i = 0; i < modules.size(); ++i) {
    for (auto bits : store.precisions()) {
      if (!(bits < high)) continue;
      auto assignment = top.assignment;
      assignment[i] = bits;
      const double score = logit_distance(materialize(assignment, store), reference, calib).value;
      entries.push_back({modules[i], bits, score});
    }
  }
  return SensitivityTable(high, calib.fingerprint, std::move(entries));
}

}  // namespace flexquant
