#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "flexquant/evaluation.hpp"
#include "flexquant/search.hpp"

namespace flexquant {

struct UsageEntry {
  ModuleId module;
  BitWidth bits{2};
  std::size_t usage_count = 0;
  // Smallest trajectory index using the pair; larger index = smaller footprint.
  std::optional<std::size_t> first_use_index;
};

// Intermediate-precision module versions, most useful first: descending
// usage count, then descending first_use_index, then (layer, kind, bits).
struct UsageRanking {
  std::vector<UsageEntry> entries;
};

class PruneRate {
 public:
  explicit PruneRate(double rate);
  double value() const { return rate_; }
  // ceil(rate * total), clamped to total.
  std::size_t prune_count(std::size_t total) const;

 private:
  double rate_;
};

// Throws std::invalid_argument if the store has no intermediate precision.
UsageRanking rank_mid_modules(const Ensemble& ensemble, const ModelStore& store);

// The bottom prune_count entries of the ranking.
std::vector<ModulePair> pruned_pairs(const UsageRanking& ranking, PruneRate rate);
CandidatePool pruned_pool(const ModelStore& store, const std::vector<ModulePair>& pruned);

// Re-runs the search without the pruned module versions. The result carries
// prune_rate and pruned_pairs provenance.
Ensemble prune_and_search(const ModelStore& store, const Evaluator& evaluator, const SensitivityTable& table,
                          const UsageRanking& ranking, PruneRate rate, const SearchParams& params);
Ensemble prune_and_search(const ModelStore& store, const UsageRanking& ranking, PruneRate rate,
                          const CalibrationSet& calib, const SearchParams& params);

// Bytes of every distinct (module, precision) version referenced anywhere in
// the trajectory.
std::size_t storage_cost(const Ensemble& ensemble, const ModelStore& store);

}  // namespace flexquant
