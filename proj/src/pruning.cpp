#include "flexquant/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <utility>

namespace flexquant {

PruneRate::PruneRate(double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("prune rate must be in [0, 1]");
}

std::size_t PruneRate::prune_count(std::size_t total) const {
  const double raw = std::ceil(rate_ * static_cast<double>(total) - 1e-9);
  return std::min(total, static_cast<std::size_t>(std::max(0.0, raw)));
}

UsageRanking rank_mid_modules(const Ensemble& ensemble, const ModelStore& store) {
  const auto mids = store.mid_precisions();
  if (mids.empty()) throw std::invalid_argument("rank_mid_modules: store has no intermediate precision");
  const auto& modules = store.base().modules();

  UsageRanking ranking;
  for (std::size_t i = 0; i < modules.size(); ++i) {
    for (auto bits : mids) {
      UsageEntry e{modules[i], bits, 0, std::nullopt};
      for (std::size_t k = 0; k < ensemble.trajectory.size(); ++k) {
        if (ensemble.trajectory[k].assignment.at(i) != bits) continue;
        ++e.usage_count;
        if (!e.first_use_index) e.first_use_index = k;
      }
      ranking.entries.push_back(e);
    }
  }
  std::stable_sort(ranking.entries.begin(), ranking.entries.end(), [](const UsageEntry& a, const UsageEntry& b) {
    if (a.usage_count != b.usage_count) return a.usage_count > b.usage_count;
    // Unused first_use_index compares as -1.
    const long fa = a.first_use_index ? static_cast<long>(*a.first_use_index) : -1;
    const long fb = b.first_use_index ? static_cast<long>(*b.first_use_index) : -1;
    if (fa != fb) return fa > fb;
    if (a.module != b.module) return a.module < b.module;
    return a.bits < b.bits;
  });
  return ranking;
}

std::vector<ModulePair> pruned_pairs(const UsageRanking& ranking, PruneRate rate) {
  const std::size_t n = rate.prune_count(ranking.entries.size());
  std::vector<ModulePair> out;
  for (std::size_t i = ranking.entries.size() - n; i < ranking.entries.size(); ++i) {
    out.push_back({ranking.entries[i].module, ranking.entries[i].bits});
  }
  std::sort(out.begin(), out.end());
  return out;
}

CandidatePool pruned_pool(const ModelStore& store, const std::vector<ModulePair>& pruned) {
  auto pool = CandidatePool::all(store);
  for (const auto& p : pruned) pool.remove(store.base().module_index(p.module), p.bits);
  return pool;
}

Ensemble prune_and_search(const ModelStore& store, const Evaluator& evaluator, const SensitivityTable& table,
                          const UsageRanking& ranking, PruneRate rate, const SearchParams& params) {
  auto pruned = pruned_pairs(ranking, rate);
  auto ensemble = search_ensemble(store, evaluator, table, params, pruned_pool(store, pruned));
  ensemble.prune_rate = rate.value();
  ensemble.pruned_pairs = std::move(pruned);
  return ensemble;
}

Ensemble prune_and_search(const ModelStore& store, const UsageRanking& ranking, PruneRate rate,
                          const CalibrationSet& calib, const SearchParams& params) {
  const auto table = build_sensitivity_table(store, calib);
  const Evaluator evaluator(params.metric_kind, calib, materialize(uniform_config(store, store.high()), store));
  return prune_and_search(store, evaluator, table, ranking, rate, params);
}

std::size_t storage_cost(const Ensemble& ensemble, const ModelStore& store) {
  std::set<std::pair<std::size_t, int>> used;
  for (const auto& c : ensemble.trajectory) {
    for (std::size_t i = 0; i < c.assignment.size(); ++i) used.emplace(i, c.assignment[i].bits());
  }
  std::size_t total = 0;
  for (const auto& [module, bits] : used) total += store.module_footprint(module, BitWidth(bits));
  return total;
}

}  // namespace flexquant
