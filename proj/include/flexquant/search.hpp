#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "flexquant/eqm.hpp"
#include "flexquant/evaluation.hpp"
#include "flexquant/quantizer.hpp"
#include "flexquant/sensitivity.hpp"

namespace flexquant {

struct SearchParams {
  std::size_t stem_count = 2;
  std::size_t branch_count = 3;
  MetricKind metric_kind = MetricKind::LogitDistance;

  void validate() const;
};

// A (module, precision) version of a module's parameters.
struct ModulePair {
  ModuleId module;
  BitWidth bits{2};

  auto operator<=>(const ModulePair&) const = default;
};

// Which downgrade targets the search may use. The lowest precision is always
// available; intermediate ones can be removed by pruning.
class CandidatePool {
 public:
  static CandidatePool all(const ModelStore& store);

  bool allows(std::size_t module_index, BitWidth bits) const;
  void remove(std::size_t module_index, BitWidth bits);

 private:
  std::vector<BitWidth> precisions_;
  std::vector<std::vector<bool>> allowed_;  // [module][precision index]
};

// A successor of some parent config: the parent with one module downgraded.
struct Candidate {
  EQMConfig config;
  std::size_t module_index = 0;
  BitWidth bits{2};
};

// One candidate per (module, lower precision) allowed by the pool, modules in
// list order, precisions ascending. Empty for QM(n_low).
std::vector<Candidate> candidate_generator(const EQMConfig& last, const ModelStore& store,
                                           const CandidatePool& pool);
std::vector<Candidate> candidate_generator(const EQMConfig& last, const ModelStore& store);

// Keeps the branch_count candidates whose applied downgrade has the lowest
// sensitivity score; ties by (layer, kind, bits).
std::vector<Candidate> analysis_filter(std::vector<Candidate> candidates, const SensitivityTable& table,
                                       std::size_t branch_count, const ModelStore& store);

struct Ensemble {
  std::vector<BitWidth> precisions;
  std::size_t group_size = 64;
  SearchParams search_params;
  std::vector<EQMConfig> trajectory;
  std::optional<double> prune_rate;
  std::vector<ModulePair> pruned_pairs;
};

// Area under the metric-vs-footprint curve, footprint normalized so the
// trajectory spans [0, 1]. Requires every config to carry a metric.
double trade_off_area(const std::vector<EQMConfig>& trajectory);
double mean_metric(const std::vector<EQMConfig>& trajectory);

// Empty when the ensemble satisfies every trajectory invariant over the
// store; otherwise a description of the first violation.
std::string ensemble_violation(const Ensemble& ensemble, const ModelStore& store);

struct SearchStats {
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  std::size_t cache_hits = 0;
  std::size_t completed_trajectories = 0;
};

// Filtered beam search over one-way downgrades from QM(n_up) to QM(n_low).
// stem_count trajectories stay live; each iteration pools the filtered
// successors of every live trajectory's last config, merges identical
// assignments (keeping the parent with the smallest area so far), ranks the
// pool by metric and extends the best stem_count. The completed trajectory
// with minimal trade_off_area is returned.
Ensemble search_ensemble(const ModelStore& store, const Evaluator& evaluator, const SensitivityTable& table,
                         const SearchParams& params, const CandidatePool& pool, SearchStats* stats = nullptr);
Ensemble search_ensemble(const ModelStore& store, const CalibrationSet& calib, const SearchParams& params);

// Full design space (precision_count ^ module_count) and the per-step
// one-way candidate bound ((precision_count - 1) * module_count).
long double design_space_size(std::size_t precision_count, std::size_t module_count);
std::size_t per_step_candidate_bound(std::size_t precision_count, std::size_t module_count);
// Three significant figures, e.g. "7.38e+19".
std::string format_sig3(long double value);
std::string complexity_summary(std::size_t precision_count, std::size_t module_count);

}  // namespace flexquant
