#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "flexquant/eqm.hpp"
#include "flexquant/quantizer.hpp"
#include "flexquant/search.hpp"

namespace flexquant {

struct TraceStep {
  std::size_t step = 0;
  std::size_t available_bytes = 0;
};

struct MemoryTrace {
  std::vector<TraceStep> steps;
};

// CSV with header "step,available_bytes".
MemoryTrace parse_trace_csv(std::string_view text);
MemoryTrace load_trace_csv(const std::filesystem::path& path);

// Random walk between lo and hi bytes; each step moves by a uniform amount in
// [-max_delta, +max_delta], clamped. Deterministic in seed.
MemoryTrace random_walk_trace(std::size_t steps, std::size_t lo, std::size_t hi, std::size_t max_delta,
                              std::uint64_t seed);

// Largest-footprint config that fits, assuming footprints strictly decrease
// along the ladder.
std::optional<std::size_t> select_config(std::span<const EQMConfig> ladder, std::size_t budget);

struct TransitionCost {
  std::size_t io_bytes = 0;
  std::size_t peak_bytes = 0;
};

// Module swaps run one at a time, largest incoming version first; each
// incoming version is loaded before the outgoing one is freed.
TransitionCost transition_cost(const EQMConfig& from, const EQMConfig& to, const ModelStore& store);
// Load from nothing resident.
TransitionCost load_cost(const EQMConfig& to, const ModelStore& store);

enum class SwapPolicy {
  ModuleDelta,  // swap only the modules whose precision changes
  FullModel,    // load the whole target model next to the current one
};

std::string_view to_string(SwapPolicy policy);

struct StepRecord {
  std::size_t step = 0;
  std::size_t budget = 0;
  std::optional<std::size_t> chosen_config_index;
  std::size_t footprint = 0;
  std::size_t io_bytes = 0;
  std::size_t peak_bytes = 0;
  bool violation = false;
};

struct SimReport {
  SwapPolicy policy = SwapPolicy::ModuleDelta;
  std::vector<StepRecord> steps;
  std::size_t total_io = 0;
  std::size_t max_adjacent_gap = 0;
  std::size_t violations_count = 0;
};

// Starts unloaded. Each step picks select_config(budget) and transitions to it
// (up or down the ladder). A step is a violation when nothing fits (the model
// is evicted) or the transition peak exceeds the budget.
SimReport simulate(std::span<const EQMConfig> ladder, const MemoryTrace& trace, const ModelStore& store,
                   SwapPolicy policy = SwapPolicy::ModuleDelta);
inline SimReport simulate(const Ensemble& ensemble, const MemoryTrace& trace, const ModelStore& store) {
  return simulate(ensemble.trajectory, trace, store, SwapPolicy::ModuleDelta);
}

// Largest footprint gap between adjacent ladder entries; 0 for one entry.
std::size_t granularity(std::span<const EQMConfig> ladder);
inline std::size_t granularity(const Ensemble& ensemble) { return granularity(ensemble.trajectory); }

// One uniform config per stored precision, highest first.
std::vector<EQMConfig> uniform_baseline(const ModelStore& store);

}  // namespace flexquant
