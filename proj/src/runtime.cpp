#include "flexquant/runtime.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace flexquant {

namespace {

std::size_t parse_field(std::string_view field, std::size_t line) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) field.remove_suffix(1);
  std::size_t out = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, out);
  if (field.empty() || ec != std::errc{} || ptr != end) {
    throw std::invalid_argument("trace line " + std::to_string(line) + ": bad integer '" + std::string(field) + "'");
  }
  return out;
}

struct Swap {
  std::size_t incoming;
  std::size_t outgoing;
  std::size_t module;
};

TransitionCost run_swaps(std::size_t start_footprint, std::vector<Swap> swaps) {
  std::stable_sort(swaps.begin(), swaps.end(), [](const Swap& a, const Swap& b) {
    if (a.incoming != b.incoming) return a.incoming > b.incoming;
    return a.module < b.module;
  });
  TransitionCost cost{0, start_footprint};
  std::size_t running = start_footprint;
  for (const auto& s : swaps) {
    cost.io_bytes += s.incoming;
    cost.peak_bytes = std::max(cost.peak_bytes, running + s.incoming);
    running = running + s.incoming - s.outgoing;
  }
  return cost;
}

}  // namespace

MemoryTrace parse_trace_csv(std::string_view text) {
  MemoryTrace trace;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "step,available_bytes") throw std::invalid_argument("trace: expected header 'step,available_bytes'");
      header_seen = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string_view::npos) throw std::invalid_argument("trace line " + std::to_string(line_no) + ": expected two fields");
    trace.steps.push_back({parse_field(line.substr(0, comma), line_no), parse_field(line.substr(comma + 1), line_no)});
  }
  if (trace.steps.empty()) throw std::invalid_argument("trace: no steps");
  return trace;
}

MemoryTrace load_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read trace file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_trace_csv(ss.str());
}

MemoryTrace random_walk_trace(std::size_t steps, std::size_t lo, std::size_t hi, std::size_t max_delta,
                              std::uint64_t seed) {
  if (lo > hi) throw std::invalid_argument("random_walk_trace: lo > hi");
  std::mt19937_64 rng(seed);
  MemoryTrace trace;
  long long budget = static_cast<long long>(hi);
  const long long span = 2 * static_cast<long long>(max_delta) + 1;
  for (std::size_t s = 0; s < steps; ++s) {
    trace.steps.push_back({s, static_cast<std::size_t>(budget)});
    const long long delta = static_cast<long long>(rng() % static_cast<unsigned long long>(span)) -
                            static_cast<long long>(max_delta);
    budget = std::clamp(budget + delta, static_cast<long long>(lo), static_cast<long long>(hi));
  }
  return trace;
}

std::optional<std::size_t> select_config(std::span<const EQMConfig> ladder, std::size_t budget) {
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    if (ladder[i].footprint_bytes <= budget) return i;
  }
  return std::nullopt;
}

TransitionCost transition_cost(const EQMConfig& from, const EQMConfig& to, const ModelStore& store) {
  if (from.assignment.size() != store.module_count() || to.assignment.size() != store.module_count()) {
    throw std::invalid_argument("transition_cost: config does not match store");
  }
  std::vector<Swap> swaps;
  for (std::size_t i = 0; i < to.assignment.size(); ++i) {
    if (from.assignment[i] == to.assignment[i]) continue;
    swaps.push_back({store.module_footprint(i, to.assignment[i]), store.module_footprint(i, from.assignment[i]), i});
  }
  return run_swaps(config_footprint(from.assignment, store), std::move(swaps));
}

TransitionCost load_cost(const EQMConfig& to, const ModelStore& store) {
  std::vector<Swap> swaps;
  for (std::size_t i = 0; i < to.assignment.size(); ++i) {
    swaps.push_back({store.module_footprint(i, to.assignment[i]), 0, i});
  }
  return run_swaps(0, std::move(swaps));
}

std::string_view to_string(SwapPolicy policy) {
  return policy == SwapPolicy::ModuleDelta ? "module_delta" : "full_model";
}

SimReport simulate(std::span<const EQMConfig> ladder, const MemoryTrace& trace, const ModelStore& store,
                   SwapPolicy policy) {
  SimReport report;
  report.policy = policy;
  report.max_adjacent_gap = granularity(ladder);
  std::optional<std::size_t> current;
  for (const auto& ts : trace.steps) {
    StepRecord rec;
    rec.step = ts.step;
    rec.budget = ts.available_bytes;
    rec.chosen_config_index = select_config(ladder, ts.available_bytes);
    if (!rec.chosen_config_index) {
      rec.violation = true;
      current.reset();
    } else {
      const EQMConfig& target = ladder[*rec.chosen_config_index];
      rec.footprint = target.footprint_bytes;
      TransitionCost cost;
      if (!current) {
        cost = load_cost(target, store);
      } else if (*current == *rec.chosen_config_index) {
        cost = {0, target.footprint_bytes};
      } else if (policy == SwapPolicy::ModuleDelta) {
        cost = transition_cost(ladder[*current], target, store);
      } else {
        const std::size_t from_fp = ladder[*current].footprint_bytes;
        cost = {target.footprint_bytes, from_fp + target.footprint_bytes};
      }
      rec.io_bytes = cost.io_bytes;
      rec.peak_bytes = cost.peak_bytes;
      rec.violation = rec.peak_bytes > rec.budget;
      current = rec.chosen_config_index;
    }
    report.total_io += rec.io_bytes;
    if (rec.violation) ++report.violations_count;
    report.steps.push_back(rec);
  }
  return report;
}

std::size_t granularity(std::span<const EQMConfig> ladder) {
  std::size_t gap = 0;
  for (std::size_t i = 0; i + 1 < ladder.size(); ++i) {
    const auto a = ladder[i].footprint_bytes;
    const auto b = ladder[i + 1].footprint_bytes;
    gap = std::max(gap, a > b ? a - b : b - a);
  }
  return gap;
}

std::vector<EQMConfig> uniform_baseline(const ModelStore& store) {
  std::vector<EQMConfig> out;
  const auto& p = store.precisions();
  for (auto it = p.rbegin(); it != p.rend(); ++it) out.push_back(uniform_config(store, *it));
  return out;
}

}  // namespace flexquant
