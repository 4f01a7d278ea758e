#include "flexquant/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <stdexcept>

namespace flexquant {

void SearchParams::validate() const {
  if (stem_count < 1) throw std::invalid_argument("stem_count must be >= 1");
  if (branch_count < 1) throw std::invalid_argument("branch_count must be >= 1");
}

CandidatePool CandidatePool::all(const ModelStore& store) {
  CandidatePool pool;
  pool.precisions_ = store.precisions();
  pool.allowed_.assign(store.module_count(), std::vector<bool>(pool.precisions_.size(), true));
  return pool;
}

bool CandidatePool::allows(std::size_t module_index, BitWidth bits) const {
  const auto it = std::lower_bound(precisions_.begin(), precisions_.end(), bits);
  if (it == precisions_.end() || *it != bits) return false;
  return allowed_.at(module_index)[static_cast<std::size_t>(it - precisions_.begin())];
}

void CandidatePool::remove(std::size_t module_index, BitWidth bits) {
  const auto it = std::lower_bound(precisions_.begin(), precisions_.end(), bits);
  if (it == precisions_.end() || *it != bits) throw std::out_of_range("pool has no such precision");
  if (it == precisions_.begin() || it + 1 == precisions_.end()) {
    throw std::invalid_argument("boundary precisions cannot be removed from the pool");
  }
  allowed_.at(module_index)[static_cast<std::size_t>(it - precisions_.begin())] = false;
}

std::vector<Candidate> candidate_generator(const EQMConfig& last, const ModelStore& store,
                                           const CandidatePool& pool) {
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < last.assignment.size(); ++i) {
    const BitWidth current = last.assignment[i];
    for (auto bits : store.precisions()) {
      if (!(bits < current) || !pool.allows(i, bits)) continue;
      Candidate c{last, i, bits};
      c.config.metric.reset();
      c.config.assignment[i] = bits;
      c.config.footprint_bytes =
          last.footprint_bytes - store.module_footprint(i, current) + store.module_footprint(i, bits);
      out.push_back(std::move(c));
    }
  }
  return out;
}

std::vector<Candidate> candidate_generator(const EQMConfig& last, const ModelStore& store) {
  return candidate_generator(last, store, CandidatePool::all(store));
}

std::vector<Candidate> analysis_filter(std::vector<Candidate> candidates, const SensitivityTable& table,
                                       std::size_t branch_count, const ModelStore& store) {
  const auto& modules = store.base().modules();
  std::vector<double> scores(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    scores[i] = table.score(modules.at(candidates[i].module_index), candidates[i].bits);
  }
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  // Module list order is (layer, kind) lexicographic, so the index is the tie key.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    if (candidates[a].module_index != candidates[b].module_index) {
      return candidates[a].module_index < candidates[b].module_index;
    }
    return candidates[a].bits < candidates[b].bits;
  });
  std::vector<Candidate> out;
  const std::size_t keep = std::min(branch_count, order.size());
  out.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out.push_back(std::move(candidates[order[i]]));
  return out;
}

double trade_off_area(const std::vector<EQMConfig>& trajectory) {
  if (trajectory.size() < 2) return 0.0;
  const double range =
      static_cast<double>(trajectory.front().footprint_bytes) - static_cast<double>(trajectory.back().footprint_bytes);
  if (range <= 0.0) return 0.0;
  double area = 0.0;
  for (std::size_t k = 0; k + 1 < trajectory.size(); ++k) {
    const auto& a = trajectory[k];
    const auto& b = trajectory[k + 1];
    if (!a.metric || !b.metric) throw std::invalid_argument("trade_off_area: config without metric");
    const double width = (static_cast<double>(a.footprint_bytes) - static_cast<double>(b.footprint_bytes)) / range;
    area += width * (*a.metric + *b.metric) / 2.0;
  }
  return area;
}

double mean_metric(const std::vector<EQMConfig>& trajectory) {
  if (trajectory.empty()) throw std::invalid_argument("mean_metric: empty trajectory");
  double sum = 0.0;
  for (const auto& c : trajectory) {
    if (!c.metric) throw std::invalid_argument("mean_metric: config without metric");
    sum += *c.metric;
  }
  return sum / static_cast<double>(trajectory.size());
}

std::string ensemble_violation(const Ensemble& ensemble, const ModelStore& store) {
  const auto& traj = ensemble.trajectory;
  if (traj.empty()) return "empty trajectory";
  const auto& modules = store.base().modules();
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const auto& c = traj[k];
    if (c.assignment.size() != store.module_count()) return "config " + std::to_string(k) + " is not total";
    for (auto b : c.assignment) {
      if (!store.contains(b)) return "config " + std::to_string(k) + " references a precision outside the store";
    }
    if (c.footprint_bytes != config_footprint(c.assignment, store)) {
      return "config " + std::to_string(k) + " has a stale footprint";
    }
    for (const auto& p : ensemble.pruned_pairs) {
      const auto idx = store.base().module_index(p.module);
      if (c.assignment[idx] == p.bits) return "config " + std::to_string(k) + " references pruned pair " + to_string(p.module);
    }
  }
  for (auto b : traj.front().assignment) {
    if (b != store.high()) return "trajectory does not start at the uniform high-precision model";
  }
  for (auto b : traj.back().assignment) {
    if (b != store.low()) return "trajectory does not end at the uniform low-precision model";
  }
  for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
    const auto& a = traj[k];
    const auto& b = traj[k + 1];
    if (!(b.footprint_bytes < a.footprint_bytes)) return "footprint not strictly decreasing at step " + std::to_string(k + 1);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < modules.size(); ++i) {
      if (a.assignment[i] == b.assignment[i]) continue;
      ++changed;
      if (!(b.assignment[i] < a.assignment[i])) {
        return "backward transition of " + to_string(modules[i]) + " at step " + std::to_string(k + 1);
      }
    }
    if (changed != 1) return "step " + std::to_string(k + 1) + " changes " + std::to_string(changed) + " modules";
  }
  return {};
}

Ensemble search_ensemble(const ModelStore& store, const Evaluator& evaluator, const SensitivityTable& table,
                         const SearchParams& params, const CandidatePool& pool, SearchStats* stats) {
  params.validate();
  if (params.metric_kind != evaluator.kind()) throw std::invalid_argument("search: evaluator metric kind mismatch");
  if (table.reference_bits() != store.high()) throw std::invalid_argument("search: sensitivity table reference mismatch");

  SearchStats local;
  std::map<std::vector<std::uint8_t>, double> cache;
  auto evaluate = [&](const EQMConfig& c) {
    auto key = c.key();
    if (const auto it = cache.find(key); it != cache.end()) {
      ++local.cache_hits;
      return it->second;
    }
    ++local.evaluations;
    const double value = evaluator.evaluate(materialize(c, store)).value;
    cache.emplace(std::move(key), value);
    return value;
  };

  EQMConfig root = uniform_config(store, store.high());
  const EQMConfig leaf = uniform_config(store, store.low());
  const double range = static_cast<double>(root.footprint_bytes) - static_cast<double>(leaf.footprint_bytes);
  root.metric = evaluate(root);

  struct Beam {
    std::vector<EQMConfig> path;
    double area = 0.0;
  };
  struct Pooled {
    Candidate cand;
    std::size_t parent;
    double area;
  };

  std::vector<Beam> live{Beam{{root}, 0.0}};
  std::vector<Beam> finished;

  while (!live.empty()) {
    ++local.iterations;
    std::vector<Pooled> pooled;
    std::map<std::vector<std::uint8_t>, std::size_t> index;
    for (std::size_t p = 0; p < live.size(); ++p) {
      const EQMConfig& last = live[p].path.back();
      auto cands = analysis_filter(candidate_generator(last, store, pool), table, params.branch_count, store);
      for (auto& c : cands) {
        c.config.metric = evaluate(c.config);
        const double width =
            (static_cast<double>(last.footprint_bytes) - static_cast<double>(c.config.footprint_bytes)) / range;
        const double area = live[p].area + width * (*last.metric + *c.config.metric) / 2.0;
        auto key = c.config.key();
        if (const auto it = index.find(key); it != index.end()) {
          auto& existing = pooled[it->second];
          if (area < existing.area) {
            existing.parent = p;
            existing.area = area;
          }
          continue;
        }
        index.emplace(std::move(key), pooled.size());
        pooled.push_back({std::move(c), p, area});
      }
    }
    if (pooled.empty()) throw std::logic_error("search: live trajectory has no successor");

    std::vector<std::size_t> order(pooled.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto& ca = pooled[a];
      const auto& cb = pooled[b];
      if (*ca.cand.config.metric != *cb.cand.config.metric) return *ca.cand.config.metric < *cb.cand.config.metric;
      if (ca.area != cb.area) return ca.area < cb.area;
      return ca.cand.config.key() < cb.cand.config.key();
    });

    std::vector<Beam> next;
    const std::size_t keep = std::min(params.stem_count, order.size());
    for (std::size_t r = 0; r < keep; ++r) {
      auto& chosen = pooled[order[r]];
      Beam beam{live[chosen.parent].path, chosen.area};
      const bool done = chosen.cand.config.same_assignment(leaf);
      beam.path.push_back(std::move(chosen.cand.config));
      (done ? finished : next).push_back(std::move(beam));
    }
    live = std::move(next);
  }

  local.completed_trajectories = finished.size();
  if (stats) *stats = local;

  const auto best = std::min_element(finished.begin(), finished.end(),
                                     [](const Beam& a, const Beam& b) { return a.area < b.area; });
  Ensemble ensemble;
  ensemble.precisions = store.precisions();
  ensemble.group_size = store.group_size();
  ensemble.search_params = params;
  ensemble.trajectory = std::move(best->path);
  return ensemble;
}

Ensemble search_ensemble(const ModelStore& store, const CalibrationSet& calib, const SearchParams& params) {
  const auto table = build_sensitivity_table(store, calib);
  const Evaluator evaluator(params.metric_kind, calib, materialize(uniform_config(store, store.high()), store));
  return search_ensemble(store, evaluator, table, params, CandidatePool::all(store));
}

long double design_space_size(std::size_t precision_count, std::size_t module_count) {
  return std::pow(static_cast<long double>(precision_count), static_cast<long double>(module_count));
}

std::size_t per_step_candidate_bound(std::size_t precision_count, std::size_t module_count) {
  if (precision_count == 0) return 0;
  return (precision_count - 1) * module_count;
}

std::string format_sig3(long double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2Le", value);
  return buf;
}

std::string complexity_summary(std::size_t precision_count, std::size_t module_count) {
  return "design space: " + std::to_string(precision_count) + "^" + std::to_string(module_count) + " = " +
         format_sig3(design_space_size(precision_count, module_count)) +
         " configurations; per-step candidates: " + std::to_string(precision_count - 1) + "*" +
         std::to_string(module_count) + " = " + std::to_string(per_step_candidate_bound(precision_count, module_count));
}

}  // namespace flexquant
