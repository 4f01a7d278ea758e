#include "flexquant/eqm.hpp"

#include <stdexcept>

namespace flexquant {

std::vector<std::uint8_t> EQMConfig::key() const {
  std::vector<std::uint8_t> out;
  out.reserve(assignment.size());
  for (auto b : assignment) out.push_back(static_cast<std::uint8_t>(b.bits()));
  return out;
}

std::size_t EQMConfig::total_bits() const {
  std::size_t total = 0;
  for (auto b : assignment) total += static_cast<std::size_t>(b.bits());
  return total;
}

std::size_t config_footprint(const std::vector<BitWidth>& assignment, const ModelStore& store) {
  if (assignment.size() != store.module_count()) {
    throw std::invalid_argument("config assigns " + std::to_string(assignment.size()) + " modules, store has " +
                                std::to_string(store.module_count()));
  }
  std::size_t total = 0;
  for (std::size_t i = 0; i < assignment.size(); ++i) total += store.module_footprint(i, assignment[i]);
  return total;
}

EQMConfig make_config(std::vector<BitWidth> assignment, const ModelStore& store) {
  EQMConfig config;
  config.footprint_bytes = config_footprint(assignment, store);
  config.assignment = std::move(assignment);
  return config;
}

EQMConfig uniform_config(const ModelStore& store, BitWidth bits) {
  return make_config(std::vector<BitWidth>(store.module_count(), bits), store);
}

ModelView materialize(const std::vector<BitWidth>& assignment, const ModelStore& store) {
  if (assignment.size() != store.module_count()) throw std::invalid_argument("materialize: assignment size mismatch");
  ModelView view(store.base());
  for (std::size_t i = 0; i < assignment.size(); ++i) view.override_module(i, store.dequantized(i, assignment[i]));
  return view;
}

}  // namespace flexquant
