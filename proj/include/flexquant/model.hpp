#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flexquant {

using Token = std::uint32_t;

enum class ModuleKind : std::uint8_t { Attn = 0, Mlp = 1 };

std::string_view to_string(ModuleKind kind);
ModuleKind parse_module_kind(std::string_view text);

// One quantizable weight block: all attention projections of a layer, or both
// MLP projections of a layer. Ordering is (layer, kind) lexicographic.
struct ModuleId {
  std::uint32_t layer = 0;
  ModuleKind kind = ModuleKind::Attn;

  auto operator<=>(const ModuleId&) const = default;
};

std::string to_string(const ModuleId& id);

struct ModelConfig {
  std::size_t vocab_size = 256;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_context = 128;
  std::uint64_t seed = 0;
  // Blocks removed from the network entirely (the residual stream passes
  // through). Lets small instances have an odd module count.
  std::vector<ModuleId> disabled_modules;

  // Throws std::invalid_argument on inconsistent dimensions.
  void validate() const;
  bool is_enabled(const ModuleId& id) const;

  bool operator==(const ModelConfig&) const = default;
};

// 33 layers, 66 modules, toy widths. Only used to check design-space
// arithmetic against a 66-module network; never evaluated.
ModelConfig complexity_check_preset();

// key = value lines, '#' comments. Keys: vocab_size, d_model, n_layers,
// n_heads, d_ff, max_context, seed, disabled_modules ("1:MLP,2:ATTN").
ModelConfig parse_model_config(std::string_view text);
ModelConfig load_model_config(const std::filesystem::path& path);
std::string format_model_config(const ModelConfig& config);

// Layer-major, ATTN before MLP, skipping disabled modules.
std::vector<ModuleId> list_modules(const ModelConfig& config);

std::size_t module_param_count(const ModelConfig& config, ModuleKind kind);
std::size_t total_quantizable_params(const ModelConfig& config);

// Flattened parameters of one module.
//   ATTN: Wq | Wk | Wv | Wo, each d_model x d_model row-major
//   MLP:  W_in (d_model x d_ff) | W_out (d_ff x d_model), row-major
struct WeightBlock {
  ModuleKind kind = ModuleKind::Attn;
  std::vector<float> values;

  bool operator==(const WeightBlock&) const = default;
};

class Model {
 public:
  // Seeded build. Every weight is uniform in [-1/sqrt(d_model), +1/sqrt(d_model)],
  // drawn from mt19937_64(seed) as u = (draw >> 11) * 2^-53, w = (2u - 1) * bound,
  // in order: embedding, then each module in list_modules order.
  static Model build(const ModelConfig& config);

  static Model from_weights(const ModelConfig& config, std::vector<float> embedding,
                            std::vector<WeightBlock> blocks);

  const ModelConfig& config() const { return config_; }
  const std::vector<ModuleId>& modules() const { return modules_; }

  // vocab_size x d_model, also used (tied) as the unembedding.
  std::span<const float> embedding() const { return embedding_; }
  // d_model x vocab_size transpose of the embedding.
  std::span<const float> unembedding() const { return unembedding_; }

  std::size_t module_index(const ModuleId& id) const;
  const WeightBlock& block(std::size_t module_index) const { return *blocks_.at(module_index); }
  const WeightBlock& block(const ModuleId& id) const { return block(module_index(id)); }
  std::shared_ptr<const WeightBlock> shared_block(std::size_t module_index) const {
    return blocks_.at(module_index);
  }

 private:
  Model() = default;

  ModelConfig config_;
  std::vector<ModuleId> modules_;
  std::vector<float> embedding_;
  std::vector<float> unembedding_;
  std::vector<std::shared_ptr<const WeightBlock>> blocks_;
};

// The base model with some module blocks replaced. Holds a reference to the
// base model, which must outlive the view.
class ModelView {
 public:
  explicit ModelView(const Model& base);

  ModelView& override_module(std::size_t module_index, std::shared_ptr<const WeightBlock> block);
  ModelView& override_module(const ModuleId& id, std::shared_ptr<const WeightBlock> block);

  const Model& base() const { return *base_; }
  const WeightBlock& block(std::size_t module_index) const;
  bool is_overridden(std::size_t module_index) const { return overrides_.at(module_index) != nullptr; }

 private:
  const Model* base_;
  std::vector<std::shared_ptr<const WeightBlock>> overrides_;
};

// Row-major seq_len x vocab_size.
struct Logits {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  std::span<const float> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

// Causal pre-norm decoder pass in fp32. Pure; safe to call concurrently.
Logits forward(const ModelView& view, std::span<const Token> tokens);

// Flat little-endian weight file:
//   "FQW1", then u32 vocab_size, d_model, n_layers, n_heads, d_ff, module_count,
//   then f32 embedding followed by each module block in list_modules order.
void save_weights(const Model& model, const std::filesystem::path& path);
Model load_weights(const ModelConfig& config, const std::filesystem::path& path);

}  // namespace flexquant
