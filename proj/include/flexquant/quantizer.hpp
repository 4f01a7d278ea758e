#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "flexquant/model.hpp"

namespace flexquant {

// Integer precision level in [2, 8].
class BitWidth {
 public:
  static constexpr int kMin = 2;
  static constexpr int kMax = 8;

  explicit BitWidth(int bits);

  int bits() const { return bits_; }
  std::uint32_t max_code() const { return (1u << bits_) - 1u; }

  auto operator<=>(const BitWidth&) const = default;

 private:
  int bits_;
};

// IEEE binary16 conversion, round-to-nearest-even.
std::uint16_t float_to_half(float value);
float half_to_float(std::uint16_t bits);

std::size_t group_count(std::size_t param_count, std::size_t group_size);

// ceil(param_count * bits / 8) + 4 bytes per group (fp16 scale + fp16 zero).
std::size_t footprint_bytes(std::size_t param_count, BitWidth bits, std::size_t group_size);

// Affine min-max quantization of one module, per group of group_size
// consecutive parameters. Codes are a single LSB-first bitstream.
struct QuantizedModule {
  ModuleId module_id;
  ModuleKind kind = ModuleKind::Attn;
  BitWidth bits{8};
  std::size_t group_size = 64;
  std::size_t param_count = 0;
  std::vector<std::uint8_t> codes;
  std::vector<std::uint16_t> scales;
  std::vector<std::uint16_t> zeros;

  std::size_t group_count() const { return scales.size(); }
  std::size_t footprint_bytes() const { return codes.size() + 4 * scales.size(); }
  std::uint32_t code(std::size_t i) const;
  float scale(std::size_t group) const { return half_to_float(scales[group]); }
  float zero(std::size_t group) const { return half_to_float(zeros[group]); }

  bool operator==(const QuantizedModule&) const = default;
};

QuantizedModule quantize_module(const ModuleId& id, ModuleKind kind, std::span<const float> weights,
                                BitWidth bits, std::size_t group_size);
QuantizedModule quantize_module(const ModuleId& id, const WeightBlock& block, BitWidth bits,
                                std::size_t group_size);

std::vector<float> dequantize_values(const QuantizedModule& qmod);
WeightBlock dequantize_module(const QuantizedModule& qmod);

// QM(n): every module of the model at the same precision.
struct QuantizedModel {
  BitWidth bits{8};
  std::size_t group_size = 64;
  std::vector<QuantizedModule> modules;  // list_modules order

  std::size_t footprint_bytes() const;
};

QuantizedModel quantize_model(const Model& model, BitWidth bits, std::size_t group_size);

// The base model plus one QM per precision, with dequantized blocks cached so
// hybrid views share storage.
class ModelStore {
 public:
  ModelStore(std::shared_ptr<const Model> base, std::vector<BitWidth> precisions, std::size_t group_size);
  ModelStore(std::shared_ptr<const Model> base, std::vector<QuantizedModel> quantized);

  const Model& base() const { return *base_; }
  std::shared_ptr<const Model> shared_base() const { return base_; }
  std::size_t module_count() const { return base_->modules().size(); }
  std::size_t group_size() const { return group_size_; }

  // Strictly ascending.
  const std::vector<BitWidth>& precisions() const { return precisions_; }
  BitWidth low() const { return precisions_.front(); }
  BitWidth high() const { return precisions_.back(); }
  std::vector<BitWidth> mid_precisions() const;
  std::size_t mid_count() const { return precisions_.size() - 2; }
  bool contains(BitWidth bits) const;

  const QuantizedModel& quantized(BitWidth bits) const;
  const QuantizedModule& module(std::size_t module_index, BitWidth bits) const;
  std::size_t module_footprint(std::size_t module_index, BitWidth bits) const;
  std::shared_ptr<const WeightBlock> dequantized(std::size_t module_index, BitWidth bits) const;

 private:
  void build_cache();
  std::size_t precision_index(BitWidth bits) const;

  std::shared_ptr<const Model> base_;
  std::size_t group_size_ = 64;
  std::vector<BitWidth> precisions_;
  std::vector<QuantizedModel> quantized_;
  // [precision][module]
  std::vector<std::vector<std::shared_ptr<const WeightBlock>>> dequantized_;
};

}  // namespace flexquant
