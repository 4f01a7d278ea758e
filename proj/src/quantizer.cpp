#include "flexquant/quantizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace flexquant {

BitWidth::BitWidth(int bits) : bits_(bits) {
  if (bits < kMin || bits > kMax) {
    throw std::invalid_argument("bit-width must be in [2, 8], got " + std::to_string(bits));
  }
}

std::uint16_t float_to_half(float value) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(value);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  const std::uint32_t exp = (x >> 23) & 0xffu;
  std::uint32_t mant = x & 0x7fffffu;

  if (exp == 0xffu) return static_cast<std::uint16_t>(sign | 0x7c00u | (mant ? 0x200u : 0u));
  const int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 0x1f) return static_cast<std::uint16_t>(sign | 0x7c00u);
  if (e <= 0) {
    if (e < -10) return static_cast<std::uint16_t>(sign);
    mant |= 0x800000u;
    const int shift = 14 - e;
    std::uint32_t h = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (h & 1u))) ++h;
    return static_cast<std::uint16_t>(sign | h);
  }
  std::uint32_t h = sign | (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1fffu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;  // carry may bump the exponent, which is correct
  return static_cast<std::uint16_t>(h);
}

float half_to_float(std::uint16_t bits) {
  const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
  const std::uint32_t exp = (bits >> 10) & 0x1fu;
  const std::uint32_t mant = bits & 0x3ffu;
  if (exp == 0) {
    const float mag = std::ldexp(static_cast<float>(mant), -24);
    return sign ? -mag : mag;
  }
  if (exp == 0x1f) return std::bit_cast<float>(sign | 0x7f800000u | (mant << 13));
  return std::bit_cast<float>(sign | ((exp + 112u) << 23) | (mant << 13));
}

std::size_t group_count(std::size_t param_count, std::size_t group_size) {
  return (param_count + group_size - 1) / group_size;
}

std::size_t footprint_bytes(std::size_t param_count, BitWidth bits, std::size_t group_size) {
  if (group_size == 0) throw std::invalid_argument("group_size must be >= 1");
  const std::size_t code_bytes = (param_count * static_cast<std::size_t>(bits.bits()) + 7) / 8;
  return code_bytes + 4 * group_count(param_count, group_size);
}

std::uint32_t QuantizedModule::code(std::size_t i) const {
  const std::size_t b = static_cast<std::size_t>(bits.bits());
  std::size_t bit = i * b;
  std::uint32_t out = 0;
  for (std::size_t k = 0; k < b; ++k, ++bit) {
    out |= static_cast<std::uint32_t>((codes[bit / 8] >> (bit % 8)) & 1u) << k;
  }
  return out;
}

QuantizedModule quantize_module(const ModuleId& id, ModuleKind kind, std::span<const float> weights,
                                BitWidth bits, std::size_t group_size) {
  if (weights.empty()) throw std::invalid_argument("quantize_module: empty weights");
  if (group_size == 0) throw std::invalid_argument("quantize_module: group_size must be >= 1");

  QuantizedModule q;
  q.module_id = id;
  q.kind = kind;
  q.bits = bits;
  q.group_size = group_size;
  q.param_count = weights.size();
  const std::size_t groups = group_count(weights.size(), group_size);
  q.scales.resize(groups);
  q.zeros.resize(groups);
  q.codes.assign((weights.size() * static_cast<std::size_t>(bits.bits()) + 7) / 8, 0);

  const double levels = static_cast<double>(bits.max_code());
  const std::size_t b = static_cast<std::size_t>(bits.bits());
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t begin = g * group_size;
    const std::size_t end = std::min(weights.size(), begin + group_size);
    const auto [lo_it, hi_it] = std::minmax_element(weights.begin() + begin, weights.begin() + end);
    const float lo = *lo_it;
    const float hi = *hi_it;
    if (!std::isfinite(lo) || !std::isfinite(hi)) throw std::domain_error("quantize_module: non-finite weight");

    std::uint16_t zero_h = float_to_half(lo);
    if ((zero_h & 0x7c00u) == 0x7c00u) throw std::domain_error("quantize_module: weight exceeds fp16 range");
    std::uint16_t scale_h = float_to_half(1.0f);
    if (hi > lo) {
      // zero rounded down to fp16
      if (half_to_float(zero_h) > lo) zero_h = (zero_h & 0x8000u) ? zero_h + 1 : (zero_h == 0 ? 0x8001u : zero_h - 1);
      const double zero = half_to_float(zero_h);
      scale_h = float_to_half(static_cast<float>((static_cast<double>(hi) - zero) / levels));
      if ((scale_h & 0x7fffu) == 0) scale_h = 1;  // smallest positive subnormal
      if ((scale_h & 0x7c00u) == 0x7c00u) throw std::domain_error("quantize_module: group range exceeds fp16");
    }
    q.scales[g] = scale_h;
    q.zeros[g] = zero_h;

    // codes against the stored fp16 scale and zero
    const double scale = half_to_float(scale_h);
    const double zero = half_to_float(zero_h);
    for (std::size_t i = begin; i < end; ++i) {
      std::uint32_t c = 0;
      if (hi > lo) {
        const double r = std::round((static_cast<double>(weights[i]) - zero) / scale);  // half away from zero
        c = static_cast<std::uint32_t>(std::clamp(r, 0.0, levels));
      }
      std::size_t bit = i * b;
      for (std::size_t k = 0; k < b; ++k, ++bit) {
        q.codes[bit / 8] |= static_cast<std::uint8_t>(((c >> k) & 1u) << (bit % 8));
      }
    }
  }
  return q;
}

QuantizedModule quantize_module(const ModuleId& id, const WeightBlock& block, BitWidth bits,
                                std::size_t group_size) {
  return quantize_module(id, block.kind, block.values, bits, group_size);
}

std::vector<float> dequantize_values(const QuantizedModule& qmod) {
  std::vector<float> out(qmod.param_count);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t g = i / qmod.group_size;
    out[i] = static_cast<float>(qmod.code(i)) * qmod.scale(g) + qmod.zero(g);
  }
  return out;
}

WeightBlock dequantize_module(const QuantizedModule& qmod) { return {qmod.kind, dequantize_values(qmod)}; }

std::size_t QuantizedModel::footprint_bytes() const {
  std::size_t total = 0;
  for (const auto& m : modules) total += m.footprint_bytes();
  return total;
}

QuantizedModel quantize_model(const Model& model, BitWidth bits, std::size_t group_size) {
  QuantizedModel qm{bits, group_size, {}};
  const auto& modules = model.modules();
  qm.modules.reserve(modules.size());
  for (std::size_t i = 0; i < modules.size(); ++i) {
    qm.modules.push_back(quantize_module(modules[i], model.block(i), bits, group_size));
  }
  return qm;
}

ModelStore::ModelStore(std::shared_ptr<const Model> base, std::vector<BitWidth> precisions,
                       std::size_t group_size)
    : base_(std::move(base)), group_size_(group_size), precisions_(std::move(precisions)) {
  if (!base_) throw std::invalid_argument("ModelStore: null base model");
  if (group_size_ == 0) throw std::invalid_argument("ModelStore: group_size must be >= 1");
  if (precisions_.size() < 2) throw std::invalid_argument("ModelStore: need at least two precisions");
  for (std::size_t i = 1; i < precisions_.size(); ++i) {
    if (!(precisions_[i - 1] < precisions_[i])) {
      throw std::invalid_argument("ModelStore: precisions must be strictly ascending");
    }
  }
  for (auto bits : precisions_) quantized_.push_back(quantize_model(*base_, bits, group_size_));
  build_cache();
}

ModelStore::ModelStore(std::shared_ptr<const Model> base, std::vector<QuantizedModel> quantized)
    : base_(std::move(base)), quantized_(std::move(quantized)) {
  if (!base_) throw std::invalid_argument("ModelStore: null base model");
  if (quantized_.size() < 2) throw std::invalid_argument("ModelStore: need at least two precisions");
  std::sort(quantized_.begin(), quantized_.end(), [](const auto& a, const auto& b) { return a.bits < b.bits; });
  group_size_ = quantized_.front().group_size;
  for (const auto& qm : quantized_) {
    if (!precisions_.empty() && !(precisions_.back() < qm.bits)) {
      throw std::invalid_argument("ModelStore: duplicate precision");
    }
    if (qm.group_size != group_size_) throw std::invalid_argument("ModelStore: mixed group sizes");
    if (qm.modules.size() != base_->modules().size()) throw std::invalid_argument("ModelStore: module count mismatch");
    for (std::size_t i = 0; i < qm.modules.size(); ++i) {
      if (qm.modules[i].module_id != base_->modules()[i] ||
          qm.modules[i].param_count != base_->block(i).values.size()) {
        throw std::invalid_argument("ModelStore: quantized module does not match base model");
      }
    }
    precisions_.push_back(qm.bits);
  }
  build_cache();
}

void ModelStore::build_cache() {
  dequantized_.clear();
  for (const auto& qm : quantized_) {
    std::vector<std::shared_ptr<const WeightBlock>> row;
    row.reserve(qm.modules.size());
    for (const auto& m : qm.modules) row.push_back(std::make_shared<const WeightBlock>(dequantize_module(m)));
    dequantized_.push_back(std::move(row));
  }
}

std::vector<BitWidth> ModelStore::mid_precisions() const {
  return {precisions_.begin() + 1, precisions_.end() - 1};
}

bool ModelStore::contains(BitWidth bits) const {
  return std::binary_search(precisions_.begin(), precisions_.end(), bits);
}

std::size_t ModelStore::precision_index(BitWidth bits) const {
  const auto it = std::lower_bound(precisions_.begin(), precisions_.end(), bits);
  if (it == precisions_.end() || *it != bits) {
    throw std::out_of_range("precision not in store: " + std::to_string(bits.bits()));
  }
  return static_cast<std::size_t>(it - precisions_.begin());
}

const QuantizedModel& ModelStore::quantized(BitWidth bits) const { return quantized_[precision_index(bits)]; }

const QuantizedModule& ModelStore::module(std::size_t module_index, BitWidth bits) const {
  return quantized(bits).modules.at(module_index);
}

std::size_t ModelStore::module_footprint(std::size_t module_index, BitWidth bits) const {
  return module(module_index, bits).footprint_bytes();
}

std::shared_ptr<const WeightBlock> ModelStore::dequantized(std::size_t module_index, BitWidth bits) const {
  return dequantized_[precision_index(bits)].at(module_index);
}

}  // namespace flexquant
