#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flexquant/model.hpp"

namespace flexquant {

struct CalibrationSet {
  std::vector<std::vector<Token>> sequences;
  std::uint64_t fingerprint = 0;  // FNV-1a 64 of the source bytes

  std::size_t total_tokens() const;
  std::string fingerprint_hex() const;
  // First n sequences; the fingerprint is kept and tagged with n.
  CalibrationSet truncated(std::size_t n) const;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

// Byte-level tokenization: chunks of max_context tokens, a trailing chunk is
// kept when it has at least two tokens. Throws when no sequence results.
CalibrationSet calibration_from_bytes(std::span<const std::uint8_t> bytes, std::size_t max_context);
CalibrationSet load_calibration(const std::filesystem::path& path, std::size_t max_context);

enum class MetricKind { Perplexity, LogitDistance };

std::string_view to_string(MetricKind kind);
MetricKind parse_metric_kind(std::string_view text);

struct Metric {
  MetricKind kind = MetricKind::LogitDistance;
  double value = 0.0;
};

struct NllSum {
  double total = 0.0;
  std::size_t positions = 0;
};

// Next-token negative log-likelihood over positions 1..len-1.
NllSum next_token_nll(const Logits& logits, std::span<const Token> tokens);

Metric perplexity(const ModelView& view, const CalibrationSet& calib);

// Mean over every token position of the L2 norm of the logit difference.
Metric logit_distance(const ModelView& view, const ModelView& reference, const CalibrationSet& calib);

// Logits of a fixed reference model, computed once and reused across many
// distance evaluations.
class ReferenceLogits {
 public:
  ReferenceLogits(const ModelView& reference, const CalibrationSet& calib);

  const ModelConfig& config() const { return config_; }
  const std::vector<Logits>& logits() const { return logits_; }

 private:
  ModelConfig config_;
  std::vector<Logits> logits_;
};

Metric logit_distance(const ModelView& view, const ReferenceLogits& reference, const CalibrationSet& calib);

// calibrationEval used by the search: logit distance to a fixed reference, or
// calibration perplexity.
class Evaluator {
 public:
  Evaluator(MetricKind kind, const CalibrationSet& calib, const ModelView& reference);

  MetricKind kind() const { return kind_; }
  const CalibrationSet& calibration() const { return *calib_; }
  Metric evaluate(const ModelView& view) const;

 private:
  MetricKind kind_;
  const CalibrationSet* calib_;
  std::optional<ReferenceLogits> reference_;
};

}  // namespace flexquant
