#include "flexquant/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "flexquant/parallel.hpp"

namespace flexquant {

namespace {

void check_same_config(const ModelConfig& a, const ModelConfig& b) {
  if (!(a == b)) throw std::invalid_argument("logit_distance: views have different model configs");
}

double per_sequence_distance(const Logits& a, const Logits& b) {
  double sum = 0.0;
  for (std::size_t t = 0; t < a.rows; ++t) {
    const auto ra = a.row(t);
    const auto rb = b.row(t);
    double sq = 0.0;
    for (std::size_t v = 0; v < a.cols; ++v) {
      const double diff = static_cast<double>(ra[v]) - static_cast<double>(rb[v]);
      sq += diff * diff;
    }
    sum += std::sqrt(sq);
  }
  return sum;
}

}  // namespace

std::size_t CalibrationSet::total_tokens() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.size();
  return n;
}

std::string CalibrationSet::fingerprint_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fingerprint));
  return buf;
}

CalibrationSet CalibrationSet::truncated(std::size_t n) const {
  if (n == 0 || n >= sequences.size()) return *this;
  CalibrationSet out;
  out.sequences.assign(sequences.begin(), sequences.begin() + static_cast<std::ptrdiff_t>(n));
  out.fingerprint = fingerprint ^ (0x9e3779b97f4a7c15ull * (n + 1));
  return out;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

CalibrationSet calibration_from_bytes(std::span<const std::uint8_t> bytes, std::size_t max_context) {
  if (max_context < 2) throw std::invalid_argument("calibration: max_context must be >= 2");
  if (bytes.empty()) throw std::invalid_argument("calibration: empty input");
  CalibrationSet calib;
  calib.fingerprint = fnv1a64(bytes);
  for (std::size_t begin = 0; begin < bytes.size(); begin += max_context) {
    const std::size_t end = std::min(bytes.size(), begin + max_context);
    if (end - begin < 2) break;
    calib.sequences.emplace_back(bytes.begin() + static_cast<std::ptrdiff_t>(begin),
                                 bytes.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (calib.sequences.empty()) throw std::invalid_argument("calibration: input has no sequence of length >= 2");
  return calib;
}

CalibrationSet load_calibration(const std::filesystem::path& path, std::size_t max_context) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read calibration file: " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return calibration_from_bytes(bytes, max_context);
}

std::string_view to_string(MetricKind kind) {
  return kind == MetricKind::Perplexity ? "PERPLEXITY" : "LOGIT_DISTANCE";
}

MetricKind parse_metric_kind(std::string_view text) {
  if (text == "PERPLEXITY" || text == "ppl" || text == "perplexity") return MetricKind::Perplexity;
  if (text == "LOGIT_DISTANCE" || text == "logit" || text == "logit-distance") return MetricKind::LogitDistance;
  throw std::invalid_argument("unknown metric kind: " + std::string(text));
}

NllSum next_token_nll(const Logits& logits, std::span<const Token> tokens) {
  if (logits.rows != tokens.size()) throw std::invalid_argument("next_token_nll: logits/token length mismatch");
  NllSum out;
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    const auto row = logits.row(t);
    const double max_logit = *std::max_element(row.begin(), row.end());
    double denom = 0.0;
    for (float v : row) denom += std::exp(static_cast<double>(v) - max_logit);
    const double log_z = max_logit + std::log(denom);
    out.total += log_z - static_cast<double>(row[tokens[t + 1]]);
    ++out.positions;
  }
  return out;
}

Metric perplexity(const ModelView& view, const CalibrationSet& calib) {
  std::vector<NllSum> parts(calib.sequences.size());
  parallel_for(parts.size(), [&](std::size_t i) {
    parts[i] = next_token_nll(forward(view, calib.sequences[i]), calib.sequences[i]);
  });
  NllSum total;
  for (const auto& p : parts) {
    total.total += p.total;
    total.positions += p.positions;
  }
  if (total.positions == 0) throw std::invalid_argument("perplexity: calibration set has no next-token positions");
  return {MetricKind::Perplexity, std::exp(total.total / static_cast<double>(total.positions))};
}

Metric logit_distance(const ModelView& view, const ModelView& reference, const CalibrationSet& calib) {
  check_same_config(view.base().config(), reference.base().config());
  std::vector<double> parts(calib.sequences.size());
  parallel_for(parts.size(), [&](std::size_t i) {
    parts[i] = per_sequence_distance(forward(view, calib.sequences[i]), forward(reference, calib.sequences[i]));
  });
  double sum = 0.0;
  for (double p : parts) sum += p;
  return {MetricKind::LogitDistance, sum / static_cast<double>(calib.total_tokens())};
}

ReferenceLogits::ReferenceLogits(const ModelView& reference, const CalibrationSet& calib)
    : config_(reference.base().config()), logits_(calib.sequences.size()) {
  parallel_for(logits_.size(), [&](std::size_t i) { logits_[i] = forward(reference, calib.sequences[i]); });
}

Metric logit_distance(const ModelView& view, const ReferenceLogits& reference, const CalibrationSet& calib) {
  check_same_config(view.base().config(), reference.config());
  if (reference.logits().size() != calib.sequences.size()) {
    throw std::invalid_argument("logit_distance: reference computed on a different calibration set");
  }
  std::vector<double> parts(calib.sequences.size());
  parallel_for(parts.size(), [&](std::size_t i) {
    parts[i] = per_sequence_distance(forward(view, calib.sequences[i]), reference.logits()[i]);
  });
  double sum = 0.0;
  for (double p : parts) sum += p;
  return {MetricKind::LogitDistance, sum / static_cast<double>(calib.total_tokens())};
}

Evaluator::Evaluator(MetricKind kind, const CalibrationSet& calib, const ModelView& reference)
    : kind_(kind), calib_(&calib) {
  if (kind_ == MetricKind::LogitDistance) reference_.emplace(reference, calib);
}

Metric Evaluator::evaluate(const ModelView& view) const {
  if (kind_ == MetricKind::Perplexity) return perplexity(view, *calib_);
  return logit_distance(view, *reference_, *calib_);
}

}  // namespace flexquant
