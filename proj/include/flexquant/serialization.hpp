#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "flexquant/evaluation.hpp"
#include "flexquant/pruning.hpp"
#include "flexquant/quantizer.hpp"
#include "flexquant/runtime.hpp"
#include "flexquant/search.hpp"
#include "flexquant/sensitivity.hpp"

namespace flexquant {

using Json = nlohmann::ordered_json;

// Quantized model persistence: <stem>.json manifest next to a <stem>.bin blob.
// Blob layout, per module in list order: packed codes (LSB-first bitstream),
// then group scales, then group zeros, each an fp16 little-endian u16. The
// module's region length equals its footprint.
Json quantized_model_manifest(const QuantizedModel& qm, const std::string& blob_name);
void write_quantized_model(const QuantizedModel& qm, const std::filesystem::path& dir);
QuantizedModel read_quantized_model(const std::filesystem::path& manifest_path);
std::string quantized_model_stem(BitWidth bits);

Json sensitivity_to_json(const SensitivityTable& table);
SensitivityTable sensitivity_from_json(const Json& j);

Json ensemble_to_json(const Ensemble& ensemble, const ModelStore& store);
// Validates the manifest against the store (precisions, footprints, invariants).
Ensemble ensemble_from_json(const Json& j, const ModelStore& store);

Json ranking_to_json(const UsageRanking& ranking);

Json sim_report_to_json(const SimReport& report);
// step,budget,config,footprint,io,peak,violation (config = -1 when unloaded)
std::string sim_report_csv(const SimReport& report);

// footprint_bytes,metric
std::string curve_csv(const Ensemble& ensemble);

// [{metric_kind, value, config_id}] for every trajectory config.
Json metric_records(const Ensemble& ensemble);

std::string format_double(double v);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const Json& j);
Json read_json(const std::filesystem::path& path);

}  // namespace flexquant
