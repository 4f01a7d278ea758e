#include "flexquant/serialization.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace flexquant {

namespace {

Json module_json(const ModuleId& id) { return Json{{"layer", id.layer}, {"kind", std::string(to_string(id.kind))}}; }

ModuleId module_from_json(const Json& j) {
  return ModuleId{j.at("layer").get<std::uint32_t>(), parse_module_kind(j.at("kind").get<std::string>())};
}

void put_u16(std::vector<char>& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xffu));
  out.push_back(static_cast<char>(v >> 8));
}

std::uint16_t get_u16(const std::vector<char>& in, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(in.at(at)) |
                                    (static_cast<unsigned>(static_cast<unsigned char>(in.at(at + 1))) << 8));
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string quantized_model_stem(BitWidth bits) { return "qm_" + std::to_string(bits.bits()); }

Json quantized_model_manifest(const QuantizedModel& qm, const std::string& blob_name) {
  Json modules = Json::array();
  std::size_t offset = 0;
  for (const auto& m : qm.modules) {
    const std::size_t scales_offset = offset + m.codes.size();
    const std::size_t zeros_offset = scales_offset + 2 * m.scales.size();
    modules.push_back(Json{{"layer", m.module_id.layer},
                           {"kind", std::string(to_string(m.module_id.kind))},
                           {"param_count", m.param_count},
                           {"group_count", m.group_count()},
                           {"offset", offset},
                           {"codes_bytes", m.codes.size()},
                           {"scales_offset", scales_offset},
                           {"zeros_offset", zeros_offset},
                           {"footprint_bytes", m.footprint_bytes()}});
    offset += m.footprint_bytes();
  }
  return Json{{"precision", qm.bits.bits()},
              {"group_size", qm.group_size},
              {"blob", blob_name},
              {"byte_layout", "per module: codes (little-endian, LSB-first bitstream, groups contiguous), "
                              "fp16 scales, fp16 zeros (u16 little-endian)"},
              {"footprint_bytes", qm.footprint_bytes()},
              {"modules", modules}};
}

void write_quantized_model(const QuantizedModel& qm, const std::filesystem::path& dir) {
  const auto stem = quantized_model_stem(qm.bits);
  std::vector<char> blob;
  blob.reserve(qm.footprint_bytes());
  for (const auto& m : qm.modules) {
    blob.insert(blob.end(), m.codes.begin(), m.codes.end());
    for (auto s : m.scales) put_u16(blob, s);
    for (auto z : m.zeros) put_u16(blob, z);
  }
  std::ofstream out(dir / (stem + ".bin"), std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / (stem + ".bin")).string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  write_json(dir / (stem + ".json"), quantized_model_manifest(qm, stem + ".bin"));
}

QuantizedModel read_quantized_model(const std::filesystem::path& manifest_path) {
  const Json j = read_json(manifest_path);
  const auto blob_path = manifest_path.parent_path() / j.at("blob").get<std::string>();
  std::ifstream in(blob_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read blob " + blob_path.string());
  const std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() != j.at("footprint_bytes").get<std::size_t>()) {
    throw std::runtime_error("blob size does not match manifest footprint: " + blob_path.string());
  }

  QuantizedModel qm{BitWidth(j.at("precision").get<int>()), j.at("group_size").get<std::size_t>(), {}};
  for (const auto& mj : j.at("modules")) {
    QuantizedModule m;
    m.module_id = module_from_json(mj);
    m.kind = m.module_id.kind;
    m.bits = qm.bits;
    m.group_size = qm.group_size;
    m.param_count = mj.at("param_count").get<std::size_t>();
    const auto groups = mj.at("group_count").get<std::size_t>();
    const auto offset = mj.at("offset").get<std::size_t>();
    const auto codes_bytes = mj.at("codes_bytes").get<std::size_t>();
    const auto scales_offset = mj.at("scales_offset").get<std::size_t>();
    const auto zeros_offset = mj.at("zeros_offset").get<std::size_t>();
    if (groups != group_count(m.param_count, qm.group_size) ||
        codes_bytes != (m.param_count * static_cast<std::size_t>(qm.bits.bits()) + 7) / 8 ||
        zeros_offset + 2 * groups > blob.size()) {
      throw std::runtime_error("inconsistent module entry in " + manifest_path.string());
    }
    m.codes.assign(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                   blob.begin() + static_cast<std::ptrdiff_t>(offset + codes_bytes));
    for (std::size_t g = 0; g < groups; ++g) {
      m.scales.push_back(get_u16(blob, scales_offset + 2 * g));
      m.zeros.push_back(get_u16(blob, zeros_offset + 2 * g));
    }
    qm.modules.push_back(std::move(m));
  }
  return qm;
}

Json sensitivity_to_json(const SensitivityTable& table) {
  Json entries = Json::array();
  for (const auto& e : table.ranked()) {
    entries.push_back(Json{{"layer", e.module.layer},
                           {"kind", std::string(to_string(e.module.kind))},
                           {"bits", e.bits.bits()},
                           {"score", e.score}});
  }
  char fp[17];
  std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(table.calibration_fingerprint()));
  return Json{{"reference_bits", table.reference_bits().bits()}, {"calibration_fingerprint", fp}, {"entries", entries}};
}

SensitivityTable sensitivity_from_json(const Json& j) {
  std::vector<SensitivityEntry> entries;
  for (const auto& e : j.at("entries")) {
    entries.push_back({module_from_json(e), BitWidth(e.at("bits").get<int>()), e.at("score").get<double>()});
  }
  const auto fp = std::stoull(j.at("calibration_fingerprint").get<std::string>(), nullptr, 16);
  return SensitivityTable(BitWidth(j.at("reference_bits").get<int>()), fp, std::move(entries));
}

Json ensemble_to_json(const Ensemble& ensemble, const ModelStore& store) {
  const auto& modules = store.base().modules();
  Json precisions = Json::array();
  for (auto b : ensemble.precisions) precisions.push_back(b.bits());
  Json trajectory = Json::array();
  for (const auto& c : ensemble.trajectory) {
    Json assignment = Json::array();
    for (std::size_t i = 0; i < c.assignment.size(); ++i) {
      auto a = module_json(modules.at(i));
      a["bits"] = c.assignment[i].bits();
      assignment.push_back(std::move(a));
    }
    Json entry{{"assignment", assignment}, {"footprint_bytes", c.footprint_bytes}};
    entry["metric"] = c.metric ? Json(*c.metric) : Json(nullptr);
    trajectory.push_back(std::move(entry));
  }
  Json j{{"precisions", precisions},
         {"group_size", ensemble.group_size},
         {"search_params",
          Json{{"stem_count", ensemble.search_params.stem_count}, {"branch_count", ensemble.search_params.branch_count}}},
         {"metric_kind", std::string(to_string(ensemble.search_params.metric_kind))},
         {"trajectory", trajectory}};
  if (ensemble.prune_rate) {
    j["prune_rate"] = *ensemble.prune_rate;
    Json pruned = Json::array();
    for (const auto& p : ensemble.pruned_pairs) {
      auto pj = module_json(p.module);
      pj["bits"] = p.bits.bits();
      pruned.push_back(std::move(pj));
    }
    j["pruned_pairs"] = pruned;
  }
  return j;
}

Ensemble ensemble_from_json(const Json& j, const ModelStore& store) {
  Ensemble e;
  for (const auto& b : j.at("precisions")) e.precisions.emplace_back(b.get<int>());
  if (e.precisions != store.precisions()) throw std::runtime_error("ensemble manifest precisions differ from the store");
  e.group_size = j.at("group_size").get<std::size_t>();
  if (e.group_size != store.group_size()) throw std::runtime_error("ensemble manifest group size differs from the store");
  e.search_params.stem_count = j.at("search_params").at("stem_count").get<std::size_t>();
  e.search_params.branch_count = j.at("search_params").at("branch_count").get<std::size_t>();
  e.search_params.metric_kind = parse_metric_kind(j.at("metric_kind").get<std::string>());
  for (const auto& cj : j.at("trajectory")) {
    std::vector<BitWidth> assignment(store.module_count(), store.high());
    std::vector<bool> seen(store.module_count(), false);
    for (const auto& aj : cj.at("assignment")) {
      const auto idx = store.base().module_index(module_from_json(aj));
      seen[idx] = true;
      assignment[idx] = BitWidth(aj.at("bits").get<int>());
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
      throw std::runtime_error("ensemble manifest: assignment is not total");
    }
    EQMConfig c = make_config(std::move(assignment), store);
    if (c.footprint_bytes != cj.at("footprint_bytes").get<std::size_t>()) {
      throw std::runtime_error("ensemble manifest: footprint does not match the store");
    }
    if (!cj.at("metric").is_null()) c.metric = cj.at("metric").get<double>();
    e.trajectory.push_back(std::move(c));
  }
  if (j.contains("prune_rate")) {
    e.prune_rate = j.at("prune_rate").get<double>();
    for (const auto& pj : j.at("pruned_pairs")) {
      e.pruned_pairs.push_back({module_from_json(pj), BitWidth(pj.at("bits").get<int>())});
    }
  }
  if (const auto err = ensemble_violation(e, store); !err.empty()) {
    throw std::runtime_error("ensemble manifest: " + err);
  }
  return e;
}

Json ranking_to_json(const UsageRanking& ranking) {
  Json out = Json::array();
  for (const auto& e : ranking.entries) {
    Json ej = module_json(e.module);
    ej["bits"] = e.bits.bits();
    ej["usage_count"] = e.usage_count;
    ej["first_use_index"] = e.first_use_index ? Json(*e.first_use_index) : Json(nullptr);
    out.push_back(std::move(ej));
  }
  return out;
}

Json sim_report_to_json(const SimReport& report) {
  Json steps = Json::array();
  for (const auto& s : report.steps) {
    steps.push_back(Json{{"step", s.step},
                         {"budget", s.budget},
                         {"chosen_config_index", s.chosen_config_index ? Json(*s.chosen_config_index) : Json(nullptr)},
                         {"footprint", s.footprint},
                         {"io_bytes", s.io_bytes},
                         {"peak_bytes", s.peak_bytes},
                         {"violation", s.violation}});
  }
  return Json{{"policy", std::string(to_string(report.policy))},
              {"steps", steps},
              {"aggregates",
               Json{{"total_io", report.total_io},
                    {"max_adjacent_gap", report.max_adjacent_gap},
                    {"violations_count", report.violations_count}}}};
}

std::string sim_report_csv(const SimReport& report) {
  std::ostringstream out;
  out << "step,budget,config,footprint,io,peak,violation\n";
  for (const auto& s : report.steps) {
    out << s.step << ',' << s.budget << ','
        << (s.chosen_config_index ? std::to_string(*s.chosen_config_index) : std::string("-1")) << ',' << s.footprint
        << ',' << s.io_bytes << ',' << s.peak_bytes << ',' << (s.violation ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string curve_csv(const Ensemble& ensemble) {
  std::string out = "footprint_bytes,metric\n";
  for (const auto& c : ensemble.trajectory) {
    out += std::to_string(c.footprint_bytes) + "," + (c.metric ? format_double(*c.metric) : std::string()) + "\n";
  }
  return out;
}

Json metric_records(const Ensemble& ensemble) {
  Json out = Json::array();
  for (std::size_t k = 0; k < ensemble.trajectory.size(); ++k) {
    const auto& c = ensemble.trajectory[k];
    if (!c.metric) continue;
    out.push_back(Json{{"metric_kind", std::string(to_string(ensemble.search_params.metric_kind))},
                       {"value", *c.metric},
                       {"config_id", k}});
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return Json::parse(in);
}

}  // namespace flexquant
