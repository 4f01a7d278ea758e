// flexquant: elastic mixed-precision ensemble pipeline driver.
//
//   flexquant quantize    build QM(n) for every precision, write manifests + blobs
//   flexquant sensitivity single-module replacement table
//   flexquant search      EQM ensemble manifest + curve CSV
//   flexquant prune       usage ranking + re-searched ensembles per prune rate
//   flexquant simulate    elastic hosting under a memory trace
//   flexquant report      merge per-rate curves into one CSV
//   flexquant all         everything above

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flexquant/eqm.hpp"
#include "flexquant/evaluation.hpp"
#include "flexquant/model.hpp"
#include "flexquant/parallel.hpp"
#include "flexquant/pruning.hpp"
#include "flexquant/quantizer.hpp"
#include "flexquant/runtime.hpp"
#include "flexquant/search.hpp"
#include "flexquant/sensitivity.hpp"
#include "flexquant/serialization.hpp"

namespace fs = std::filesystem;
using namespace flexquant;

namespace {

#ifndef FLEXQUANT_DEFAULT_CALIB
#define FLEXQUANT_DEFAULT_CALIB "data/calibration.txt"
#endif

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string config_path;
  std::string preset;
  std::string weights_path;
  std::string bits = "2,4,8";
  std::size_t group_size = 64;
  std::size_t stems = 2;
  std::size_t branches = 3;
  std::string rates = "0,0.25,0.5,0.75";
  std::string calib_path = FLEXQUANT_DEFAULT_CALIB;
  std::size_t max_sequences = 8;
  std::string trace_path;
  std::size_t trace_steps = 200;
  std::string out_dir;
  std::string metric = "logit";
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t threads = 1;
  std::string ensemble_path;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<BitWidth> parse_bits(const std::string& text) {
  std::vector<BitWidth> out;
  try {
    for (const auto& s : split_list(text)) {
      std::size_t used = 0;
      const int v = std::stoi(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      out.emplace_back(v);
    }
  } catch (const std::exception&) {
    throw UsageError("--bits: expected a comma list of integers in [2, 8], got '" + text + "'");
  }
  if (out.size() < 2) throw UsageError("--bits: need at least two precisions");
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (!(out[i - 1] < out[i])) throw UsageError("--bits: precisions must be strictly ascending");
  }
  return out;
}

std::vector<double> parse_rates(const std::string& text) {
  std::vector<double> out;
  try {
    for (const auto& s : split_list(text)) {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      PruneRate{v};
      out.push_back(v);
    }
  } catch (const std::exception&) {
    throw UsageError("--rates: expected a comma list of values in [0, 1], got '" + text + "'");
  }
  if (out.empty()) throw UsageError("--rates: empty list");
  return out;
}

std::string rate_tag(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "p%g", rate);
  return buf;
}

class Pipeline {
 public:
  Pipeline(RunConfig rc, const std::string& command) : rc_(std::move(rc)) {
    set_max_threads(rc_.threads);
    precisions_ = parse_bits(rc_.bits);
    rates_ = parse_rates(rc_.rates);
    if (rc_.stems < 1 || rc_.branches < 1) throw UsageError("--stems and --branches must be >= 1");
    try {
      params_.metric_kind = parse_metric_kind(rc_.metric);
    } catch (const std::invalid_argument&) {
      throw UsageError("--metric: expected 'logit' or 'ppl', got '" + rc_.metric + "'");
    }
    params_.stem_count = rc_.stems;
    params_.branch_count = rc_.branches;

    if (rc_.out_dir.empty()) {
      const char* env = std::getenv("FLEXQUANT_OUT");
      rc_.out_dir = env && *env ? env : "out";
    }
    out_ = rc_.out_dir;
    fs::create_directories(out_);
    log_.open(out_ / (command + ".log"));

    if (!rc_.preset.empty()) {
      if (rc_.preset != "complexity-check") throw UsageError("--preset: only 'complexity-check' is defined");
      model_config_ = complexity_check_preset();
    } else if (!rc_.config_path.empty()) {
      model_config_ = load_model_config(rc_.config_path);
    }
    if (rc_.seed_given || rc_.config_path.empty()) model_config_.seed = rc_.seed;
  }

  void log(const std::string& line) {
    std::cerr << line << "\n";
    log_ << line << "\n";
  }

  const fs::path& out() const { return out_; }
  const std::vector<double>& rates() const { return rates_; }

  const ModelStore& store() {
    if (!store_) {
      auto model = rc_.weights_path.empty() ? Model::build(model_config_) : load_weights(model_config_, rc_.weights_path);
      auto shared = std::make_shared<const Model>(std::move(model));
      store_ = std::make_unique<ModelStore>(shared, precisions_, rc_.group_size);
      log("model: " + std::to_string(store_->module_count()) + " modules, " +
          std::to_string(total_quantizable_params(model_config_)) + " quantizable parameters, seed " +
          std::to_string(model_config_.seed));
    }
    return *store_;
  }

  const CalibrationSet& calibration() {
    if (!calib_) {
      calib_ = load_calibration(rc_.calib_path, model_config_.max_context).truncated(rc_.max_sequences);
      log("calibration: " + std::to_string(calib_->sequences.size()) + " sequences, " +
          std::to_string(calib_->total_tokens()) + " tokens, fingerprint " + calib_->fingerprint_hex());
    }
    return *calib_;
  }

  const SensitivityTable& table() {
    if (!table_) table_ = build_sensitivity_table(store(), calibration());
    return *table_;
  }

  const Evaluator& evaluator() {
    if (!evaluator_) {
      reference_view_.emplace(materialize(uniform_config(store(), store().high()), store()));
      evaluator_.emplace(params_.metric_kind, calibration(), *reference_view_);
    }
    return *evaluator_;
  }

  const Ensemble& ensemble() {
    if (!ensemble_) {
      if (!rc_.ensemble_path.empty()) {
        ensemble_ = ensemble_from_json(read_json(rc_.ensemble_path), store());
        log("ensemble: loaded " + rc_.ensemble_path);
      } else {
        ensemble_ = run_search(CandidatePool::all(store()));
      }
    }
    return *ensemble_;
  }

  Ensemble run_search(const CandidatePool& pool) {
    log(complexity_summary(store().precisions().size(), store().module_count()));
    SearchStats stats;
    auto e = search_ensemble(store(), evaluator(), table(), params_, pool, &stats);
    log("search: " + std::to_string(stats.iterations) + " iterations, " + std::to_string(stats.evaluations) +
        " evaluations, " + std::to_string(stats.completed_trajectories) + " completed trajectories; best has " +
        std::to_string(e.trajectory.size()) + " configs, trade-off area " + format_double(trade_off_area(e.trajectory)));
    return e;
  }

  void quantize() {
    Json summary{{"group_size", store().group_size()}, {"models", Json::array()}};
    for (auto bits : store().precisions()) {
      const auto& qm = store().quantized(bits);
      write_quantized_model(qm, out_);
      summary["models"].push_back(Json{{"precision", bits.bits()},
                                       {"manifest", quantized_model_stem(bits) + ".json"},
                                       {"footprint_bytes", qm.footprint_bytes()}});
      log("quantize: QM(" + std::to_string(bits.bits()) + ") footprint " + std::to_string(qm.footprint_bytes()) +
          " bytes");
    }
    write_text(out_ / "model.cfg", format_model_config(model_config_));
    write_json(out_ / "store.json", summary);
    log(complexity_summary(store().precisions().size(), store().module_count()));
  }

  void sensitivity() {
    write_json(out_ / "sensitivity.json", sensitivity_to_json(table()));
    log("sensitivity: " + std::to_string(table().size()) + " entries");
  }

  void search() {
    const auto& e = ensemble();
    write_json(out_ / "ensemble.json", ensemble_to_json(e, store()));
    write_text(out_ / "curve.csv", curve_csv(e));
    write_json(out_ / "metrics.json", metric_records(e));
    log("search: storage " + std::to_string(storage_cost(e, store())) + " bytes, granularity " +
        std::to_string(granularity(e)) + " bytes");
  }

  void prune() {
    if (store().mid_count() == 0) throw std::runtime_error("prune: --bits has no intermediate precision to prune");
    const auto ranking = rank_mid_modules(ensemble(), store());
    write_json(out_ / "ranking.json", ranking_to_json(ranking));
    std::string storage = "prune_rate,storage_bytes,granularity_bytes,mean_metric,trade_off_area,configs\n";
    for (double rate : rates_) {
      const auto e = prune_and_search(store(), evaluator(), table(), ranking, PruneRate(rate), params_);
      const auto tag = rate_tag(rate);
      write_json(out_ / ("ensemble_" + tag + ".json"), ensemble_to_json(e, store()));
      write_text(out_ / ("curve_" + tag + ".csv"), curve_csv(e));
      const auto cost = storage_cost(e, store());
      storage += format_double(rate) + "," + std::to_string(cost) + "," + std::to_string(granularity(e)) + "," +
                 format_double(mean_metric(e.trajectory)) + "," + format_double(trade_off_area(e.trajectory)) + "," +
                 std::to_string(e.trajectory.size()) + "\n";
      log("prune: P=" + format_double(rate) + " removes " + std::to_string(e.pruned_pairs.size()) +
          " module versions, storage " + std::to_string(cost) + " bytes");
    }
    write_text(out_ / "storage.csv", storage);
  }

  void simulate() {
    const auto& e = ensemble();
    const auto& s = store();
    MemoryTrace trace;
    if (!rc_.trace_path.empty()) {
      trace = load_trace_csv(rc_.trace_path);
    } else {
      const std::size_t hi = e.trajectory.front().footprint_bytes;
      const std::size_t lo = e.trajectory.back().footprint_bytes;
      const std::size_t spread = hi - lo;
      trace = random_walk_trace(rc_.trace_steps, lo > spread / 8 ? lo - spread / 8 : 0, hi + spread / 8,
                                std::max<std::size_t>(1, spread / 10), rc_.seed);
      write_text(out_ / "trace.csv", [&] {
        std::string t = "step,available_bytes\n";
        for (const auto& st : trace.steps) t += std::to_string(st.step) + "," + std::to_string(st.available_bytes) + "\n";
        return t;
      }());
    }
    const auto report = flexquant::simulate(e, trace, s);
    const auto baseline = flexquant::simulate(uniform_baseline(s), trace, s, SwapPolicy::FullModel);
    write_json(out_ / "sim_report.json", sim_report_to_json(report));
    write_text(out_ / "sim_summary.csv", sim_report_csv(report));
    write_json(out_ / "baseline_report.json", sim_report_to_json(baseline));
    write_text(out_ / "baseline_summary.csv", sim_report_csv(baseline));
    log("simulate: " + std::to_string(trace.steps.size()) + " steps; EQM total io " + std::to_string(report.total_io) +
        " bytes, granularity " + std::to_string(report.max_adjacent_gap) + ", violations " +
        std::to_string(report.violations_count));
    log("simulate: uniform baseline total io " + std::to_string(baseline.total_io) + " bytes, granularity " +
        std::to_string(baseline.max_adjacent_gap) + ", violations " + std::to_string(baseline.violations_count));
  }

  void report() {
    std::string merged = "prune_rate,config_index,footprint_bytes,metric\n";
    for (double rate : rates_) {
      const auto path = out_ / ("ensemble_" + rate_tag(rate) + ".json");
      if (!fs::exists(path)) throw std::runtime_error("report: missing " + path.string() + " (run prune first)");
      const auto e = ensemble_from_json(read_json(path), store());
      for (std::size_t k = 0; k < e.trajectory.size(); ++k) {
        const auto& c = e.trajectory[k];
        merged += format_double(rate) + "," + std::to_string(k) + "," + std::to_string(c.footprint_bytes) + "," +
                  (c.metric ? format_double(*c.metric) : std::string()) + "\n";
      }
    }
    write_text(out_ / "report.csv", merged);
    log("report: merged " + std::to_string(rates_.size()) + " curves into report.csv");
  }

 private:
  RunConfig rc_;
  ModelConfig model_config_;
  std::vector<BitWidth> precisions_;
  std::vector<double> rates_;
  SearchParams params_;
  fs::path out_;
  std::ofstream log_;

  std::unique_ptr<ModelStore> store_;
  std::optional<CalibrationSet> calib_;
  std::optional<SensitivityTable> table_;
  std::optional<ModelView> reference_view_;
  std::optional<Evaluator> evaluator_;
  std::optional<Ensemble> ensemble_;
};

void add_model_options(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--config", rc.config_path, "Model config file (key = value)")->check(CLI::ExistingFile);
  cmd->add_option("--preset", rc.preset, "Named model config: complexity-check (33 layers, 66 modules)");
  cmd->add_option("--weights", rc.weights_path, "Import weights from a flat binary weight file")->check(CLI::ExistingFile);
  cmd->add_option("--bits", rc.bits, "Precision set, strictly ascending")->capture_default_str();
  cmd->add_option("--group-size", rc.group_size, "Quantization group size")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&rc](const std::uint64_t& v) { rc.seed = v; rc.seed_given = true; }, "Seed for all randomness (default 0)");
  cmd->add_option("--threads", rc.threads, "Worker thread cap (0 = all cores)")->capture_default_str();
  cmd->add_option("--out", rc.out_dir, "Output directory (default $FLEXQUANT_OUT or ./out)");
}

void add_eval_options(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--calib", rc.calib_path, "Calibration file (raw bytes)")->capture_default_str()->check(CLI::ExistingFile);
  cmd->add_option("--max-sequences", rc.max_sequences, "Use at most this many calibration sequences (0 = all)")
      ->capture_default_str();
  cmd->add_option("--metric", rc.metric, "Search metric: logit | ppl")->capture_default_str();
}

void add_search_options(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--stems", rc.stems, "Live trajectories kept per iteration")->capture_default_str();
  cmd->add_option("--branches", rc.branches, "Successors kept per trajectory after the sensitivity filter")
      ->capture_default_str();
}

void add_rate_options(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--rates,--rate", rc.rates, "Prune rates, comma list in [0, 1]")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flexquant: elastic mixed-precision quantized model ensembles"};
  app.require_subcommand(1, 1);
  RunConfig rc;

  auto* quantize = app.add_subcommand("quantize", "Quantize the model at every precision");
  auto* sensitivity = app.add_subcommand("sensitivity", "Build the single-module sensitivity table");
  auto* search = app.add_subcommand("search", "Search the EQM ensemble");
  auto* prune = app.add_subcommand("prune", "Rank intermediate modules and re-search per prune rate");
  auto* simulate = app.add_subcommand("simulate", "Simulate elastic hosting under a memory trace");
  auto* report = app.add_subcommand("report", "Merge per-rate curves into report.csv");
  auto* all = app.add_subcommand("all", "Run the full pipeline");

  for (auto* cmd : {quantize, sensitivity, search, prune, simulate, report, all}) add_model_options(cmd, rc);
  for (auto* cmd : {sensitivity, search, prune, simulate, all}) add_eval_options(cmd, rc);
  for (auto* cmd : {search, prune, simulate, all}) add_search_options(cmd, rc);
  for (auto* cmd : {prune, report, all}) add_rate_options(cmd, rc);
  for (auto* cmd : {prune, simulate}) {
    cmd->add_option("--ensemble", rc.ensemble_path, "Use this ensemble manifest instead of searching")
        ->check(CLI::ExistingFile);
  }
  for (auto* cmd : {simulate, all}) {
    cmd->add_option("--trace", rc.trace_path, "Memory trace CSV (step,available_bytes)")->check(CLI::ExistingFile);
    cmd->add_option("--trace-steps", rc.trace_steps, "Steps of the generated random-walk trace when no --trace")
        ->capture_default_str();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    Pipeline p(rc, command);
    if (command == "quantize") {
      p.quantize();
    } else if (command == "sensitivity") {
      p.sensitivity();
    } else if (command == "search") {
      p.search();
    } else if (command == "prune") {
      p.prune();
    } else if (command == "simulate") {
      p.simulate();
    } else if (command == "report") {
      p.report();
    } else {
      p.quantize();
      p.sensitivity();
      p.search();
      if (p.store().mid_count() > 0) {
        p.prune();
        p.report();
      } else {
        p.log("all: no intermediate precision, skipping prune and report");
      }
      p.simulate();
    }
  } catch (const UsageError& e) {
    std::cerr << "flexquant " << command << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "flexquant " << command << ": error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
