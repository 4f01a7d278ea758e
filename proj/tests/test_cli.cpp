#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("fq_cli_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + FLEXQUANT_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json load(const fs::path& p) { return Json::parse(slurp(p)); }

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

const std::string kFast = " --max-sequences 1 ";

}  // namespace

TEST_CASE("search writes a valid two-precision ensemble") {
  TempDir t;
  const auto out = t.path / "a";
  REQUIRE(run("search --bits 2,8 --stems 1 --branches 1" + kFast + "--out " + out.string(), t.path / "log") == 0);
  const auto e = load(out / "ensemble.json");
  CHECK(e.at("trajectory").size() == 9);
  CHECK(e.at("metric_kind") == "LOGIT_DISTANCE");
  CHECK(e.at("trajectory").at(0).at("footprint_bytes") == 208896);
  CHECK(lines(slurp(out / "curve.csv")) == 10);
  CHECK(load(out / "metrics.json").size() == 9);
  CHECK(fs::exists(out / "search.log"));

  // same inputs, same bytes
  const auto out2 = t.path / "b";
  REQUIRE(run("search --bits 2,8 --stems 1 --branches 1" + kFast + "--out " + out2.string(), t.path / "log") == 0);
  CHECK(slurp(out / "ensemble.json") == slurp(out2 / "ensemble.json"));
  CHECK(slurp(out / "curve.csv") == slurp(out2 / "curve.csv"));
}

TEST_CASE("quantize writes one manifest and blob per precision") {
  TempDir t;
  REQUIRE(run("quantize --bits 2,4,8 --out " + t.path.string(), t.path / "log") == 0);
  for (int b : {2, 4, 8}) {
    const auto stem = "qm_" + std::to_string(b);
    const auto j = load(t.path / (stem + ".json"));
    CHECK(fs::file_size(t.path / (stem + ".bin")) == j.at("footprint_bytes").get<std::size_t>());
  }
  CHECK(load(t.path / "qm_8.json").at("footprint_bytes") == 208896);
}

TEST_CASE("prune at rate 0 reproduces the unpruned trajectory") {
  TempDir t;
  const std::string common = "--bits 2,4,8 --stems 1 --branches 2" + kFast + "--out " + t.path.string();
  REQUIRE(run("search " + common, t.path / "log") == 0);
  REQUIRE(run("prune --rate 0 --ensemble " + (t.path / "ensemble.json").string() + " " + common, t.path / "log") == 0);
  const auto base = load(t.path / "ensemble.json");
  const auto p0 = load(t.path / "ensemble_p0.json");
  CHECK(p0.at("trajectory") == base.at("trajectory"));
  CHECK(p0.at("prune_rate") == 0.0);
  CHECK(p0.at("pruned_pairs").empty());
  CHECK_FALSE(base.contains("prune_rate"));
}

TEST_CASE("usage errors exit with 2, runtime errors with 1") {
  TempDir t;
  CHECK(run("frobnicate", t.path / "log") == 2);
  CHECK(run("", t.path / "log") == 2);
  CHECK(run("search --bits 2,9 --out " + t.path.string(), t.path / "log") == 2);
  CHECK(run("search --bits 8,2 --out " + t.path.string(), t.path / "log") == 2);
  CHECK(run("search --metric bleu --out " + t.path.string(), t.path / "log") == 2);
  CHECK(run("prune --rates 1.5 --out " + t.path.string(), t.path / "log") == 2);
  CHECK(run("prune --bits 2,8" + kFast + "--out " + t.path.string(), t.path / "log") == 1);
  CHECK(run("simulate --trace /nonexistent.csv --out " + t.path.string(), t.path / "log") == 2);
  CHECK(run("--help", t.path / "log") == 0);
}

TEST_CASE("full pipeline with four prune rates") {
  TempDir t;
  REQUIRE(run("all --bits 2,4,8 --rates 0,0.25,0.5,0.75 --trace-steps 50" + kFast + "--out " + t.path.string(),
              t.path / "log") == 0);
  for (const char* tag : {"p0", "p0.25", "p0.5", "p0.75"}) {
    CHECK(fs::exists(t.path / ("ensemble_" + std::string(tag) + ".json")));
    CHECK(fs::exists(t.path / ("curve_" + std::string(tag) + ".csv")));
  }
  const auto storage = slurp(t.path / "storage.csv");
  CHECK(lines(storage) == 5);
  CHECK(storage.rfind("prune_rate,storage_bytes,granularity_bytes,mean_metric,trade_off_area,configs\n", 0) == 0);
  const auto report = slurp(t.path / "report.csv");
  CHECK(report.rfind("prune_rate,config_index,footprint_bytes,metric\n", 0) == 0);
  CHECK(lines(report) > 4 * 9);
  for (const char* f : {"sensitivity.json", "ranking.json", "sim_report.json", "sim_summary.csv",
                        "baseline_report.json", "baseline_summary.csv", "trace.csv", "qm_4.json"}) {
    CHECK(fs::exists(t.path / f));
  }
  const auto sim = load(t.path / "sim_report.json");
  CHECK(sim.at("steps").size() == 50);
  CHECK(sim.at("aggregates").at("max_adjacent_gap").get<std::size_t>() <=
        load(t.path / "baseline_report.json").at("aggregates").at("max_adjacent_gap").get<std::size_t>());
}
