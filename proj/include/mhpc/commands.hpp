#pragma once

#include "mhpc/dataset.hpp"
#include "mhpc/detector.hpp"
#include "mhpc/evalkit.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mhpc {

nlohmann::json to_json(const Telemetry& telemetry);
nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const FitReport& report);
nlohmann::json error_record(const Error& error);

DetectorConfig read_config(const std::filesystem::path& path);

// --- synth -----------------------------------------------------------------

SynthPaths cmd_synth(const SynthSpec& spec, const std::filesystem::path& out_dir);

// --- fit -------------------------------------------------------------------

struct FitRun {
  FitResult result;
  Telemetry telemetry;
  nlohmann::json record;  // config echo + fit report + telemetry
};

/// Fits on a train manifest and writes the state container to `state_path`.
FitRun cmd_fit(const std::filesystem::path& manifest, const DetectorConfig& config,
               const std::filesystem::path& state_path);

// --- score -----------------------------------------------------------------

struct ScoreRecord {
  std::string image_id;
  double s = 0.0;
  double s_max = 0.0;
  std::optional<int> label;
  Index b_used = 0;
};

nlohmann::json to_json(const ScoreRecord& record);
ScoreRecord score_record_from_json(const nlohmann::json& j);

struct MapOptions {
  std::filesystem::path dir;
  Index height = 0;  // 0: the patch grid's own size
  Index width = 0;
};

struct ScoreRun {
  std::vector<ScoreRecord> records;
  Telemetry telemetry;
};

ScoreRun score_manifest(const DetectorState& state, const DatasetManifest& manifest,
                        const std::optional<MapOptions>& maps = std::nullopt);

/// One JSON object per line.
void write_score_records(std::ostream& out, const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> read_score_records(const std::filesystem::path& path);

ScoreRun cmd_score(const std::filesystem::path& state_path, const std::filesystem::path& manifest,
                   const std::optional<MapOptions>& maps = std::nullopt);

// --- eval ------------------------------------------------------------------

/// Throws UndefinedAUROC if any record lacks a label or one class is missing.
EvalReport cmd_eval(const std::vector<ScoreRecord>& records);

// --- bench -----------------------------------------------------------------

/// {"base": {config}, "runs": [{"name": ..., "config": {overrides}}, ...]}
struct SweepEntry {
  std::string name;
  nlohmann::json overrides;
};

struct Sweep {
  DetectorConfig base;
  std::vector<SweepEntry> runs;
};

Sweep sweep_from_json(const nlohmann::json& j);
Sweep read_sweep(const std::filesystem::path& path);

struct BenchRow {
  std::string name;
  std::optional<std::string> error_code;
  std::string error_message;
  nlohmann::json config;
  double auroc = 0.0;
  std::optional<std::int64_t> ram_max;
  double t_fit = 0.0;
  double l_infer = 0.0;
  Index bank_size = 0;
  Index reduced_dim = 0;
  int traversals = 0;
  std::int64_t peak_retained_rows = 0;

  [[nodiscard]] bool ok() const noexcept { return !error_code.has_value(); }
};

nlohmann::json to_json(const BenchRow& row);

/// One row per sweep entry in sweep order; failures are recorded per row.
std::vector<BenchRow> cmd_bench(const std::filesystem::path& train_manifest,
                                const std::filesystem::path& test_manifest, const Sweep& sweep);

void print_bench_table(std::ostream& out, const std::vector<BenchRow>& rows);

}  // namespace mhpc
