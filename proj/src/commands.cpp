#include "mhpc/commands.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace mhpc {

namespace fs = std::filesystem;

nlohmann::json to_json(const Telemetry& t) {
  return {{"ram_max", t.ram_max ? nlohmann::json(*t.ram_max) : nlohmann::json(nullptr)},
          {"t_fit", t.t_fit},
          {"t_infer", t.t_infer},
          {"l_infer", t.l_infer},
          {"n_test", t.n_test},
          {"traversals", t.traversals},
          {"peak_retained_rows", t.peak_retained_rows}};
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"auroc", r.auroc}, {"n_pos", r.n_pos}, {"n_neg", r.n_neg}};
}

nlohmann::json to_json(const FitReport& r) {
  return {{"traversals", r.traversals},
          {"patches", r.patches},
          {"images", r.images},
          {"peak_retained_rows", r.peak_retained_rows},
          {"reduced_dim", r.reduced_dim},
          {"jitter", r.jitter}};
}

nlohmann::json error_record(const Error& e) {
  return {{"error", {{"code", std::string(to_string(e.code()))}, {"message", e.what()}}}};
}

DetectorConfig read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open config '" + path.string() + "'");
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, "config '" + path.string() + "': " + e.what());
  }
}

SynthPaths cmd_synth(const SynthSpec& spec, const fs::path& out_dir) {
  return write_synthetic(spec, out_dir);
}

FitRun cmd_fit(const fs::path& manifest_path, const DetectorConfig& config, const fs::path& state_path) {
  const DatasetManifest manifest = read_manifest(manifest_path);
  if (manifest.split != Split::Train) {
    fail(ErrorCode::InvalidArgument, "fit: manifest '" + manifest_path.string() + "' is not a train split");
  }
  FitRun run;
  run.telemetry = measure(RunKind::Fit, [&] {
    run.result = fit(ManifestBlockSource(manifest), config);
    return RunCounters{run.result.report.images, run.result.report.traversals,
                       static_cast<std::int64_t>(run.result.report.peak_retained_rows)};
  });
  save(run.result.state, state_path);
  run.record = {{"command", "fit"},
                {"config", to_json(config)},
                {"fit", to_json(run.result.report)},
                {"bank_size", run.result.state.bank.size()},
                {"telemetry", to_json(run.telemetry)}};
  return run;
}

nlohmann::json to_json(const ScoreRecord& r) {
  nlohmann::json j = {{"image_id", r.image_id}, {"s", r.s}, {"s_max", r.s_max}, {"b_used", r.b_used}};
  j["label"] = r.label ? nlohmann::json(*r.label) : nlohmann::json(nullptr);
  return j;
}

ScoreRecord score_record_from_json(const nlohmann::json& j) {
  ScoreRecord r;
  try {
    r.image_id = j.at("image_id").get<std::string>();
    r.s = j.at("s").get<double>();
    r.s_max = j.value("s_max", r.s);
    r.b_used = j.value("b_used", Index{0});
    if (j.contains("label") && !j.at("label").is_null()) r.label = j.at("label").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, std::string("score record: ") + e.what());
  }
  return r;
}

ScoreRun score_manifest(const DetectorState& state, const DatasetManifest& manifest,
                        const std::optional<MapOptions>& maps) {
  if (maps) {
    std::error_code ec;
    fs::create_directories(maps->dir, ec);
    if (ec) fail(ErrorCode::Io, "cannot create '" + maps->dir.string() + "': " + ec.message());
  }
  for (const auto& entry : manifest.entries) {
    if (entry.d0 != state.input_dim()) {
      fail(ErrorCode::DimensionMismatch, "score: entry '" + entry.image_id + "' has d0=" +
                                             std::to_string(entry.d0) + ", detector expects d0=" +
                                             std::to_string(state.input_dim()));
    }
  }
  ScoreRun run;
  run.telemetry = measure(RunKind::Score, [&] {
    for (const auto& entry : manifest.entries) {
      const DescriptorBlock block = load_block(manifest, entry);
      const ImageScore score = score_image(state, block);
      run.records.push_back({score.image_id, score.s, score.s_max, block.label, score.b_used});
      if (maps) {
        const Index h = maps->height > 0 ? maps->height : block.grid_h;
        const Index w = maps->width > 0 ? maps->width : block.grid_w;
        write_matrix_file(maps->dir / (score.image_id + ".mhpc"), anomaly_map(score.patch_scores, h, w));
      }
    }
    return RunCounters{static_cast<std::int64_t>(run.records.size()), 0, 0};
  });
  return run;
}

void write_score_records(std::ostream& out, const std::vector<ScoreRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

std::vector<ScoreRecord> read_score_records(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open score records '" + path.string() + "'");
  std::vector<ScoreRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(score_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::MalformedFile, "score records '" + path.string() + "': " + e.what());
    }
  }
  return records;
}

ScoreRun cmd_score(const fs::path& state_path, const fs::path& manifest_path,
                   const std::optional<MapOptions>& maps) {
  const DetectorState state = load(state_path);
  return score_manifest(state, read_manifest(manifest_path), maps);
}

EvalReport cmd_eval(const std::vector<ScoreRecord>& records) {
  std::vector<ScoredImage> scored;
  scored.reserve(records.size());
  for (const auto& r : records) {
    if (!r.label) fail(ErrorCode::UndefinedAUROC, "eval: record '" + r.image_id + "' has no label");
    scored.push_back({r.image_id, r.s, *r.label});
  }
  return evaluate(std::move(scored));
}

Sweep sweep_from_json(const nlohmann::json& j) {
  Sweep sweep;
  try {
    if (j.contains("base")) sweep.base = config_from_json(j.at("base"));
    if (j.contains("runs")) {
      for (const auto& run : j.at("runs")) {
        SweepEntry e;
        e.name = run.at("name").get<std::string>();
        e.overrides = run.value("config", nlohmann::json::object());
        sweep.runs.push_back(std::move(e));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, std::string("sweep: ") + e.what());
  }
  return sweep;
}

Sweep read_sweep(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open sweep '" + path.string() + "'");
  try {
    return sweep_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, "sweep '" + path.string() + "': " + e.what());
  }
}

nlohmann::json to_json(const BenchRow& row) {
  nlohmann::json j = {{"name", row.name}, {"config", row.config}};
  if (!row.ok()) {
    j["status"] = "error";
    j["error"] = {{"code", *row.error_code}, {"message", row.error_message}};
    return j;
  }
  j["status"] = "ok";
  j["auroc"] = row.auroc;
  j["ram_max"] = row.ram_max ? nlohmann::json(*row.ram_max) : nlohmann::json(nullptr);
  j["t_fit"] = row.t_fit;
  j["l_infer"] = row.l_infer;
  j["bank_size"] = row.bank_size;
  j["reduced_dim"] = row.reduced_dim;
  j["traversals"] = row.traversals;
  j["peak_retained_rows"] = row.peak_retained_rows;
  return j;
}

std::vector<BenchRow> cmd_bench(const fs::path& train_path, const fs::path& test_path,
                                const Sweep& sweep) {
  std::vector<BenchRow> rows;
  if (sweep.runs.empty()) return rows;
  const DatasetManifest train = read_manifest(train_path);
  const DatasetManifest test = read_manifest(test_path);
  const ManifestBlockSource source(train);

  for (const auto& entry : sweep.runs) {
    BenchRow row;
    row.name = entry.name;
    try {
      const DetectorConfig config = config_from_json(entry.overrides, sweep.base);
      row.config = to_json(config);
      FitResult fitted;
      const Telemetry fit_t = measure(RunKind::Fit, [&] {
        fitted = fit(source, config);
        return RunCounters{fitted.report.images, fitted.report.traversals,
                           static_cast<std::int64_t>(fitted.report.peak_retained_rows)};
      });
      const ScoreRun scored = score_manifest(fitted.state, test);
      row.auroc = cmd_eval(scored.records).auroc;
      row.ram_max = scored.telemetry.ram_max;
      row.t_fit = fit_t.t_fit;
      row.l_infer = scored.telemetry.l_infer;
      row.bank_size = fitted.state.bank.size();
      row.reduced_dim = fitted.report.reduced_dim;
      row.traversals = fitted.report.traversals;
      row.peak_retained_rows = fit_t.peak_retained_rows;
    } catch (const Error& e) {
      row.error_code = std::string(to_string(e.code()));
      row.error_message = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void print_bench_table(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << std::left << std::setw(24) << "config" << std::right << std::setw(8) << "AUROC"
      << std::setw(12) << "ram_max_MB" << std::setw(10) << "t_fit_s" << std::setw(12)
      << "l_infer_ms" << std::setw(8) << "bank" << std::setw(6) << "k" << std::setw(6) << "pass"
      << std::setw(10) << "peak_rows" << '\n';
  out << std::fixed;
  for (const auto& r : rows) {
    out << std::left << std::setw(24) << r.name << std::right;
    if (!r.ok()) {
      out << "  error " << *r.error_code << ": " << r.error_message << '\n';
      continue;
    }
    out << std::setw(8) << std::setprecision(4) << r.auroc << std::setw(12);
    if (r.ram_max) {
      out << std::setprecision(1) << static_cast<double>(*r.ram_max) / (1024.0 * 1024.0);
    } else {
      out << "n/a";
    }
    out << std::setw(10) << std::setprecision(3) << r.t_fit << std::setw(12) << std::setprecision(3)
        << r.l_infer << std::setw(8) << r.bank_size << std::setw(6) << r.reduced_dim << std::setw(6)
        << r.traversals << std::setw(10) << r.peak_retained_rows << '\n';
  }
  out << std::defaultfloat;
}

}  // namespace mhpc
