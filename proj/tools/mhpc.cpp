// mhpc: synthetic data generation, training, scoring, evaluation and
// benchmark sweeps for the Mahalanobis patch-retrieval detector.
#include "mhpc/commands.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

namespace fs = std::filesystem;
using mhpc::ErrorCode;
using mhpc::fail;

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open '" + path.string() + "' for writing");
  return out;
}

std::pair<mhpc::Index, mhpc::Index> parse_size(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    const long h = std::stol(text.substr(0, x));
    const long w = std::stol(text.substr(x + 1));
    if (h < 1 || w < 1) throw std::invalid_argument(text);
    return {h, w};
  } catch (const std::logic_error&) {
    fail(ErrorCode::InvalidArgument, "--map-size expects HxW with positive integers, got '" + text + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bounded-memory Mahalanobis patch-retrieval anomaly detector"};
  app.require_subcommand(1);

  std::string config_path, state_path, out_path, sweep_path, maps_dir, map_size;
  std::vector<std::string> manifests;
  std::optional<std::uint64_t> seed;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic descriptor dataset");
  synth->add_option("--config", config_path, "Synthetic spec (JSON); defaults apply when omitted");
  synth->add_option("--out", out_path, "Output directory")->required();
  synth->add_option("--seed", seed, "Overrides the spec's seed");

  auto* fit = app.add_subcommand("fit", "Fit a detector on a train manifest");
  fit->add_option("--manifest", manifests, "Train manifest")->required()->expected(1);
  fit->add_option("--config", config_path, "Detector config (JSON); canonical defaults when omitted");
  fit->add_option("--out", state_path, "Destination of the detector state")->required();
  fit->add_option("--seed", seed, "Overrides the config's seed");

  auto* score = app.add_subcommand("score", "Score every image of a manifest");
  score->add_option("--state", state_path, "Detector state")->required();
  score->add_option("--manifest", manifests, "Manifest to score")->required()->expected(1);
  score->add_option("--out", out_path, "Score records (JSON lines); stdout when omitted");
  score->add_option("--maps", maps_dir, "Directory for per-image anomaly maps");
  score->add_option("--map-size", map_size, "Anomaly map resolution HxW (default: patch grid)");

  auto* eval = app.add_subcommand("eval", "AUROC of labelled score records");
  std::string records_path;
  eval->add_option("records", records_path, "Score records (JSON lines)")->required();

  auto* bench = app.add_subcommand("bench", "Fit and evaluate every configuration of a sweep");
  bench->add_option("--manifest", manifests, "Train manifest, then test manifest")
      ->required()
      ->expected(2);
  bench->add_option("--sweep", sweep_path, "Sweep definition (JSON)")->required();
  bench->add_option("--out", out_path, "Machine-readable table (JSON lines)");
  bench->add_option("--seed", seed, "Overrides the seed of every configuration");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      mhpc::SynthSpec spec;
      if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) fail(ErrorCode::Io, "cannot open synth spec '" + config_path + "'");
        try {
          spec = mhpc::synth_spec_from_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
          fail(ErrorCode::MalformedFile, "synth spec '" + config_path + "': " + e.what());
        }
      }
      if (seed) spec.seed = *seed;
      const auto paths = mhpc::cmd_synth(spec, out_path);
      std::cout << nlohmann::json{{"command", "synth"},
                                  {"train", paths.train_manifest.string()},
                                  {"test", paths.test_manifest.string()},
                                  {"spec", mhpc::to_json(spec)}}
                       .dump()
                << '\n';
    } else if (*fit) {
      mhpc::DetectorConfig config;
      if (!config_path.empty()) config = mhpc::read_config(config_path);
      if (seed) config.seed = *seed;
      const auto run = mhpc::cmd_fit(manifests.front(), config, state_path);
      std::cout << run.record.dump() << '\n';
    } else if (*score) {
      std::optional<mhpc::MapOptions> maps;
      if (!maps_dir.empty()) {
        maps = mhpc::MapOptions{maps_dir, 0, 0};
        if (!map_size.empty()) std::tie(maps->height, maps->width) = parse_size(map_size);
      }
      const auto run = mhpc::cmd_score(state_path, manifests.front(), maps);
      if (out_path.empty()) {
        mhpc::write_score_records(std::cout, run.records);
      } else {
        auto out = open_output(out_path);
        mhpc::write_score_records(out, run.records);
        std::cout << nlohmann::json{{"command", "score"},
                                    {"records", run.records.size()},
                                    {"telemetry", mhpc::to_json(run.telemetry)}}
                         .dump()
                  << '\n';
      }
    } else if (*eval) {
      const auto report = mhpc::cmd_eval(mhpc::read_score_records(records_path));
      std::cout << mhpc::to_json(report).dump() << '\n';
    } else if (*bench) {
      auto sweep = mhpc::read_sweep(sweep_path);
      if (seed) sweep.base.seed = *seed;
      if (seed) {
        for (auto& run : sweep.runs) run.overrides["seed"] = *seed;
      }
      const auto rows = mhpc::cmd_bench(manifests[0], manifests[1], sweep);
      mhpc::print_bench_table(std::cout, rows);
      if (!out_path.empty()) {
        auto out = open_output(out_path);
        for (const auto& row : rows) out << mhpc::to_json(row).dump() << '\n';
      }
    }
  } catch (const mhpc::Error& e) {
    std::cerr << mhpc::error_record(e).dump() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", {{"code", "Internal"}, {"message", e.what()}}}}.dump() << '\n';
    return 3;
  }
  return 0;
}
