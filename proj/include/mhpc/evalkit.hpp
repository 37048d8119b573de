#pragma once

#include "mhpc/core.hpp"

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mhpc {

/// Mann-Whitney AUROC with average ranks for ties: the probability that a
/// random positive outranks a random negative, ties counting one half.
/// Labels are 0 (normal) or 1 (anomalous). Throws UndefinedAUROC unless both
/// classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

double macro_average(std::span<const double> values);

struct ScoredImage {
  std::string image_id;
  double score = 0.0;
  int label = 0;
};

struct EvalReport {
  double auroc = 0.5;
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
  std::vector<ScoredImage> per_image;
};

EvalReport evaluate(std::vector<ScoredImage> records);

/// Peak resident set size of this process in bytes, if the platform exposes it.
std::optional<std::int64_t> peak_resident_bytes();

struct Telemetry {
  std::optional<std::int64_t> ram_max;  // bytes
  double t_fit = 0.0;                   // seconds
  double t_infer = 0.0;                 // seconds, whole scoring run
  double l_infer = 0.0;                 // ms per image
  std::int64_t n_test = 0;
  int traversals = 0;
  std::int64_t peak_retained_rows = 0;
};

/// 1000 * t_infer / n_test; zero when nothing was scored.
double latency_ms_per_image(double t_infer_seconds, std::int64_t n_test) noexcept;

/// Wall-clock seconds taken by run().
template <typename Fn>
double timed(Fn&& run) {
  const auto start = std::chrono::steady_clock::now();
  run();
  const auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(stop - start).count();
}

enum class RunKind { Fit, Score };

/// Counters a measured run reports back.
struct RunCounters {
  std::int64_t images = 0;
  int traversals = 0;
  std::int64_t peak_retained_rows = 0;
};

/// Times run() and reads the platform peak-resident counter afterwards. For a
/// scoring run the elapsed time is t_infer and l_infer is derived per image.
template <typename Fn>
Telemetry measure(RunKind kind, Fn&& run) {
  RunCounters counters;
  const double elapsed = timed([&] { counters = run(); });
  Telemetry t;
  t.ram_max = peak_resident_bytes();
  t.traversals = counters.traversals;
  t.peak_retained_rows = counters.peak_retained_rows;
  if (kind == RunKind::Fit) {
    t.t_fit = elapsed;
  } else {
    t.t_infer = elapsed;
    t.n_test = counters.images;
    t.l_infer = latency_ms_per_image(elapsed, counters.images);
  }
  return t;
}

}  // namespace mhpc
