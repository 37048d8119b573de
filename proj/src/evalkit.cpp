#include "mhpc/evalkit.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <numeric>

namespace mhpc {

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    fail(ErrorCode::DimensionMismatch, "auroc: scores and labels differ in length");
  }
  const std::size_t n = scores.size();
  std::int64_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) fail(ErrorCode::InvalidArgument, "auroc: labels must be 0 or 1");
    n_pos += y;
  }
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    fail(ErrorCode::UndefinedAUROC, "auroc: need at least one positive and one negative");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // ranks are 1-based; a tie group spanning ranks [i+1, j] gets (i+1+j)/2
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) positive_rank_sum += avg_rank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double u = positive_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double macro_average(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::EmptyInput, "macro_average: no values");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

EvalReport evaluate(std::vector<ScoredImage> records) {
  std::vector<double> scores;
  std::vector<int> labels;
  scores.reserve(records.size());
  labels.reserve(records.size());
  for (const auto& r : records) {
    scores.push_back(r.score);
    labels.push_back(r.label);
  }
  EvalReport report;
  report.auroc = auroc(scores, labels);
  report.n_pos = std::count(labels.begin(), labels.end(), 1);
  report.n_neg = static_cast<std::int64_t>(labels.size()) - report.n_pos;
  report.per_image = std::move(records);
  return report;
}

std::optional<std::int64_t> peak_resident_bytes() {
  rusage usage{};
  if (getrusage(RUSAGE_SELF, &usage) != 0) return std::nullopt;
#if defined(__APPLE__)
  return static_cast<std::int64_t>(usage.ru_maxrss);
#else
  return static_cast<std::int64_t>(usage.ru_maxrss) * 1024;  // kilobytes on Linux
#endif
}

double latency_ms_per_image(double t_infer_seconds, std::int64_t n_test) noexcept {
  if (n_test <= 0) return 0.0;
  return 1000.0 * t_infer_seconds / static_cast<double>(n_test);
}

}  // namespace mhpc
