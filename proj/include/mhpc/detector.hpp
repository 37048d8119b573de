#pragma once

#include "mhpc/bank.hpp"
#include "mhpc/core.hpp"
#include "mhpc/covreg.hpp"
#include "mhpc/index.hpp"
#include "mhpc/reducer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mhpc {

/// Patch descriptors of one image laid out on its patch grid; row j is the
/// patch at (j / grid_w, j % grid_w).
struct DescriptorBlock {
  std::string image_id;
  Index grid_h = 0;
  Index grid_w = 0;
  RowMatrixXd data;          // (grid_h * grid_w) x d0
  std::optional<int> label;  // 0 normal, 1 anomalous

  [[nodiscard]] Index d0() const noexcept { return data.cols(); }
  [[nodiscard]] Index patches() const noexcept { return data.rows(); }
  /// Throws unless the grid matches the row count and every value is finite.
  void validate() const;
};

/// A dataset that can be traversed several times with identical content.
class BlockSource {
 public:
  using Visitor = std::function<void(const DescriptorBlock&)>;

  virtual ~BlockSource() = default;
  virtual void for_each(const Visitor& visit) const = 0;
};

class VectorBlockSource final : public BlockSource {
 public:
  explicit VectorBlockSource(std::vector<DescriptorBlock> blocks) : blocks_(std::move(blocks)) {}
  void for_each(const Visitor& visit) const override {
    for (const auto& b : blocks_) visit(b);
  }
  [[nodiscard]] const std::vector<DescriptorBlock>& blocks() const noexcept { return blocks_; }

 private:
  std::vector<DescriptorBlock> blocks_;
};

enum class Whitening { Mahalanobis, Identity };
enum class ScoringMode { Max, Reweighted };

struct DetectorConfig {
  double rho = 0.99;
  Index k_max = 0;          // 0: min(d0, 512)
  Index batch_rows = 1024;  // patch rows per ingested mini-batch
  Whitening whitening = Whitening::Mahalanobis;
  ShrinkagePolicy shrinkage = ShrinkagePolicy::fixed(0.07);
  double eps_rel = 1e-8;
  JitterSchedule jitter;
  ConstructorKind constructor = ConstructorKind::MergeReduceKCenter;
  Index budget = 1000;  // K
  Index local_budget = 256;  // m_c
  Index mr_levels = MergeReduceKCenter::kDefaultLevels;
  double geores_alpha = 0.9;
  Index geores_q = 0;  // 0: max(16 Kt, 1024)
  Index b = 9;
  ScoringMode scoring = ScoringMode::Reweighted;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const DetectorConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
DetectorConfig config_from_json(const nlohmann::json& j, DetectorConfig base = {});

inline constexpr int kFormatVersion = 1;

struct DetectorState {
  Reducer reducer;
  CovarianceModel model;
  MemoryBank bank;
  FlatIndex index;
  DetectorConfig config;
  int format_version = kFormatVersion;

  [[nodiscard]] Index input_dim() const noexcept { return reducer.input_dim(); }
  [[nodiscard]] Index reduced_dim() const noexcept { return reducer.output_dim(); }
};

struct FitReport {
  int traversals = 0;
  std::int64_t patches = 0;
  std::int64_t images = 0;
  Index peak_retained_rows = 0;  // logical counter: buffered patch rows + constructor state
  Index reduced_dim = 0;
  double jitter = 0.0;
};

struct FitResult {
  DetectorState state;
  FitReport report;
};

/// Three traversals: reducer fit, moment accumulation, bank construction
/// (GeoReS adds one or two more; the Euclidean control skips the moments).
FitResult fit(const BlockSource& dataset, const DetectorConfig& config);

/// Whitened embeddings z = L^{-1}(R(u) - mu) of a descriptor matrix.
RowMatrixXd embed(const DetectorState& state, const Eigen::Ref<const RowMatrixXd>& descriptors);

/// a(u) for every patch, arranged grid_h x grid_w.
MatrixXd score_patches(const DetectorState& state, const DescriptorBlock& block);

/// 1 - exp(a - tau) / sum_m exp(delta_m - tau), where `neighbour_distances`
/// holds delta(u*, m) over N_b(m*) and a = delta(u*, m*).
double reweighting_factor(double a_star, std::span<const double> neighbour_distances, double tau);

struct ImageScore {
  std::string image_id;
  double s = 0.0;
  double s_max = 0.0;
  double weight = 1.0;
  Index b_used = 0;  // neighbourhood size actually used (clamped to the bank size)
  MatrixXd patch_scores;
};

ImageScore score_image(const DetectorState& state, const DescriptorBlock& block);

/// Bilinear upsampling with corner alignment.
MatrixXd anomaly_map(const MatrixXd& patch_scores, Index out_h, Index out_w);

void save(const DetectorState& state, const std::filesystem::path& destination);
DetectorState load(const std::filesystem::path& source);
std::string serialize(const DetectorState& state);
DetectorState deserialize(std::string_view bytes);

}  // namespace mhpc
