#pragma once

#include "mhpc/core.hpp"
#include "mhpc/detector.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mhpc {

// --- descriptor files ------------------------------------------------------
//
// "MHPC" | u32 version | u32 rows | u32 cols | u8 dtype | row-major data
// All integers little-endian; dtype 0 = float32, 1 = float64 (little-endian).

enum class DType : std::uint8_t { Float32 = 0, Float64 = 1 };

inline constexpr std::uint32_t kDescriptorFileVersion = 1;

void write_matrix_file(const std::filesystem::path& path, const Eigen::Ref<const RowMatrixXd>& m,
                       DType dtype = DType::Float64);
RowMatrixXd read_matrix_file(const std::filesystem::path& path);

// --- manifests -------------------------------------------------------------

enum class Split { Train, Test };

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory unless absolute
  std::string image_id;
  std::optional<int> label;
  Index grid_h = 0;
  Index grid_w = 0;
  Index d0 = 0;
};

struct DatasetManifest {
  int version = 1;
  Split split = Split::Train;
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // not serialised

  /// Train manifests may only hold normal entries.
  void validate() const;
};

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j, std::filesystem::path base_dir = {});
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

DescriptorBlock load_block(const DatasetManifest& manifest, const ManifestEntry& entry);

/// Reads descriptor files lazily on every traversal.
class ManifestBlockSource final : public BlockSource {
 public:
  explicit ManifestBlockSource(DatasetManifest manifest) : manifest_(std::move(manifest)) {}
  void for_each(const Visitor& visit) const override;
  [[nodiscard]] const DatasetManifest& manifest() const noexcept { return manifest_; }

 private:
  DatasetManifest manifest_;
};

// --- synthetic descriptors -------------------------------------------------

/// Gaussian patch descriptors with an anisotropic covariance Q diag(ev) Q^T.
/// Anomalous test images get a contiguous sub-grid of patches displaced by
/// `magnitude` standard deviations along eigen-direction `direction`.
struct SynthSpec {
  Index d0 = 64;
  double ambient_mean = 0.0;
  std::vector<double> eigenvalues;  // length d0; empty -> all ones
  std::optional<std::uint64_t> rotation_seed;  // none -> axis-aligned
  Index grid_h = 4;
  Index grid_w = 4;
  Index n_train = 200;
  Index n_test_normal = 50;
  Index n_test_anomalous = 50;
  Index direction = 0;  // index into eigenvalues
  double magnitude = 6.0;
  Index anomaly_h = 2;
  Index anomaly_w = 2;
  std::uint64_t seed = 0;
  DType dtype = DType::Float64;

  void validate() const;
  /// Copy with eigenvalues filled in and every field checked.
  [[nodiscard]] std::vector<double> resolved_eigenvalues() const;
};

nlohmann::json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

struct SynthDataset {
  std::vector<DescriptorBlock> train;
  std::vector<DescriptorBlock> test;
  MatrixXd rotation;  // columns are the eigen-directions
};

/// In-memory generation; deterministic in spec.seed and spec.rotation_seed.
SynthDataset generate_synthetic(const SynthSpec& spec);

struct SynthPaths {
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
};

/// Writes train/ and test/ descriptor files plus train.json and test.json.
SynthPaths write_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace mhpc
