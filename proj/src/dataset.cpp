#include "mhpc/dataset.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace mhpc {

namespace fs = std::filesystem;

namespace {

constexpr char kDescriptorMagic[4] = {'M', 'H', 'P', 'C'};
constexpr std::size_t kDescriptorHeader = 4 + 4 + 4 + 4 + 1;

template <typename T>
void write_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(const char* in) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, in, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string_view split_name(Split s) { return s == Split::Train ? "train" : "test"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  fail(ErrorCode::MalformedFile, "manifest: unknown split '" + s + "'");
}

}  // namespace

// --- descriptor files ------------------------------------------------------

void write_matrix_file(const fs::path& path, const Eigen::Ref<const RowMatrixXd>& m, DType dtype) {
  constexpr auto kMax = static_cast<Index>(std::numeric_limits<std::uint32_t>::max());
  if (m.rows() > kMax || m.cols() > kMax) {
    fail(ErrorCode::InvalidDimension, "descriptor file: matrix too large for the format");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open '" + path.string() + "' for writing");
  out.write(kDescriptorMagic, sizeof(kDescriptorMagic));
  write_le(out, kDescriptorFileVersion);
  write_le(out, static_cast<std::uint32_t>(m.rows()));
  write_le(out, static_cast<std::uint32_t>(m.cols()));
  write_le(out, static_cast<std::uint8_t>(dtype));
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (dtype == DType::Float32) {
        write_le(out, static_cast<float>(m(r, c)));
      } else {
        write_le(out, m(r, c));
      }
    }
  }
  if (!out) fail(ErrorCode::Io, "failed writing '" + path.string() + "'");
}

RowMatrixXd read_matrix_file(const fs::path& path) {
  const std::string bytes = read_all(path);
  const std::string where = "descriptor file '" + path.string() + "'";
  if (bytes.size() < kDescriptorHeader) fail(ErrorCode::TruncatedFile, where + ": too short");
  if (std::memcmp(bytes.data(), kDescriptorMagic, sizeof(kDescriptorMagic)) != 0) {
    fail(ErrorCode::MalformedFile, where + ": bad magic bytes");
  }
  const auto version = read_le<std::uint32_t>(bytes.data() + 4);
  if (version != kDescriptorFileVersion) {
    fail(ErrorCode::VersionMismatch, where + ": unsupported version " + std::to_string(version));
  }
  const auto rows = read_le<std::uint32_t>(bytes.data() + 8);
  const auto cols = read_le<std::uint32_t>(bytes.data() + 12);
  const auto tag = static_cast<std::uint8_t>(bytes[16]);
  if (tag > 1) fail(ErrorCode::MalformedFile, where + ": unknown dtype tag " + std::to_string(tag));
  const std::size_t width = tag == 0 ? sizeof(float) : sizeof(double);
  const std::size_t expected =
      kDescriptorHeader + static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * width;
  if (bytes.size() < expected) fail(ErrorCode::TruncatedFile, where + ": payload is truncated");
  if (bytes.size() > expected) fail(ErrorCode::MalformedFile, where + ": trailing bytes");

  RowMatrixXd m(rows, cols);
  const char* p = bytes.data() + kDescriptorHeader;
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c, p += width) {
      m(r, c) = tag == 0 ? static_cast<double>(read_le<float>(p)) : read_le<double>(p);
    }
  }
  return m;
}

// --- manifests -------------------------------------------------------------

void DatasetManifest::validate() const {
  if (version != 1) {
    fail(ErrorCode::VersionMismatch, "manifest: unsupported version " + std::to_string(version));
  }
  for (const auto& e : entries) {
    if (e.grid_h < 1 || e.grid_w < 1 || e.d0 < 1) {
      fail(ErrorCode::InvalidDimension, "manifest entry '" + e.image_id + "': dimensions must be positive");
    }
    if (e.label && *e.label != 0 && *e.label != 1) {
      fail(ErrorCode::InvalidArgument, "manifest entry '" + e.image_id + "': label must be 0 or 1");
    }
    if (split == Split::Train && e.label.value_or(0) != 0) {
      fail(ErrorCode::InvalidArgument,
           "manifest entry '" + e.image_id + "': training data must be normal (label 0)");
    }
  }
}

nlohmann::json to_json(const DatasetManifest& manifest) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : manifest.entries) {
    nlohmann::json j = {{"path", e.path},     {"image_id", e.image_id}, {"grid_h", e.grid_h},
                        {"grid_w", e.grid_w}, {"d0", e.d0}};
    if (e.label) j["label"] = *e.label;
    entries.push_back(std::move(j));
  }
  return {{"version", manifest.version},
          {"split", std::string(split_name(manifest.split))},
          {"entries", std::move(entries)}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j, fs::path base_dir) {
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  try {
    m.version = j.at("version").get<int>();
    m.split = split_from_string(j.at("split").get<std::string>());
    for (const auto& item : j.at("entries")) {
      ManifestEntry e;
      e.path = item.at("path").get<std::string>();
      e.image_id = item.at("image_id").get<std::string>();
      if (item.contains("label") && !item.at("label").is_null()) e.label = item.at("label").get<int>();
      e.grid_h = item.at("grid_h").get<Index>();
      e.grid_w = item.at("grid_w").get<Index>();
      e.d0 = item.at("d0").get<Index>();
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

DatasetManifest read_manifest(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_all(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, "manifest '" + path.string() + "': " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open '" + path.string() + "' for writing");
  out << to_json(manifest).dump(2) << '\n';
  if (!out) fail(ErrorCode::Io, "failed writing '" + path.string() + "'");
}

DescriptorBlock load_block(const DatasetManifest& manifest, const ManifestEntry& entry) {
  fs::path path(entry.path);
  if (path.is_relative()) path = manifest.base_dir / path;
  if (!fs::exists(path)) fail(ErrorCode::Io, "descriptor file not found: '" + path.string() + "'");

  DescriptorBlock block;
  block.image_id = entry.image_id;
  block.grid_h = entry.grid_h;
  block.grid_w = entry.grid_w;
  block.label = entry.label;
  block.data = read_matrix_file(path);
  if (block.data.rows() != entry.grid_h * entry.grid_w || block.data.cols() != entry.d0) {
    fail(ErrorCode::DimensionMismatch,
         "descriptor file '" + path.string() + "': manifest declares " +
             std::to_string(entry.grid_h * entry.grid_w) + "x" + std::to_string(entry.d0) +
             ", file holds " + std::to_string(block.data.rows()) + "x" +
             std::to_string(block.data.cols()));
  }
  return block;
}

void ManifestBlockSource::for_each(const Visitor& visit) const {
  for (const auto& entry : manifest_.entries) visit(load_block(manifest_, entry));
}

// --- synthetic descriptors -------------------------------------------------

void SynthSpec::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::InvalidArgument, "synth: " + what); };
  if (d0 < 1) bad("d0 must be >= 1");
  if (!eigenvalues.empty() && static_cast<Index>(eigenvalues.size()) != d0) {
    bad("eigenvalue list must have d0 entries");
  }
  for (double ev : eigenvalues) {
    if (!(ev > 0.0) || !std::isfinite(ev)) bad("eigenvalues must be strictly positive");
  }
  if (direction < 0 || direction >= d0) bad("anomaly direction index must lie in [0, d0)");
  if (grid_h < 1 || grid_w < 1) bad("grid dimensions must be positive");
  if (anomaly_h < 1 || anomaly_w < 1 || anomaly_h > grid_h || anomaly_w > grid_w) {
    bad("anomaly sub-grid must fit inside the patch grid");
  }
  if (n_train < 0 || n_test_normal < 0 || n_test_anomalous < 0) bad("image counts must be >= 0");
  if (!std::isfinite(magnitude) || !std::isfinite(ambient_mean)) bad("magnitude and mean must be finite");
}

std::vector<double> SynthSpec::resolved_eigenvalues() const {
  validate();
  return eigenvalues.empty() ? std::vector<double>(static_cast<std::size_t>(d0), 1.0) : eigenvalues;
}

nlohmann::json to_json(const SynthSpec& s) {
  nlohmann::json j = {{"d0", s.d0},
                      {"ambient_mean", s.ambient_mean},
                      {"eigenvalues", s.eigenvalues},
                      {"grid_h", s.grid_h},
                      {"grid_w", s.grid_w},
                      {"n_train", s.n_train},
                      {"n_test_normal", s.n_test_normal},
                      {"n_test_anomalous", s.n_test_anomalous},
                      {"anomaly", {{"direction", s.direction},
                                   {"magnitude", s.magnitude},
                                   {"height", s.anomaly_h},
                                   {"width", s.anomaly_w}}},
                      {"seed", s.seed},
                      {"dtype", s.dtype == DType::Float32 ? "float32" : "float64"}};
  j["rotation_seed"] = s.rotation_seed ? nlohmann::json(*s.rotation_seed) : nlohmann::json(nullptr);
  return j;
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  try {
    s.d0 = j.value("d0", s.d0);
    s.ambient_mean = j.value("ambient_mean", s.ambient_mean);
    if (j.contains("eigenvalues")) s.eigenvalues = j.at("eigenvalues").get<std::vector<double>>();
    if (j.contains("rotation_seed") && !j.at("rotation_seed").is_null()) {
      s.rotation_seed = j.at("rotation_seed").get<std::uint64_t>();
    }
    s.grid_h = j.value("grid_h", s.grid_h);
    s.grid_w = j.value("grid_w", s.grid_w);
    s.n_train = j.value("n_train", s.n_train);
    s.n_test_normal = j.value("n_test_normal", s.n_test_normal);
    s.n_test_anomalous = j.value("n_test_anomalous", s.n_test_anomalous);
    if (j.contains("anomaly")) {
      const auto& a = j.at("anomaly");
      s.direction = a.value("direction", s.direction);
      s.magnitude = a.value("magnitude", s.magnitude);
      s.anomaly_h = a.value("height", s.anomaly_h);
      s.anomaly_w = a.value("width", s.anomaly_w);
    }
    s.seed = j.value("seed", s.seed);
    const std::string dtype = j.value("dtype", std::string("float64"));
    if (dtype == "float32") {
      s.dtype = DType::Float32;
    } else if (dtype == "float64") {
      s.dtype = DType::Float64;
    } else {
      fail(ErrorCode::InvalidArgument, "synth: dtype must be float32 or float64");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, std::string("synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs
/// of R's diagonal folded into Q.
MatrixXd random_rotation(Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  MatrixXd g(d, d);
  for (Index c = 0; c < d; ++c) {
    for (Index r = 0; r < d; ++r) g(r, c) = normal(rng);
  }
  Eigen::HouseholderQR<MatrixXd> qr(g);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(d, d);
  const MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index c = 0; c < d; ++c) {
    if (r(c, c) < 0.0) q.col(c) = -q.col(c);
  }
  return q;
}

std::string numbered(const char* prefix, Index i) {
  std::ostringstream os;
  os << prefix << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

SynthDataset generate_synthetic(const SynthSpec& spec) {
  const std::vector<double> ev = spec.resolved_eigenvalues();
  const Index d = spec.d0;
  const Index patches = spec.grid_h * spec.grid_w;

  SynthDataset out;
  out.rotation = spec.rotation_seed ? random_rotation(d, *spec.rotation_seed) : MatrixXd::Identity(d, d);
  VectorXd scale(d);
  for (Index i = 0; i < d; ++i) scale(i) = std::sqrt(ev[static_cast<std::size_t>(i)]);
  // x = mean + Q diag(sqrt(ev)) g, applied row-wise as g diag(sqrt(ev)) Q^T
  const MatrixXd mix = scale.asDiagonal() * out.rotation.transpose();
  const VectorXd shift =
      spec.magnitude * scale(spec.direction) * out.rotation.col(spec.direction);

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal;
  auto draw = [&](const std::string& id, std::optional<int> label) {
    DescriptorBlock block;
    block.image_id = id;
    block.grid_h = spec.grid_h;
    block.grid_w = spec.grid_w;
    block.label = label;
    RowMatrixXd g(patches, d);
    for (Index r = 0; r < patches; ++r) {
      for (Index c = 0; c < d; ++c) g(r, c) = normal(rng);
    }
    block.data = g * mix;
    block.data.array() += spec.ambient_mean;
    return block;
  };

  for (Index i = 0; i < spec.n_train; ++i) out.train.push_back(draw(numbered("train_", i), 0));
  for (Index i = 0; i < spec.n_test_normal; ++i) out.test.push_back(draw(numbered("good_", i), 0));
  for (Index i = 0; i < spec.n_test_anomalous; ++i) {
    DescriptorBlock block = draw(numbered("anomalous_", i), 1);
    std::uniform_int_distribution<Index> top(0, spec.grid_h - spec.anomaly_h);
    std::uniform_int_distribution<Index> left(0, spec.grid_w - spec.anomaly_w);
    const Index r0 = top(rng);
    const Index c0 = left(rng);
    for (Index r = r0; r < r0 + spec.anomaly_h; ++r) {
      for (Index c = c0; c < c0 + spec.anomaly_w; ++c) {
        block.data.row(r * spec.grid_w + c) += shift.transpose();
      }
    }
    out.test.push_back(std::move(block));
  }
  if (spec.dtype == DType::Float32) {
    auto round_trip = [](std::vector<DescriptorBlock>& blocks) {
      for (auto& b : blocks) b.data = b.data.cast<float>().cast<double>();
    };
    round_trip(out.train);
    round_trip(out.test);
  }
  return out;
}

SynthPaths write_synthetic(const SynthSpec& spec, const fs::path& out_dir) {
  const SynthDataset data = generate_synthetic(spec);
  std::error_code ec;
  fs::create_directories(out_dir / "train", ec);
  if (!ec) fs::create_directories(out_dir / "test", ec);
  if (ec) fail(ErrorCode::Io, "cannot create '" + out_dir.string() + "': " + ec.message());

  auto emit = [&](const std::vector<DescriptorBlock>& blocks, Split split) {
    const std::string sub(split_name(split));
    DatasetManifest manifest;
    manifest.split = split;
    manifest.base_dir = out_dir;
    for (const auto& b : blocks) {
      const std::string rel = sub + "/" + b.image_id + ".mhpc";
      write_matrix_file(out_dir / rel, b.data, spec.dtype);
      manifest.entries.push_back({rel, b.image_id, b.label, b.grid_h, b.grid_w, b.d0()});
    }
    const fs::path path = out_dir / (sub + ".json");
    write_manifest(path, manifest);
    return path;
  };
  SynthPaths paths;
  paths.train_manifest = emit(data.train, Split::Train);
  paths.test_manifest = emit(data.test, Split::Test);
  return paths;
}

}  // namespace mhpc
