// Detector state container:
//
//   "MHPCSTAT"            8 bytes magic
//   u32 header_length     little-endian
//   u64 total_size        little-endian, whole file including trailer
//   header                JSON text: format_version, config, metadata, segment table
//   segments              raw little-endian float64, row-major, in table order
//   u64 checksum          FNV-1a 64 over every preceding byte
#include "mhpc/detector.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace mhpc {

namespace {

constexpr char kMagic[8] = {'M', 'H', 'P', 'C', 'S', 'T', 'A', 'T'};
constexpr std::size_t kPreamble = 8 + 4 + 8;
constexpr std::size_t kTrailer = 8;

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::string_view in, std::size_t offset) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

struct Segment {
  std::string name;
  Index rows = 0;
  Index cols = 0;
};

void append_matrix(std::string& out, const Eigen::Ref<const RowMatrixXd>& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) put_le(out, m(r, c));
  }
}

RowMatrixXd read_matrix(std::string_view in, std::size_t offset, Index rows, Index cols) {
  RowMatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      m(r, c) = get_le<double>(in, offset);
      offset += sizeof(double);
    }
  }
  return m;
}

std::uint64_t checksum(std::string_view bytes) {
  Fnv1a h;
  h.update(bytes.data(), bytes.size());
  return h.digest();
}

}  // namespace

std::string serialize(const DetectorState& state) {
  const std::vector<std::pair<Segment, RowMatrixXd>> segments = {
      {{"reducer.w", state.reducer.w.rows(), state.reducer.w.cols()}, state.reducer.w},
      {{"reducer.u_bar", 1, state.reducer.u_bar.size()}, state.reducer.u_bar.transpose()},
      {{"reducer.explained_variance", 1, state.reducer.explained_variance.size()},
       state.reducer.explained_variance.transpose()},
      {{"model.mu", 1, state.model.mu.size()}, state.model.mu.transpose()},
      {{"model.sigma_reg", state.model.sigma_reg.rows(), state.model.sigma_reg.cols()},
       state.model.sigma_reg},
      {{"model.lower", state.model.lower.rows(), state.model.lower.cols()}, state.model.lower},
      {{"bank.vectors", state.bank.vectors.rows(), state.bank.vectors.cols()}, state.bank.vectors},
  };

  nlohmann::json header;
  header["format_version"] = state.format_version;
  header["config"] = to_json(state.config);
  header["model"] = {{"delta", state.model.delta},
                     {"policy", std::string(to_string(state.model.policy.kind))},
                     {"lambda", state.model.policy.lambda},
                     {"eps_rel", state.model.eps_rel}};
  header["bank"] = {{"constructor", std::string(to_string(state.bank.constructor))},
                    {"budget", state.bank.budget},
                    {"local_budget", state.bank.local_budget},
                    {"observed_points", state.bank.observed_points},
                    {"underfilled", state.bank.underfilled}};
  nlohmann::json table = nlohmann::json::array();
  std::string payload;
  for (const auto& [seg, m] : segments) {
    std::string bytes;
    append_matrix(bytes, m);
    Fnv1a h;
    h.update(bytes.data(), bytes.size());
    table.push_back({{"name", seg.name}, {"rows", seg.rows}, {"cols", seg.cols},
                     {"fnv1a64", h.digest()}});
    payload += bytes;
  }
  header["segments"] = table;
  const std::string header_text = header.dump();

  const std::uint64_t total = kPreamble + header_text.size() + payload.size() + kTrailer;
  std::string out;
  out.reserve(total);
  out.append(kMagic, sizeof(kMagic));
  put_le(out, static_cast<std::uint32_t>(header_text.size()));
  put_le(out, total);
  out += header_text;
  out += payload;
  put_le(out, checksum(out));
  return out;
}

DetectorState deserialize(std::string_view bytes) {
  if (bytes.size() < kPreamble + kTrailer) {
    fail(ErrorCode::TruncatedFile, "state: file too short for a detector state");
  }
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCode::MalformedFile, "state: bad magic bytes");
  }
  const auto header_len = get_le<std::uint32_t>(bytes, 8);
  const auto total = get_le<std::uint64_t>(bytes, 12);
  if (bytes.size() < total) {
    fail(ErrorCode::TruncatedFile, "state: file has " + std::to_string(bytes.size()) +
                                       " bytes, header declares " + std::to_string(total));
  }
  if (bytes.size() != total || kPreamble + header_len + kTrailer > total) {
    fail(ErrorCode::MalformedFile, "state: declared sizes are inconsistent with the file");
  }
  if (checksum(bytes.substr(0, total - kTrailer)) != get_le<std::uint64_t>(bytes, total - kTrailer)) {
    fail(ErrorCode::ChecksumFailure, "state: checksum mismatch");
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(kPreamble, header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, std::string("state: header is not valid JSON: ") + e.what());
  }
  const int version = header.value("format_version", -1);
  if (version != kFormatVersion) {
    fail(ErrorCode::VersionMismatch, "state: format_version " + std::to_string(version) +
                                         " is not supported (expected " +
                                         std::to_string(kFormatVersion) + ")");
  }

  DetectorState state;
  try {
    state.format_version = version;
    state.config = config_from_json(header.at("config"));

    std::size_t offset = kPreamble + header_len;
    std::map<std::string, RowMatrixXd> mats;
    for (const auto& seg : header.at("segments")) {
      const auto rows = seg.at("rows").get<Index>();
      const auto cols = seg.at("cols").get<Index>();
      const std::size_t size = static_cast<std::size_t>(rows * cols) * sizeof(double);
      if (rows < 0 || cols < 0 || offset + size > total - kTrailer) {
        fail(ErrorCode::MalformedFile, "state: segment exceeds the file");
      }
      Fnv1a h;
      h.update(bytes.data() + offset, size);
      if (h.digest() != seg.at("fnv1a64").get<std::uint64_t>()) {
        fail(ErrorCode::ChecksumFailure, "state: segment checksum mismatch");
      }
      mats[seg.at("name").get<std::string>()] = read_matrix(bytes, offset, rows, cols);
      offset += size;
    }
    if (offset != total - kTrailer) fail(ErrorCode::MalformedFile, "state: trailing bytes");

    state.reducer.w = mats.at("reducer.w");
    state.reducer.u_bar = mats.at("reducer.u_bar").transpose();
    state.reducer.explained_variance = mats.at("reducer.explained_variance").transpose();
    state.model.mu = mats.at("model.mu").transpose();
    state.model.sigma_reg = mats.at("model.sigma_reg");
    state.model.lower = mats.at("model.lower");
    const auto& model = header.at("model");
    state.model.delta = model.at("delta").get<double>();
    state.model.policy.kind = shrinkage_kind_from_string(model.at("policy").get<std::string>());
    state.model.policy.lambda = model.at("lambda").get<double>();
    state.model.eps_rel = model.at("eps_rel").get<double>();
    state.bank.vectors = mats.at("bank.vectors");
    const auto& bank = header.at("bank");
    state.bank.constructor = constructor_kind_from_string(bank.at("constructor").get<std::string>());
    state.bank.budget = bank.at("budget").get<Index>();
    state.bank.local_budget = bank.at("local_budget").get<Index>();
    state.bank.observed_points = bank.at("observed_points").get<bool>();
    state.bank.underfilled = bank.at("underfilled").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, std::string("state: bad header: ") + e.what());
  } catch (const std::out_of_range&) {
    fail(ErrorCode::MalformedFile, "state: missing segment");
  }

  const Index k = state.reducer.output_dim();
  if (state.model.dim() != k || state.model.lower.rows() != k || state.bank.dim() != k ||
      state.reducer.u_bar.size() != state.reducer.input_dim()) {
    fail(ErrorCode::MalformedFile, "state: component dimensions disagree");
  }
  state.index = FlatIndex(state.bank);
  return state;
}

void save(const DetectorState& state, const std::filesystem::path& destination) {
  const std::string bytes = serialize(state);
  std::ofstream out(destination, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open '" + destination.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "failed writing '" + destination.string() + "'");
}

DetectorState load(const std::filesystem::path& source) {
  std::ifstream in(source, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + source.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize(buffer.str());
}

}  // namespace mhpc
