#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mhpc {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using RowMatrixXd = RowMatrix<double>;
using MatrixXd = Eigen::MatrixXd;
using VectorXd = Eigen::VectorXd;

/// Failure categories shared by every module. The CLI prints the name of the
/// code in its structured error record.
enum class ErrorCode {
  InvalidDimension,
  DimensionMismatch,
  EmptyBatch,
  EmptyInput,
  InvalidArgument,
  InsufficientSamples,
  AsymmetricInput,
  NumericalFailure,
  NotFactorizable,
  RankDeficientSeed,
  UnfittedState,
  UnderfilledBank,
  NonReiterableDataset,
  VersionMismatch,
  ChecksumFailure,
  TruncatedFile,
  MalformedFile,
  UndefinedAUROC,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require_cols(Index actual, Index expected, const char* what) {
  if (actual != expected) {
    fail(ErrorCode::DimensionMismatch, std::string(what) + ": expected dimension " +
                                           std::to_string(expected) + ", got " +
                                           std::to_string(actual));
  }
}

/// 64-bit FNV-1a, used for file checksums and traversal fingerprints.
class Fnv1a {
 public:
  void update(const void* data, std::size_t size) noexcept {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      hash_ ^= bytes[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view text) noexcept { update(text.data(), text.size()); }
  template <typename T>
  void update_value(const T& value) noexcept {
    update(&value, sizeof(T));
  }
  [[nodiscard]] std::uint64_t digest() const noexcept { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace mhpc
