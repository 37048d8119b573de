#include "mhpc/core.hpp"

namespace mhpc {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidDimension: return "InvalidDimension";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::AsymmetricInput: return "AsymmetricInput";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::NotFactorizable: return "NotFactorizable";
    case ErrorCode::RankDeficientSeed: return "RankDeficientSeed";
    case ErrorCode::UnfittedState: return "UnfittedState";
    case ErrorCode::UnderfilledBank: return "UnderfilledBank";
    case ErrorCode::NonReiterableDataset: return "NonReiterableDataset";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ChecksumFailure: return "ChecksumFailure";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::UndefinedAUROC: return "UndefinedAUROC";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace mhpc
