#pragma once

#include "mhpc/core.hpp"

#include <cstdint>

namespace mhpc {

/// Running (count, mean, unnormalised second central moment) triple.
///
/// States are combined with the parallel Welford rule, so per-worker states
/// can be accumulated independently and merged afterwards. Accumulation is
/// always in double precision regardless of the input scalar type. A single
/// state must not be mutated concurrently.
struct MomentState {
  std::int64_t n = 0;
  VectorXd mu;
  MatrixXd m2;

  [[nodiscard]] Index dim() const noexcept { return mu.size(); }
};

/// Zero state of dimension k. Throws InvalidDimension for k == 0.
MomentState moments_init(Index k);

/// Parallel Welford combination of two states. Either operand may be empty.
MomentState merge(const MomentState& a, const MomentState& b);

/// Two-pass summary of a single in-memory batch.
template <typename Derived>
MomentState batch_summary(const Eigen::MatrixBase<Derived>& batch) {
  if (batch.rows() == 0) fail(ErrorCode::EmptyBatch, "batch_summary: empty batch");
  const MatrixXd x = batch.template cast<double>();
  MomentState s;
  s.n = x.rows();
  s.mu = x.colwise().mean().transpose();
  const MatrixXd centred = x.rowwise() - s.mu.transpose();
  s.m2 = centred.transpose() * centred;
  s.m2 = 0.5 * (s.m2 + s.m2.transpose()).eval();
  return s;
}

/// Fold a batch (n_b x k, any floating scalar) into the state.
template <typename Derived>
MomentState update_batch(const MomentState& state, const Eigen::MatrixBase<Derived>& batch) {
  require_cols(batch.cols(), state.dim(), "update_batch");
  if (batch.rows() == 0) fail(ErrorCode::EmptyBatch, "update_batch: empty batch");
  return merge(state, batch_summary(batch));
}

/// Unbiased covariance M2 / (n - 1). Throws InsufficientSamples when n < 2.
MatrixXd finalize_covariance(const MomentState& state);

}  // namespace mhpc
