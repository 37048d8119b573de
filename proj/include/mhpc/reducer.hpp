#pragma once

#include "mhpc/core.hpp"

#include <cstdint>

namespace mhpc {

/// Running state of a mini-batch incremental PCA.
///
/// Each partial fit stacks the singular-value-scaled previous basis, the
/// batch centred on its own mean, and one mean-correction row, then keeps the
/// top k_max right singular vectors of that stack.
struct ReducerFit {
  Index d0 = 0;
  Index k_max = 0;
  std::int64_t seen = 0;
  VectorXd mean;
  RowMatrixXd components;  // rows are orthonormal basis vectors
  VectorXd singular_values;
};

/// Centred projection R(u) = W^T (u - u_bar). Immutable; safe for concurrent reads.
struct Reducer {
  MatrixXd w;  // d0 x k, orthonormal columns
  VectorXd u_bar;
  VectorXd explained_variance;  // length k, non-increasing

  [[nodiscard]] Index input_dim() const noexcept { return w.rows(); }
  [[nodiscard]] Index output_dim() const noexcept { return w.cols(); }
};

inline constexpr Index kDefaultMaxComponents = 512;

/// Empty fit. k_max == 0 selects min(d0, 512).
ReducerFit reducer_init(Index d0, Index k_max = 0);

/// Fold one mini-batch (n_b x d0) into the fit. The first batch needs at
/// least k_max rows, otherwise RankDeficientSeed.
void partial_fit(ReducerFit& fit, const Eigen::Ref<const RowMatrixXd>& batch);

/// Keep the shortest prefix of fitted components whose explained-variance
/// fraction reaches rho.
Reducer finalize(const ReducerFit& fit, double rho = 0.99);

/// Smallest q with sum_{i<=q} nu_i >= rho * sum nu, ignoring zero components.
Index retained_dimension(const Eigen::Ref<const VectorXd>& explained_variance, double rho);

VectorXd transform(const Reducer& reducer, const Eigen::Ref<const VectorXd>& u);
RowMatrixXd transform_batch(const Reducer& reducer, const Eigen::Ref<const RowMatrixXd>& u);

}  // namespace mhpc
