#pragma once

#include "mhpc/core.hpp"

#include <cstdint>
#include <string>

namespace mhpc {

enum class ShrinkageKind { Fixed, OAS, RBLW, JitterOnly };

std::string_view to_string(ShrinkageKind kind) noexcept;
ShrinkageKind shrinkage_kind_from_string(std::string_view name);

struct ShrinkagePolicy {
  ShrinkageKind kind = ShrinkageKind::Fixed;
  double lambda = 0.07;  // used by Fixed only

  static ShrinkagePolicy fixed(double lambda) { return {ShrinkageKind::Fixed, lambda}; }
  static ShrinkagePolicy oas() { return {ShrinkageKind::OAS, 0.0}; }
  static ShrinkagePolicy rblw() { return {ShrinkageKind::RBLW, 0.0}; }
  static ShrinkagePolicy jitter_only() { return {ShrinkageKind::JitterOnly, 0.0}; }
};

struct JitterSchedule {
  double delta_min = 1e-12;
  double growth = 10.0;
  double delta_max = 1.0;
};

/// Regularised covariance together with its Cholesky factor: the whitening
/// operator z = L^{-1}(x - mu). Immutable once built; safe for concurrent reads.
struct CovarianceModel {
  VectorXd mu;
  MatrixXd sigma_reg;
  MatrixXd lower;  // L with L L^T = sigma_reg + delta I
  double delta = 0.0;
  ShrinkagePolicy policy;
  double eps_rel = 0.0;

  [[nodiscard]] Index dim() const noexcept { return mu.size(); }

  /// mu = 0, L = I. Used by the Euclidean control.
  static CovarianceModel identity(Index k);
};

/// Shrinkage intensity the policy would apply to sigma_hat (n samples).
double shrinkage_intensity(const MatrixXd& sigma_hat, const ShrinkagePolicy& policy,
                           std::int64_t n);

/// (1 - lambda) sigma_hat + lambda * (tr(sigma_hat)/d) I.
MatrixXd shrink(const MatrixXd& sigma_hat, const ShrinkagePolicy& policy, std::int64_t n);

/// Clamp eigenvalues from below at eps_rel * max(|tr/d|, 1e-12).
MatrixXd eigenvalue_floor(const MatrixXd& sigma, double eps_rel);

struct CholeskyResult {
  MatrixXd lower;
  double delta = 0.0;
};

/// Cholesky of sigma + delta I for delta in {0, d_min, d_min*m, ...} up to d_max.
CholeskyResult jittered_cholesky(const MatrixXd& sigma, const JitterSchedule& schedule = {});

/// shrink -> floor -> jittered Cholesky.
CovarianceModel build_covariance_model(const VectorXd& mu, const MatrixXd& sigma_hat,
                                       std::int64_t n, const ShrinkagePolicy& policy,
                                       double eps_rel, const JitterSchedule& schedule = {});

VectorXd whiten(const CovarianceModel& model, const Eigen::Ref<const VectorXd>& x);

/// Row-wise whiten; every row is bit-identical to whiten() on that row.
RowMatrixXd whiten_batch(const CovarianceModel& model, const Eigen::Ref<const RowMatrixXd>& x);

}  // namespace mhpc
