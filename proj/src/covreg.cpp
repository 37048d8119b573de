#include "mhpc/covreg.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace mhpc {

std::string_view to_string(ShrinkageKind kind) noexcept {
  switch (kind) {
    case ShrinkageKind::Fixed: return "fixed";
    case ShrinkageKind::OAS: return "oas";
    case ShrinkageKind::RBLW: return "rblw";
    case ShrinkageKind::JitterOnly: return "jitter_only";
  }
  return "fixed";
}

ShrinkageKind shrinkage_kind_from_string(std::string_view name) {
  if (name == "fixed") return ShrinkageKind::Fixed;
  if (name == "oas") return ShrinkageKind::OAS;
  if (name == "rblw") return ShrinkageKind::RBLW;
  if (name == "jitter_only") return ShrinkageKind::JitterOnly;
  fail(ErrorCode::InvalidArgument, "unknown shrinkage policy '" + std::string(name) + "'");
}

CovarianceModel CovarianceModel::identity(Index k) {
  CovarianceModel m;
  m.mu = VectorXd::Zero(k);
  m.sigma_reg = MatrixXd::Identity(k, k);
  m.lower = MatrixXd::Identity(k, k);
  m.policy = ShrinkagePolicy::jitter_only();
  return m;
}

namespace {

void require_symmetric(const MatrixXd& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    fail(ErrorCode::InvalidDimension, std::string(what) + ": expected a nonempty square matrix");
  }
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    fail(ErrorCode::AsymmetricInput, std::string(what) + ": input is not symmetric");
  }
}

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

double shrinkage_intensity(const MatrixXd& sigma_hat, const ShrinkagePolicy& policy,
                           std::int64_t n) {
  const double d = static_cast<double>(sigma_hat.rows());
  switch (policy.kind) {
    case ShrinkageKind::Fixed:
      if (!(policy.lambda >= 0.0 && policy.lambda <= 1.0)) {
        fail(ErrorCode::InvalidArgument, "shrink: fixed lambda must lie in [0, 1]");
      }
      return policy.lambda;
    case ShrinkageKind::JitterOnly:
      return 0.0;
    case ShrinkageKind::OAS:
    case ShrinkageKind::RBLW: {
      if (n < 2) fail(ErrorCode::InsufficientSamples, "shrink: analytic shrinkage needs n >= 2");
      const double nn = static_cast<double>(n);
      const double tr = sigma_hat.trace();
      const double tr2 = sigma_hat.squaredNorm();  // tr(S^2) for symmetric S
      const double spread = tr2 - tr * tr / d;
      double num = 0.0;
      double den = 0.0;
      if (policy.kind == ShrinkageKind::OAS) {
        num = (1.0 - 2.0 / d) * tr2 + tr * tr;
        den = (nn + 1.0 - 2.0 / d) * spread;
      } else {
        num = ((nn - 2.0) / nn) * tr2 + tr * tr;
        den = (nn + 2.0) * spread;
      }
      // spread vanishes when sigma_hat is proportional to I
      if (!(den > 0.0)) return 1.0;
      return clip01(num / den);
    }
  }
  return 0.0;
}

MatrixXd shrink(const MatrixXd& sigma_hat, const ShrinkagePolicy& policy, std::int64_t n) {
  require_symmetric(sigma_hat, "shrink");
  const double lambda = shrinkage_intensity(sigma_hat, policy, n);
  if (policy.kind == ShrinkageKind::JitterOnly) return sigma_hat;
  const Index d = sigma_hat.rows();
  const double sigma_bar = sigma_hat.trace() / static_cast<double>(d);
  MatrixXd out = (1.0 - lambda) * sigma_hat;
  out.diagonal().array() += lambda * sigma_bar;
  return out;
}

MatrixXd eigenvalue_floor(const MatrixXd& sigma, double eps_rel) {
  if (sigma.rows() != sigma.cols() || sigma.rows() == 0) {
    fail(ErrorCode::InvalidDimension, "eigenvalue_floor: expected a nonempty square matrix");
  }
  if (!(eps_rel >= 0.0)) fail(ErrorCode::InvalidArgument, "eigenvalue_floor: eps_rel must be >= 0");
  const MatrixXd sym = 0.5 * (sigma + sigma.transpose());
  if (eps_rel == 0.0) return sym;

  const double sigma_bar = sym.trace() / static_cast<double>(sym.rows());
  const double eps = eps_rel * std::max(std::abs(sigma_bar), 1e-12);

  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) {
    fail(ErrorCode::NumericalFailure, "eigenvalue_floor: eigendecomposition did not converge");
  }
  const VectorXd& gamma = solver.eigenvalues();
  if (gamma.minCoeff() >= eps) return sym;

  const VectorXd floored = gamma.cwiseMax(eps);
  const MatrixXd& v = solver.eigenvectors();
  MatrixXd out = v * floored.asDiagonal() * v.transpose();
  return 0.5 * (out + out.transpose());
}

CholeskyResult jittered_cholesky(const MatrixXd& sigma, const JitterSchedule& schedule) {
  if (!(schedule.delta_min > 0.0 && schedule.delta_min < schedule.delta_max &&
        schedule.growth > 1.0)) {
    fail(ErrorCode::InvalidArgument,
         "jittered_cholesky: need 0 < delta_min < delta_max and growth > 1");
  }
  require_symmetric(sigma, "jittered_cholesky");
  const Index k = sigma.rows();

  auto attempt = [&](double delta, CholeskyResult& out) {
    MatrixXd shifted = sigma;
    shifted.diagonal().array() += delta;
    Eigen::LLT<MatrixXd> llt(shifted);
    if (llt.info() != Eigen::Success) return false;
    MatrixXd lower = llt.matrixL();
    const auto diag = lower.diagonal();
    if (!diag.allFinite() || (diag.array() <= 0.0).any()) return false;
    out.lower = std::move(lower);
    out.delta = delta;
    return true;
  };

  CholeskyResult result;
  if (attempt(0.0, result)) return result;
  // relative slack so that e.g. 1e-12 * 10^12 still reaches delta_max = 1
  const double limit = schedule.delta_max * (1.0 + 1e-9);
  for (int step = 0;; ++step) {
    const double delta = schedule.delta_min * std::pow(schedule.growth, step);
    if (delta > limit) break;
    if (attempt(delta, result)) return result;
  }
  fail(ErrorCode::NotFactorizable, "jittered_cholesky: no jitter up to delta_max made a " +
                                       std::to_string(k) + "x" + std::to_string(k) +
                                       " matrix positive definite");
}

CovarianceModel build_covariance_model(const VectorXd& mu, const MatrixXd& sigma_hat,
                                       std::int64_t n, const ShrinkagePolicy& policy,
                                       double eps_rel, const JitterSchedule& schedule) {
  require_cols(sigma_hat.rows(), mu.size(), "build_covariance_model");
  CovarianceModel model;
  model.mu = mu;
  model.policy = policy;
  model.eps_rel = eps_rel;
  model.sigma_reg = eigenvalue_floor(shrink(sigma_hat, policy, n), eps_rel);
  CholeskyResult chol = jittered_cholesky(model.sigma_reg, schedule);
  model.lower = std::move(chol.lower);
  model.delta = chol.delta;
  return model;
}

namespace {

// All whitening goes through this one routine so single and batched results agree bitwise.
void forward_solve_in_place(const MatrixXd& lower, Eigen::Ref<VectorXd> rhs) {
  lower.triangularView<Eigen::Lower>().solveInPlace(rhs);
}

}  // namespace

VectorXd whiten(const CovarianceModel& model, const Eigen::Ref<const VectorXd>& x) {
  require_cols(x.size(), model.dim(), "whiten");
  VectorXd z = x - model.mu;
  forward_solve_in_place(model.lower, z);
  return z;
}

RowMatrixXd whiten_batch(const CovarianceModel& model, const Eigen::Ref<const RowMatrixXd>& x) {
  require_cols(x.cols(), model.dim(), "whiten_batch");
  RowMatrixXd out(x.rows(), x.cols());
  VectorXd row(x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    row = x.row(i).transpose() - model.mu;
    forward_solve_in_place(model.lower, row);
    out.row(i) = row.transpose();
  }
  return out;
}

}  // namespace mhpc
