#include "mhpc/moments.hpp"

namespace mhpc {

MomentState moments_init(Index k) {
  if (k < 1) fail(ErrorCode::InvalidDimension, "moments_init: dimension must be >= 1");
  MomentState s;
  s.mu = VectorXd::Zero(k);
  s.m2 = MatrixXd::Zero(k, k);
  return s;
}

MomentState merge(const MomentState& a, const MomentState& b) {
  require_cols(b.dim(), a.dim(), "merge");
  if (b.n == 0) return a;
  if (a.n == 0) return b;

  const double na = static_cast<double>(a.n);
  const double nb = static_cast<double>(b.n);
  const double n = na + nb;
  const VectorXd delta = b.mu - a.mu;

  MomentState out;
  out.n = a.n + b.n;
  out.mu = a.mu + (nb / n) * delta;
  out.m2 = a.m2 + b.m2 + (na * nb / n) * (delta * delta.transpose());
  out.m2 = 0.5 * (out.m2 + out.m2.transpose()).eval();
  return out;
}

MatrixXd finalize_covariance(const MomentState& state) {
  if (state.n < 2) {
    fail(ErrorCode::InsufficientSamples,
         "finalize_covariance: need at least 2 samples, have " + std::to_string(state.n));
  }
  MatrixXd cov = state.m2 / static_cast<double>(state.n - 1);
  return 0.5 * (cov + cov.transpose());
}

}  // namespace mhpc
