#include "mhpc/reducer.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace mhpc {

ReducerFit reducer_init(Index d0, Index k_max) {
  if (d0 < 1) fail(ErrorCode::InvalidDimension, "reducer_init: d0 must be >= 1");
  if (k_max < 0) fail(ErrorCode::InvalidArgument, "reducer_init: k_max must be >= 0");
  ReducerFit fit;
  fit.d0 = d0;
  fit.k_max = k_max == 0 ? std::min(d0, kDefaultMaxComponents) : std::min(d0, k_max);
  fit.mean = VectorXd::Zero(d0);
  return fit;
}

namespace {

// Largest-magnitude entry of every row made non-negative (first index wins ties).
void fix_signs(RowMatrixXd& rows) {
  for (Index i = 0; i < rows.rows(); ++i) {
    Index arg = 0;
    rows.row(i).cwiseAbs().maxCoeff(&arg);
    if (rows(i, arg) < 0.0) rows.row(i) *= -1.0;
  }
}

}  // namespace

void partial_fit(ReducerFit& fit, const Eigen::Ref<const RowMatrixXd>& batch) {
  if (fit.d0 < 1) fail(ErrorCode::UnfittedState, "partial_fit: reducer fit is not initialised");
  require_cols(batch.cols(), fit.d0, "partial_fit");
  const Index nb = batch.rows();
  if (nb == 0) fail(ErrorCode::EmptyBatch, "partial_fit: empty batch");
  if (fit.seen == 0 && nb < fit.k_max) {
    fail(ErrorCode::RankDeficientSeed, "partial_fit: first batch has " + std::to_string(nb) +
                                           " rows, fewer than k_max=" +
                                           std::to_string(fit.k_max));
  }

  const VectorXd batch_mean = batch.colwise().mean().transpose();
  const double n_prev = static_cast<double>(fit.seen);
  const double n_total = n_prev + static_cast<double>(nb);

  const Index prev_rows = fit.components.rows();
  const bool has_history = fit.seen > 0;
  RowMatrixXd stack(prev_rows + nb + (has_history ? 1 : 0), fit.d0);
  if (prev_rows > 0) {
    stack.topRows(prev_rows) = fit.singular_values.asDiagonal() * fit.components;
  }
  stack.middleRows(prev_rows, nb) = batch.rowwise() - batch_mean.transpose();
  if (has_history) {
    const double scale = std::sqrt(n_prev * static_cast<double>(nb) / n_total);
    stack.row(prev_rows + nb) = scale * (fit.mean - batch_mean).transpose();
  }

  Eigen::BDCSVD<MatrixXd> svd(MatrixXd(stack), Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) {
    fail(ErrorCode::NumericalFailure, "partial_fit: SVD did not converge");
  }
  const Index keep = std::min<Index>(fit.k_max, svd.singularValues().size());
  fit.components = svd.matrixV().leftCols(keep).transpose();
  fix_signs(fit.components);
  fit.singular_values = svd.singularValues().head(keep);
  fit.mean = fit.mean + (static_cast<double>(nb) / n_total) * (batch_mean - fit.mean);
  fit.seen += nb;
}

Index retained_dimension(const Eigen::Ref<const VectorXd>& explained_variance, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) fail(ErrorCode::InvalidArgument, "rho must lie in (0, 1]");
  if (explained_variance.size() == 0) fail(ErrorCode::UnfittedState, "no fitted components");
  const double peak = explained_variance.maxCoeff();
  Index nonzero = 0;
  double total = 0.0;
  for (Index i = 0; i < explained_variance.size(); ++i) {
    if (explained_variance[i] > 1e-12 * peak) {
      total += explained_variance[i];
      nonzero = i + 1;
    }
  }
  if (nonzero == 0) return 1;  // degenerate: no variance at all
  const double target = rho * total - 1e-12 * total;
  double cum = 0.0;
  for (Index q = 0; q < nonzero; ++q) {
    cum += explained_variance[q];
    if (cum >= target) return q + 1;
  }
  return nonzero;
}

Reducer finalize(const ReducerFit& fit, double rho) {
  if (fit.seen < 2 || fit.components.rows() == 0) {
    fail(ErrorCode::UnfittedState, "finalize: reducer has seen fewer than 2 samples");
  }
  const VectorXd nu =
      fit.singular_values.array().square() / static_cast<double>(fit.seen - 1);
  const Index k = retained_dimension(nu, rho);
  Reducer r;
  r.w = fit.components.topRows(k).transpose();
  r.u_bar = fit.mean;
  r.explained_variance = nu.head(k);
  return r;
}

namespace {

void project_row(const Reducer& r, const Eigen::Ref<const VectorXd>& u, Eigen::Ref<VectorXd> out) {
  out.noalias() = r.w.transpose() * (u - r.u_bar);
}

}  // namespace

VectorXd transform(const Reducer& reducer, const Eigen::Ref<const VectorXd>& u) {
  require_cols(u.size(), reducer.input_dim(), "transform");
  VectorXd out(reducer.output_dim());
  project_row(reducer, u, out);
  return out;
}

RowMatrixXd transform_batch(const Reducer& reducer, const Eigen::Ref<const RowMatrixXd>& u) {
  require_cols(u.cols(), reducer.input_dim(), "transform_batch");
  RowMatrixXd out(u.rows(), reducer.output_dim());
  VectorXd in(u.cols());
  VectorXd row(reducer.output_dim());
  for (Index i = 0; i < u.rows(); ++i) {
    in = u.row(i).transpose();
    project_row(reducer, in, row);
    out.row(i) = row.transpose();
  }
  return out;
}

}  // namespace mhpc
