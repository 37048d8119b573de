#pragma once

#include "mhpc/core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace testing {

using mhpc::Index;
using mhpc::MatrixXd;
using mhpc::RowMatrixXd;
using mhpc::VectorXd;

inline RowMatrixXd gaussian(Index rows, Index cols, std::uint64_t seed, double scale = 1.0,
                            double shift = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = shift + scale * normal(rng);
  }
  return m;
}

inline RowMatrixXd uniform(Index rows, Index cols, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  RowMatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = u(rng);
  }
  return m;
}

/// Random symmetric positive definite matrix A A^T / k + 0.1 I.
inline MatrixXd random_spd(Index k, std::uint64_t seed) {
  const MatrixXd a = gaussian(k, k, seed);
  return a * a.transpose() / static_cast<double>(k) + 0.1 * MatrixXd::Identity(k, k);
}

// --- oracles ----------------------------------------------------------------

/// Mean by explicit summation over rows.
inline VectorXd oracle_mean(const RowMatrixXd& x) {
  VectorXd mu = VectorXd::Zero(x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) mu(c) += x(r, c);
  }
  return mu / static_cast<double>(x.rows());
}

/// Two-pass scatter sum_r (x_r - mu)(x_r - mu)^T with explicit loops.
inline MatrixXd oracle_scatter(const RowMatrixXd& x) {
  const VectorXd mu = oracle_mean(x);
  MatrixXd s = MatrixXd::Zero(x.cols(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index i = 0; i < x.cols(); ++i) {
      for (Index j = 0; j < x.cols(); ++j) s(i, j) += (x(r, i) - mu(i)) * (x(r, j) - mu(j));
    }
  }
  return s;
}

inline MatrixXd oracle_covariance(const RowMatrixXd& x) {
  return oracle_scatter(x) / static_cast<double>(x.rows() - 1);
}

inline double max_relative_error(const MatrixXd& got, const MatrixXd& want) {
  const double scale = std::max(want.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  return (got - want).cwiseAbs().maxCoeff() / scale;
}

/// Exact squared distance by an explicit loop.
inline double sq_dist(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& b) {
  double s = 0.0;
  for (Index i = 0; i < a.size(); ++i) s += (a(i) - b(i)) * (a(i) - b(i));
  return s;
}

/// All rows sorted by (squared distance, row id).
inline std::vector<std::pair<double, Index>> naive_scan(const RowMatrixXd& bank, const VectorXd& q) {
  std::vector<std::pair<double, Index>> out;
  for (Index r = 0; r < bank.rows(); ++r) out.emplace_back(sq_dist(bank.row(r).transpose(), q), r);
  std::sort(out.begin(), out.end());
  return out;
}

/// max_x min_{c in centers} ||x - c|| by explicit loops.
inline double oracle_radius(const RowMatrixXd& points, const RowMatrixXd& centers) {
  double worst = 0.0;
  for (Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Index c = 0; c < centers.rows(); ++c) {
      best = std::min(best, sq_dist(points.row(i).transpose(), centers.row(c).transpose()));
    }
    worst = std::max(worst, best);
  }
  return std::sqrt(worst);
}

/// Optimal k-center radius over every K-subset of the points.
inline double brute_force_kcenter(const RowMatrixXd& points, Index k) {
  const Index n = points.rows();
  std::vector<bool> pick(static_cast<std::size_t>(n), false);
  std::fill(pick.begin(), pick.begin() + std::min(k, n), true);
  double best = std::numeric_limits<double>::infinity();
  do {
    RowMatrixXd centers(std::min(k, n), points.cols());
    Index row = 0;
    for (Index i = 0; i < n; ++i) {
      if (pick[static_cast<std::size_t>(i)]) centers.row(row++) = points.row(i);
    }
    best = std::min(best, oracle_radius(points, centers));
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return best;
}

/// Pairwise AUROC: P(score_pos > score_neg) + 0.5 P(tie), as an exact fraction.
inline double pairwise_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  std::int64_t twice_wins = 0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j]) twice_wins += 2;
      if (s[i] == s[j]) twice_wins += 1;
    }
  }
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(pairs));
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mhpc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
