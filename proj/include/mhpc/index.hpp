#pragma once

#include "mhpc/core.hpp"

#include <vector>

namespace mhpc {

struct MemoryBank;

struct SearchResult {
  std::vector<double> distances;  // squared L2, ascending
  std::vector<Index> ids;
};

/// Exact flat index over the bank rows. Immutable after construction.
///
/// Distances are evaluated as sum((a - b)^2) over the row difference, so a
/// bit-identical query and row give exactly 0 and a batched search is
/// bitwise equal to the per-row search.
class FlatIndex {
 public:
  FlatIndex() = default;
  explicit FlatIndex(const RowMatrixXd& vectors);
  explicit FlatIndex(const MemoryBank& bank);

  [[nodiscard]] Index size() const noexcept { return vectors_.rows(); }
  [[nodiscard]] Index dim() const noexcept { return vectors_.cols(); }
  [[nodiscard]] const RowMatrixXd& vectors() const noexcept { return vectors_; }

  /// Top-j nearest rows (ties to the lower row index). j > size() yields size() results.
  [[nodiscard]] SearchResult search(const Eigen::Ref<const VectorXd>& query, Index j) const;
  [[nodiscard]] std::vector<SearchResult> search_batch(const Eigen::Ref<const RowMatrixXd>& queries,
                                                       Index j) const;

  /// Squared distance from query to every row.
  [[nodiscard]] VectorXd distances(const Eigen::Ref<const VectorXd>& query) const;
  /// Squared distance from query to one row, same arithmetic as distances().
  [[nodiscard]] double distance(const Eigen::Ref<const VectorXd>& query, Index row) const;

 private:
  RowMatrixXd vectors_;
};

}  // namespace mhpc
