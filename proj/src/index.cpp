#include "mhpc/index.hpp"

#include "mhpc/bank.hpp"

#include <algorithm>
#include <numeric>

namespace mhpc {

FlatIndex::FlatIndex(const RowMatrixXd& vectors) : vectors_(vectors) {
  if (vectors_.rows() == 0) fail(ErrorCode::EmptyInput, "FlatIndex: empty bank");
}

FlatIndex::FlatIndex(const MemoryBank& bank) : FlatIndex(bank.vectors) {}

double FlatIndex::distance(const Eigen::Ref<const VectorXd>& query, Index row) const {
  double acc = 0.0;
  for (Index c = 0; c < vectors_.cols(); ++c) {
    const double d = vectors_(row, c) - query[c];
    acc += d * d;
  }
  return acc;
}

VectorXd FlatIndex::distances(const Eigen::Ref<const VectorXd>& query) const {
  require_cols(query.size(), dim(), "FlatIndex::search");
  VectorXd out(size());
  for (Index r = 0; r < size(); ++r) out[r] = distance(query, r);
  return out;
}

SearchResult FlatIndex::search(const Eigen::Ref<const VectorXd>& query, Index j) const {
  if (j < 1) fail(ErrorCode::InvalidArgument, "FlatIndex::search: j must be >= 1");
  const VectorXd d = distances(query);
  const Index take = std::min(j, size());
  std::vector<Index> order(static_cast<std::size_t>(size()));
  std::iota(order.begin(), order.end(), Index{0});
  auto closer = [&](Index a, Index b) { return d[a] < d[b] || (d[a] == d[b] && a < b); };
  std::partial_sort(order.begin(), order.begin() + take, order.end(), closer);
  SearchResult out;
  out.ids.assign(order.begin(), order.begin() + take);
  out.distances.reserve(static_cast<std::size_t>(take));
  for (Index id : out.ids) out.distances.push_back(d[id]);
  return out;
}

std::vector<SearchResult> FlatIndex::search_batch(const Eigen::Ref<const RowMatrixXd>& queries,
                                                  Index j) const {
  require_cols(queries.cols(), dim(), "FlatIndex::search_batch");
  std::vector<SearchResult> out;
  out.reserve(static_cast<std::size_t>(queries.rows()));
  VectorXd q(queries.cols());
  for (Index r = 0; r < queries.rows(); ++r) {
    q = queries.row(r).transpose();
    out.push_back(search(q, j));
  }
  return out;
}

}  // namespace mhpc
