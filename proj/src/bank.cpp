#include "mhpc/bank.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace mhpc {

std::string_view to_string(ConstructorKind kind) noexcept {
  switch (kind) {
    case ConstructorKind::GreedyCoreset: return "greedy";
    case ConstructorKind::MergeReduceKCenter: return "merge_reduce";
    case ConstructorKind::MiniBatchKMeans: return "kmeans";
    case ConstructorKind::GeoReS: return "geores";
  }
  return "merge_reduce";
}

ConstructorKind constructor_kind_from_string(std::string_view name) {
  if (name == "greedy") return ConstructorKind::GreedyCoreset;
  if (name == "merge_reduce") return ConstructorKind::MergeReduceKCenter;
  if (name == "kmeans") return ConstructorKind::MiniBatchKMeans;
  if (name == "geores") return ConstructorKind::GeoReS;
  fail(ErrorCode::InvalidArgument, "unknown constructor '" + std::string(name) + "'");
}

namespace {

using ConstRowRef = Eigen::Ref<const RowMatrixXd>;

VectorXd squared_distances_to(const ConstRowRef& points, const Eigen::Ref<const VectorXd>& c) {
  return (points.rowwise() - c.transpose()).rowwise().squaredNorm();
}

// First index of the maximum; strict comparison keeps the lowest index on ties.
Index argmax_first(const VectorXd& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

RowMatrixXd gather(const ConstRowRef& points, const std::vector<Index>& rows) {
  RowMatrixXd out(static_cast<Index>(rows.size()), points.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = points.row(rows[i]);
  return out;
}

RowMatrixXd vstack(const ConstRowRef& a, const ConstRowRef& b) {
  RowMatrixXd out(a.rows() + b.rows(), std::max(a.cols(), b.cols()));
  if (a.rows() > 0) out.topRows(a.rows()) = a;
  if (b.rows() > 0) out.bottomRows(b.rows()) = b;
  return out;
}

bool rows_equal(const ConstRowRef& a, Index i, const ConstRowRef& b, Index j) {
  return (a.row(i).array() == b.row(j).array()).all();
}

// Farthest-first reduction that returns the selected rows in input order.
RowMatrixXd reduce_keep_order(const ConstRowRef& points, Index k) {
  std::vector<Index> picked = farthest_first(points, k);
  std::sort(picked.begin(), picked.end());
  return gather(points, picked);
}

// Min squared distance of every point to a reference set, via the Gram
// expansion. Used only for ranking residuals.
VectorXd min_squared_distance_gram(const ConstRowRef& points, const ConstRowRef& refs) {
  if (refs.rows() == 0) {
    return VectorXd::Constant(points.rows(), std::numeric_limits<double>::infinity());
  }
  const VectorXd pn = points.rowwise().squaredNorm();
  const VectorXd rn = refs.rowwise().squaredNorm();
  const MatrixXd cross = points * refs.transpose();
  VectorXd out(points.rows());
  for (Index i = 0; i < points.rows(); ++i) {
    const double best = ((rn.transpose().array() - 2.0 * cross.row(i).array()).minCoeff()) + pn[i];
    out[i] = std::max(best, 0.0);
  }
  return out;
}

}  // namespace

std::vector<Index> farthest_first(const ConstRowRef& points, Index k) {
  if (points.rows() == 0) fail(ErrorCode::EmptyInput, "farthest_first: no points");
  if (k < 1) fail(ErrorCode::InvalidArgument, "farthest_first: budget must be >= 1");
  std::vector<Index> selected;
  selected.reserve(static_cast<std::size_t>(std::min(k, points.rows())));
  selected.push_back(0);
  VectorXd min_d = squared_distances_to(points, points.row(0).transpose());
  while (static_cast<Index>(selected.size()) < k) {
    const Index next = argmax_first(min_d);
    if (!(min_d[next] > 0.0)) break;  // only duplicates remain
    selected.push_back(next);
    min_d = min_d.cwiseMin(squared_distances_to(points, points.row(next).transpose()));
  }
  return selected;
}

MemoryBank greedy_coreset(const ConstRowRef& points, Index budget) {
  if (points.rows() == 0) fail(ErrorCode::EmptyInput, "greedy_coreset: no points");
  if (budget < 1) fail(ErrorCode::InvalidArgument, "greedy_coreset: budget must be >= 1");
  MemoryBank bank;
  bank.vectors = gather(points, farthest_first(points, budget));
  bank.constructor = ConstructorKind::GreedyCoreset;
  bank.budget = budget;
  return bank;
}

double covering_radius(const ConstRowRef& points, const ConstRowRef& bank) {
  if (bank.rows() == 0) fail(ErrorCode::EmptyInput, "covering_radius: empty bank");
  require_cols(bank.cols(), points.cols(), "covering_radius");
  VectorXd min_d = VectorXd::Constant(points.rows(), std::numeric_limits<double>::infinity());
  for (Index j = 0; j < bank.rows(); ++j) {
    min_d = min_d.cwiseMin(squared_distances_to(points, bank.row(j).transpose()));
  }
  return points.rows() == 0 ? 0.0 : std::sqrt(min_d.maxCoeff());
}

// --- merge-reduce ----------------------------------------------------------

MergeReduceKCenter::MergeReduceKCenter(Index budget, Index local_budget, Index max_levels)
    : budget_(budget), local_budget_(local_budget) {
  if (budget < 1) fail(ErrorCode::InvalidArgument, "merge-reduce: budget K must be >= 1");
  if (local_budget < 1) fail(ErrorCode::InvalidArgument, "merge-reduce: m_c must be >= 1");
  if (max_levels < 2) fail(ErrorCode::InvalidArgument, "merge-reduce: need at least 2 levels");
  levels_.resize(static_cast<std::size_t>(max_levels));
}

Index MergeReduceKCenter::retained() const noexcept {
  Index total = 0;
  for (const auto& level : levels_) {
    if (level) total += level->rows();
  }
  return total;
}

void MergeReduceKCenter::absorb(const ConstRowRef& chunk) {
  if (chunk.rows() == 0) return;
  if (dim_ < 0) dim_ = chunk.cols();
  require_cols(chunk.cols(), dim_, "mr_absorb");

  RowMatrixXd carry = reduce_keep_order(chunk, local_budget_);
  ++chunks_;
  peak_ = std::max(peak_, retained() + carry.rows());

  const std::size_t top = levels_.size() - 1;
  std::size_t level = 0;
  while (level < top && levels_[level]) {
    // older summary first keeps stream order
    carry = reduce_keep_order(vstack(*levels_[level], carry), local_budget_);
    levels_[level].reset();
    ++level;
  }
  if (level < top) {
    levels_[level] = std::move(carry);
    return;
  }
  if (levels_[top]) {
    const Index cap = std::max(local_budget_, budget_);
    levels_[top] = reduce_keep_order(vstack(*levels_[top], carry), cap);
  } else {
    levels_[top] = std::move(carry);
  }
}

MemoryBank MergeReduceKCenter::finalize() const {
  if (chunks_ == 0) fail(ErrorCode::EmptyInput, "mr_finalize: nothing absorbed");
  RowMatrixXd pool(0, dim_);
  for (auto it = levels_.rbegin(); it != levels_.rend(); ++it) {
    if (*it) pool = vstack(pool, **it);
  }
  MemoryBank bank;
  bank.vectors = gather(pool, farthest_first(pool, budget_));
  bank.constructor = ConstructorKind::MergeReduceKCenter;
  bank.budget = budget_;
  bank.local_budget = local_budget_;
  return bank;
}

// --- mini-batch k-means ----------------------------------------------------

MiniBatchKMeans::MiniBatchKMeans(Index budget, std::uint64_t seed) : budget_(budget), seed_(seed) {
  if (budget < 1) fail(ErrorCode::InvalidArgument, "kmeans: budget K must be >= 1");
}

void MiniBatchKMeans::absorb(const ConstRowRef& chunk) {
  if (!centroids_.empty()) require_cols(chunk.cols(), centroids_.front().size(), "kmeans_absorb");
  for (Index r = 0; r < chunk.rows(); ++r) {
    const auto z = chunk.row(r).transpose();
    Index nearest = -1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids_.size(); ++c) {
      const double d = (centroids_[c] - z).squaredNorm();
      if (d < best) {
        best = d;
        nearest = static_cast<Index>(c);
      }
    }
    if (static_cast<Index>(centroids_.size()) < budget_ && !(best == 0.0)) {
      centroids_.emplace_back(z);
      counts_.push_back(1);
      continue;
    }
    auto& centroid = centroids_[static_cast<std::size_t>(nearest)];
    auto& count = counts_[static_cast<std::size_t>(nearest)];
    ++count;
    centroid += (z - centroid) / static_cast<double>(count);
  }
}

MemoryBank MiniBatchKMeans::finalize() const {
  if (centroids_.empty()) fail(ErrorCode::EmptyInput, "kmeans_finalize: nothing absorbed");
  MemoryBank bank;
  bank.vectors.resize(static_cast<Index>(centroids_.size()), centroids_.front().size());
  for (std::size_t c = 0; c < centroids_.size(); ++c) {
    bank.vectors.row(static_cast<Index>(c)) = centroids_[c].transpose();
  }
  bank.constructor = ConstructorKind::MiniBatchKMeans;
  bank.budget = budget_;
  bank.observed_points = false;
  bank.underfilled = static_cast<Index>(centroids_.size()) < budget_;
  return bank;
}

// --- GeoReS ----------------------------------------------------------------

std::pair<Index, Index> budget_split(Index budget, double alpha) {
  if (budget < 2) fail(ErrorCode::InvalidArgument, "budget_split: K must be >= 2");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    fail(ErrorCode::InvalidArgument, "budget_split: alpha must lie in (0, 1)");
  }
  const auto rounded = static_cast<Index>(std::llround(alpha * static_cast<double>(budget)));
  const Index main = std::min(budget - 1, std::max<Index>(1, rounded));
  return {main, budget - main};
}

MemoryBank pi_k_complete(const ConstRowRef& candidates, const ConstRowRef& pool, Index budget) {
  if (budget < 1) fail(ErrorCode::InvalidArgument, "pi_k_complete: budget must be >= 1");
  const Index dim = candidates.rows() > 0 ? candidates.cols() : pool.cols();
  if (candidates.rows() > 0 && pool.rows() > 0) require_cols(pool.cols(), dim, "pi_k_complete");

  std::vector<Index> keep;
  for (Index i = 0; i < candidates.rows() && static_cast<Index>(keep.size()) < budget; ++i) {
    bool duplicate = false;
    for (Index j : keep) {
      if (rows_equal(candidates, i, candidates, j)) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) keep.push_back(i);
  }
  RowMatrixXd chosen = gather(candidates, keep);

  if (chosen.rows() < budget && pool.rows() > 0) {
    VectorXd min_d = VectorXd::Constant(pool.rows(), std::numeric_limits<double>::infinity());
    for (Index j = 0; j < chosen.rows(); ++j) {
      min_d = min_d.cwiseMin(squared_distances_to(pool, chosen.row(j).transpose()));
    }
    std::vector<Index> extra;
    while (chosen.rows() + static_cast<Index>(extra.size()) < budget) {
      const Index next = argmax_first(min_d);
      if (!(min_d[next] > 0.0)) break;
      extra.push_back(next);
      min_d = min_d.cwiseMin(squared_distances_to(pool, pool.row(next).transpose()));
    }
    chosen = vstack(chosen, gather(pool, extra));
  }

  MemoryBank bank;
  bank.vectors = chosen.rows() > 0 ? std::move(chosen) : RowMatrixXd(0, dim);
  bank.constructor = ConstructorKind::GeoReS;
  bank.budget = budget;
  return bank;
}

MatrixChunkStream::MatrixChunkStream(const RowMatrixXd& data, Index chunk_rows)
    : data_(&data), chunk_rows_(chunk_rows) {
  if (chunk_rows < 1) fail(ErrorCode::InvalidArgument, "chunk size must be >= 1");
}

void MatrixChunkStream::for_each_chunk(const Visitor& visit) {
  for (Index start = 0; start < data_->rows(); start += chunk_rows_) {
    const Index n = std::min(chunk_rows_, data_->rows() - start);
    visit(data_->middleRows(start, n));
  }
}

Index geores_default_q(Index tail_budget) noexcept {
  return std::max<Index>(16 * tail_budget, 1024);
}

namespace {

struct Candidate {
  double residual;
  std::int64_t position;
  VectorXd row;
};

// Heap order: the weakest candidate (smallest residual, latest position) on top.
struct WeakerFirst {
  bool operator()(const Candidate& a, const Candidate& b) const {
    if (a.residual != b.residual) return a.residual > b.residual;
    return a.position < b.position;
  }
};

struct TraversalFingerprint {
  std::int64_t rows = 0;
  std::uint64_t hash = 0;
  bool operator==(const TraversalFingerprint&) const = default;
};

TraversalFingerprint fingerprint_traversal(ChunkStream& stream, const ChunkStream::Visitor& inner) {
  Fnv1a h;
  TraversalFingerprint fp;
  stream.for_each_chunk([&](const ConstRowRef& chunk) {
    fp.rows += chunk.rows();
    for (Index r = 0; r < chunk.rows(); ++r) {
      for (Index c = 0; c < chunk.cols(); ++c) h.update_value(chunk(r, c));
    }
    inner(chunk);
  });
  fp.hash = h.digest();
  return fp;
}

}  // namespace

GeoResResult geores(ChunkStream& stream, const GeoResOptions& options) {
  if (!stream.reiterable()) {
    fail(ErrorCode::NonReiterableDataset, "geores: the stream cannot be traversed twice");
  }
  const auto [main_budget, tail_budget] = budget_split(options.budget, options.alpha);
  const Index q = options.q == 0 ? geores_default_q(tail_budget) : options.q;
  if (q < tail_budget) {
    fail(ErrorCode::InvalidArgument, "geores: q=" + std::to_string(q) +
                                         " is smaller than the tail budget Kt=" +
                                         std::to_string(tail_budget));
  }

  GeoResResult result;

  // traversal 1: provisional coverage bank
  MergeReduceKCenter provisional(options.budget, options.local_budget, options.max_levels);
  const TraversalFingerprint first =
      fingerprint_traversal(stream, [&](const ConstRowRef& chunk) { provisional.absorb(chunk); });
  if (provisional.empty()) fail(ErrorCode::EmptyInput, "geores: empty stream");
  const RowMatrixXd p = provisional.finalize().vectors;
  result.traversals = 1;

  // traversal 2: residual candidates and the main bank
  MergeReduceKCenter main(main_budget, options.local_budget, options.max_levels);
  std::priority_queue<Candidate, std::vector<Candidate>, WeakerFirst> heap;
  std::int64_t position = 0;
  const TraversalFingerprint second = fingerprint_traversal(stream, [&](const ConstRowRef& chunk) {
    const VectorXd r2 = min_squared_distance_gram(chunk, p);
    for (Index i = 0; i < chunk.rows(); ++i, ++position) {
      Candidate c{r2[i], position, VectorXd()};
      if (static_cast<Index>(heap.size()) < q) {
        c.row = chunk.row(i).transpose();
        heap.push(std::move(c));
      } else if (WeakerFirst{}(c, heap.top())) {
        c.row = chunk.row(i).transpose();
        heap.pop();
        heap.push(std::move(c));
      }
    }
    main.absorb(chunk);
  });
  result.traversals = 2;
  if (!(first == second)) {
    fail(ErrorCode::NonReiterableDataset, "geores: second traversal differs from the first");
  }
  const RowMatrixXd m0 = main.finalize().vectors;

  // candidates ordered by residual (largest first), then stream position
  std::vector<Candidate> tail_pool;
  tail_pool.reserve(heap.size());
  while (!heap.empty()) {
    tail_pool.push_back(heap.top());
    heap.pop();
  }
  std::reverse(tail_pool.begin(), tail_pool.end());
  const Index dim = p.cols();
  RowMatrixXd candidates(static_cast<Index>(tail_pool.size()), dim);
  for (std::size_t i = 0; i < tail_pool.size(); ++i) {
    candidates.row(static_cast<Index>(i)) = tail_pool[i].row.transpose();
  }

  // greedy tail: max-min distance to M0 plus the tail chosen so far
  VectorXd min_d = VectorXd::Constant(candidates.rows(), std::numeric_limits<double>::infinity());
  for (Index j = 0; j < m0.rows(); ++j) {
    min_d = min_d.cwiseMin(squared_distances_to(candidates, m0.row(j).transpose()));
  }
  std::vector<Index> tail_rows;
  std::vector<bool> taken(static_cast<std::size_t>(candidates.rows()), false);
  while (static_cast<Index>(tail_rows.size()) < tail_budget) {
    Index best = -1;
    for (Index i = 0; i < candidates.rows(); ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      if (best < 0 || min_d[i] > min_d[best]) best = i;
    }
    if (best < 0) break;
    taken[static_cast<std::size_t>(best)] = true;
    tail_rows.push_back(best);
    min_d = min_d.cwiseMin(squared_distances_to(candidates, candidates.row(best).transpose()));
  }
  result.tail = gather(candidates, tail_rows);

  result.bank = pi_k_complete(vstack(m0, result.tail), vstack(p, m0), options.budget);

  // completion from the stream itself when the coverage pool ran short
  if (result.bank.size() < options.budget) {
    RowMatrixXd bank = result.bank.vectors;
    const TraversalFingerprint third = fingerprint_traversal(stream, [&](const ConstRowRef& chunk) {
      if (bank.rows() >= options.budget) return;
      VectorXd d = VectorXd::Constant(chunk.rows(), std::numeric_limits<double>::infinity());
      for (Index j = 0; j < bank.rows(); ++j) {
        d = d.cwiseMin(squared_distances_to(chunk, bank.row(j).transpose()));
      }
      std::vector<Index> add;
      while (bank.rows() + static_cast<Index>(add.size()) < options.budget) {
        const Index next = argmax_first(d);
        if (!(d[next] > 0.0)) break;
        add.push_back(next);
        d = d.cwiseMin(squared_distances_to(chunk, chunk.row(next).transpose()));
      }
      bank = vstack(bank, gather(chunk, add));
    });
    result.traversals = 3;
    if (!(third == first)) {
      fail(ErrorCode::NonReiterableDataset, "geores: third traversal differs from the first");
    }
    result.bank.vectors = std::move(bank);
  }

  result.bank.local_budget = options.local_budget;
  result.main_size = m0.rows();
  result.tail_size = result.tail.rows();
  result.peak_retained = std::max(provisional.peak_retained(),
                                  p.rows() + main.peak_retained() + q);
  return result;
}

}  // namespace mhpc
