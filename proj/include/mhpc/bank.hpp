#pragma once

#include "mhpc/core.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

namespace mhpc {

enum class ConstructorKind { GreedyCoreset, MergeReduceKCenter, MiniBatchKMeans, GeoReS };

std::string_view to_string(ConstructorKind kind) noexcept;
ConstructorKind constructor_kind_from_string(std::string_view name);

/// Budgeted retrieval support set in whitened space.
struct MemoryBank {
  RowMatrixXd vectors;
  ConstructorKind constructor = ConstructorKind::MergeReduceKCenter;
  Index budget = 0;
  Index local_budget = 0;
  bool observed_points = true;  // every row is an input point (coverage constructors)
  bool underfilled = false;     // k-means finalised before K distinct points arrived

  [[nodiscard]] Index size() const noexcept { return vectors.rows(); }
  [[nodiscard]] Index dim() const noexcept { return vectors.cols(); }
};

/// Farthest-first traversal seeded at row 0. Returns selected row indices in
/// selection order; stops after k picks or once every remaining row
/// duplicates a selected one. Ties go to the lowest index.
std::vector<Index> farthest_first(const Eigen::Ref<const RowMatrixXd>& points, Index k);

/// Offline reference: farthest-first over the fully materialised point set.
MemoryBank greedy_coreset(const Eigen::Ref<const RowMatrixXd>& points, Index budget);

/// max over points of the distance to the nearest bank row (unsquared).
double covering_radius(const Eigen::Ref<const RowMatrixXd>& points,
                       const Eigen::Ref<const RowMatrixXd>& bank);

/// Bounded-memory merge-reduce k-center.
///
/// Every absorbed chunk is reduced to at most m_c farthest-first
/// representatives and pushed as a level-0 summary. Equal-level summaries
/// are merged (set union) and re-reduced, carrying upward like a binary
/// counter. The top level is an accumulator: carries that reach it are
/// merged into it and reduced to max(m_c, K), so the number of retained
/// points never exceeds m_c * max_levels + max(m_c, K) whatever the stream
/// length. Summaries keep their rows in stream order.
class MergeReduceKCenter {
 public:
  static constexpr Index kDefaultLevels = 4;

  MergeReduceKCenter(Index budget, Index local_budget, Index max_levels = kDefaultLevels);

  void absorb(const Eigen::Ref<const RowMatrixXd>& chunk);
  [[nodiscard]] MemoryBank finalize() const;

  [[nodiscard]] Index budget() const noexcept { return budget_; }
  [[nodiscard]] Index local_budget() const noexcept { return local_budget_; }
  [[nodiscard]] Index chunks() const noexcept { return chunks_; }
  [[nodiscard]] bool empty() const noexcept { return chunks_ == 0; }
  /// Summary rows currently held.
  [[nodiscard]] Index retained() const noexcept;
  /// Largest number of summary rows held at any point so far.
  [[nodiscard]] Index peak_retained() const noexcept { return peak_; }
  [[nodiscard]] const std::vector<std::optional<RowMatrixXd>>& levels() const noexcept {
    return levels_;
  }

 private:
  Index budget_;
  Index local_budget_;
  Index dim_ = -1;
  Index chunks_ = 0;
  Index peak_ = 0;
  std::vector<std::optional<RowMatrixXd>> levels_;
};

/// Streaming mini-batch k-means with count-based (Robbins-Monro) steps.
class MiniBatchKMeans {
 public:
  explicit MiniBatchKMeans(Index budget, std::uint64_t seed = 0);

  void absorb(const Eigen::Ref<const RowMatrixXd>& chunk);
  /// Centroid bank. If fewer than K distinct points were seen the bank holds
  /// those points and has underfilled set.
  [[nodiscard]] MemoryBank finalize() const;

  [[nodiscard]] Index retained() const noexcept { return static_cast<Index>(centroids_.size()); }
  /// Initialisation takes the first K distinct points, so the seed is only recorded.
  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] const std::vector<std::int64_t>& counts() const noexcept { return counts_; }

 private:
  Index budget_;
  std::uint64_t seed_;
  std::vector<VectorXd> centroids_;
  std::vector<std::int64_t> counts_;
};

/// K0 = min(K-1, max(1, round(alpha K))), Kt = K - K0.
std::pair<Index, Index> budget_split(Index budget, double alpha);

/// Dedupe candidates (exact row equality, first kept), truncate to K keeping
/// candidate order, or fill to K from the pool by farthest-first.
MemoryBank pi_k_complete(const Eigen::Ref<const RowMatrixXd>& candidates,
                         const Eigen::Ref<const RowMatrixXd>& pool, Index budget);

/// A stream of whitened chunks that can be traversed more than once.
class ChunkStream {
 public:
  using Visitor = std::function<void(const Eigen::Ref<const RowMatrixXd>&)>;

  virtual ~ChunkStream() = default;
  [[nodiscard]] virtual bool reiterable() const { return true; }
  virtual void for_each_chunk(const Visitor& visit) = 0;
};

/// Row blocks of an in-memory matrix.
class MatrixChunkStream final : public ChunkStream {
 public:
  MatrixChunkStream(const RowMatrixXd& data, Index chunk_rows);
  void for_each_chunk(const Visitor& visit) override;

 private:
  const RowMatrixXd* data_;
  Index chunk_rows_;
};

struct GeoResOptions {
  Index budget = 1000;
  double alpha = 0.9;
  Index q = 0;  // 0 selects max(16 Kt, 1024)
  Index local_budget = 256;
  Index max_levels = MergeReduceKCenter::kDefaultLevels;
};

struct GeoResResult {
  MemoryBank bank;
  int traversals = 0;  // 2, or 3 when completion had to draw on the stream
  Index main_size = 0;
  Index tail_size = 0;
  Index peak_retained = 0;
  RowMatrixXd tail;  // selected tail representatives
};

Index geores_default_q(Index tail_budget) noexcept;

/// Two-pass residual-informed k-center.
///
/// Traversal 1 builds the provisional bank P = merge-reduce(K). Traversal 2
/// keeps the q points with the largest residual to P and builds the main
/// bank M0 = merge-reduce(K0). Kt tail points are then chosen greedily from
/// those candidates by max-min distance to M0 plus the tail chosen so far,
/// and the union is completed to K from P and M0. If that pool runs out of
/// distinct points a third traversal fills the rest from the stream.
GeoResResult geores(ChunkStream& stream, const GeoResOptions& options);

}  // namespace mhpc
