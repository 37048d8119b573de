#include "mhpc/bank.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace mhpc;
using testing::gaussian;
using testing::uniform;

namespace {

RowMatrixXd column(std::initializer_list<double> values) {
  RowMatrixXd m(static_cast<Index>(values.size()), 1);
  Index i = 0;
  for (double v : values) m(i++, 0) = v;
  return m;
}

std::set<std::vector<double>> row_set(const RowMatrixXd& m) {
  std::set<std::vector<double>> s;
  for (Index r = 0; r < m.rows(); ++r) s.insert(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return s;
}

bool contains_row(const RowMatrixXd& m, const Eigen::Ref<const VectorXd>& v) {
  for (Index r = 0; r < m.rows(); ++r) {
    if ((m.row(r).transpose().array() == v.array()).all()) return true;
  }
  return false;
}

bool rows_are_inputs(const RowMatrixXd& bank, const RowMatrixXd& inputs) {
  for (Index r = 0; r < bank.rows(); ++r) {
    if (!contains_row(inputs, bank.row(r).transpose())) return false;
  }
  return true;
}

bool has_duplicates(const RowMatrixXd& m) {
  return static_cast<Index>(row_set(m).size()) != m.rows();
}

ErrorCode code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::Io;
}

/// Stream whose content changes after the first traversal.
class ShiftingStream final : public ChunkStream {
 public:
  explicit ShiftingStream(RowMatrixXd data) : data_(std::move(data)) {}
  void for_each_chunk(const Visitor& visit) override {
    visit(data_);
    data_(0, 0) += 1.0;
  }

 private:
  RowMatrixXd data_;
};

class OneShotStream final : public ChunkStream {
 public:
  bool reiterable() const override { return false; }
  void for_each_chunk(const Visitor&) override {}
};

}  // namespace

TEST_CASE("greedy coreset picks farthest points from row 0") {
  const MemoryBank bank = greedy_coreset(column({0, 1, 2, 10}), 2);
  REQUIRE(bank.size() == 2);
  CHECK(bank.vectors(0, 0) == 0.0);
  CHECK(bank.vectors(1, 0) == 10.0);
  CHECK(bank.constructor == ConstructorKind::GreedyCoreset);
  CHECK(bank.observed_points);

  const RowMatrixXd pts = column({3, 1, 3, 2});
  const MemoryBank all = greedy_coreset(pts, 10);
  CHECK(row_set(all.vectors) == row_set(pts));
  CHECK(all.size() == 3);

  RowMatrixXd same(5, 2);
  same.setConstant(1.5);
  CHECK(greedy_coreset(same, 3).size() == 1);

  CHECK(code_of([] { greedy_coreset(RowMatrixXd(0, 2), 3); }) == ErrorCode::EmptyInput);
}

TEST_CASE("farthest-first ties go to the lowest index") {
  // points 1 and 2 are both at distance 5 from the seed
  RowMatrixXd pts(3, 2);
  pts << 0, 0, 3, 4, -4, 3;
  const auto picked = farthest_first(pts, 2);
  CHECK(picked == std::vector<Index>{0, 1});
}

TEST_CASE("greedy coreset is a 2-approximation of the optimal k-center radius") {
  std::mt19937_64 rng(5);
  for (int instance = 0; instance < 20; ++instance) {
    const Index n = 5 + static_cast<Index>(rng() % 8);
    const RowMatrixXd pts = uniform(n, 2, 1000 + static_cast<std::uint64_t>(instance), -1.0, 1.0);
    for (Index k : {2, 3, 4}) {
      const double greedy = testing::oracle_radius(pts, greedy_coreset(pts, k).vectors);
      const double opt = testing::brute_force_kcenter(pts, k);
      CHECK(greedy <= 2.0 * opt + 1e-12);
      CHECK(covering_radius(pts, greedy_coreset(pts, k).vectors) == doctest::Approx(greedy).epsilon(1e-12));
    }
  }
}

TEST_CASE("merge-reduce construction bounds") {
  MergeReduceKCenter canonical(1000, 256);
  CHECK(canonical.budget() == 1000);
  CHECK(canonical.local_budget() == 256);
  CHECK(canonical.empty());
  MergeReduceKCenter minimal(1, 1);
  CHECK(minimal.empty());
  CHECK(code_of([] { MergeReduceKCenter(0, 256); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { MergeReduceKCenter(10, 0); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { (void)minimal.finalize(); }) == ErrorCode::EmptyInput);
}

TEST_CASE("a small chunk is its own level-0 summary") {
  const RowMatrixXd chunk = gaussian(10, 3, 1);
  MergeReduceKCenter mr(5, 16);
  mr.absorb(chunk);
  REQUIRE(mr.levels()[0].has_value());
  CHECK(*mr.levels()[0] == chunk);
  CHECK(mr.retained() == 10);
}

TEST_CASE("two chunks within m_c merge into one level-1 union") {
  const RowMatrixXd a = gaussian(6, 2, 2);
  const RowMatrixXd b = gaussian(7, 2, 3);
  MergeReduceKCenter mr(5, 16);
  mr.absorb(a);
  mr.absorb(b);
  CHECK_FALSE(mr.levels()[0].has_value());
  REQUIRE(mr.levels()[1].has_value());
  RowMatrixXd both(13, 2);
  both << a, b;
  CHECK(*mr.levels()[1] == both);
}

TEST_CASE("merge-reduce retained points stay under the level bound") {
  const RowMatrixXd pts = gaussian(10000, 2, 7);
  const Index chunk = 100;
  MergeReduceKCenter mr(64, 64);
  Index peak = 0;
  for (Index start = 0; start < pts.rows(); start += chunk) {
    mr.absorb(pts.middleRows(start, chunk));
    peak = std::max(peak, mr.retained());
  }
  const double chunks = static_cast<double>(pts.rows() / chunk);
  const Index bound = 64 * (static_cast<Index>(std::ceil(std::log2(chunks))) + 2);
  CHECK(mr.peak_retained() >= peak);
  CHECK(mr.peak_retained() <= bound);
}

TEST_CASE("merge-reduce peak is independent of stream length") {
  const RowMatrixXd pts = gaussian(40000, 3, 8);
  auto run = [&](Index n) {
    MergeReduceKCenter mr(100, 64);
    for (Index start = 0; start < n; start += 500) mr.absorb(pts.middleRows(start, 500));
    return mr.peak_retained();
  };
  CHECK(run(20000) == run(40000));
}

TEST_CASE("single chunk within m_c finalizes to the greedy coreset") {
  const RowMatrixXd pts = gaussian(50, 4, 9);
  MergeReduceKCenter mr(7, 64);
  mr.absorb(pts);
  const MemoryBank got = mr.finalize();
  CHECK(got.vectors == greedy_coreset(pts, 7).vectors);
  CHECK(got.constructor == ConstructorKind::MergeReduceKCenter);
}

TEST_CASE("a stream no larger than the budget is kept whole") {
  const RowMatrixXd pts = gaussian(30, 2, 10);
  MergeReduceKCenter mr(40, 32);
  for (Index start = 0; start < 30; start += 10) mr.absorb(pts.middleRows(start, 10));
  CHECK(row_set(mr.finalize().vectors) == row_set(pts));
}

TEST_CASE("streamed bank covers within twice the offline radius") {
  const RowMatrixXd pts = gaussian(5000, 2, 11);
  MergeReduceKCenter mr(8, 32);
  for (Index start = 0; start < pts.rows(); start += 250) mr.absorb(pts.middleRows(start, 250));
  const MemoryBank bank = mr.finalize();
  CHECK(bank.size() == 8);
  CHECK(rows_are_inputs(bank.vectors, pts));
  CHECK_FALSE(has_duplicates(bank.vectors));
  const double streamed = testing::oracle_radius(pts, bank.vectors);
  const double offline = testing::oracle_radius(pts, greedy_coreset(pts, 8).vectors);
  CHECK(streamed <= 2.0 * offline);
}

TEST_CASE("merge-reduce rejects a dimension change") {
  MergeReduceKCenter mr(4, 4);
  mr.absorb(gaussian(3, 2, 1));
  CHECK(code_of([&] { mr.absorb(gaussian(3, 3, 1)); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("k-means count-based updates") {
  MiniBatchKMeans one(1, 0);
  one.absorb(column({0, 2}));
  const MemoryBank b = one.finalize();
  CHECK(b.vectors(0, 0) == 1.0);
  CHECK(one.counts() == std::vector<std::int64_t>{2});
  CHECK_FALSE(b.observed_points);
  CHECK(b.constructor == ConstructorKind::MiniBatchKMeans);

  const RowMatrixXd three = column({-1, 4, 9});
  MiniBatchKMeans km(3, 0);
  km.absorb(three);
  CHECK(km.finalize().vectors == three);
  CHECK_FALSE(km.finalize().underfilled);

  km.absorb(column({4}));
  CHECK(km.finalize().vectors == three);

  MiniBatchKMeans under(5, 0);
  under.absorb(column({1, 1, 2}));
  const MemoryBank u = under.finalize();
  CHECK(u.underfilled);
  CHECK(u.size() == 2);
}

TEST_CASE("k-means matches a hand trace") {
  MiniBatchKMeans km(2, 0);
  km.absorb(column({0, 10, 1, 9, 2}));
  // init {0, 10}; 1 -> c0 = 0 + (1-0)/2 = 0.5; 9 -> c1 = 10 + (9-10)/2 = 9.5;
  // 2 -> c0 = 0.5 + (2-0.5)/3 = 1.0
  const MemoryBank b = km.finalize();
  CHECK(b.vectors(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(b.vectors(1, 0) == doctest::Approx(9.5).epsilon(1e-15));
}

TEST_CASE("budget split") {
  CHECK(budget_split(1000, 0.95) == std::pair<Index, Index>{950, 50});
  CHECK(budget_split(2, 0.95) == std::pair<Index, Index>{1, 1});
  CHECK(budget_split(10, 0.5) == std::pair<Index, Index>{5, 5});
  CHECK(budget_split(2000, 0.9) == std::pair<Index, Index>{1800, 200});
  CHECK(budget_split(4, 0.75) == std::pair<Index, Index>{3, 1});
  CHECK(budget_split(3, 0.01) == std::pair<Index, Index>{1, 2});
  CHECK(code_of([] { budget_split(1, 0.5); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { budget_split(10, 1.0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("completion dedupes, truncates and fills") {
  RowMatrixXd cand(2, 1), pool(2, 1);
  cand << 1, 1;
  pool << 5, 7;
  const MemoryBank dedup = pi_k_complete(cand, pool, 2);
  REQUIRE(dedup.size() == 2);
  CHECK(dedup.vectors(0, 0) == 1.0);
  CHECK(dedup.vectors(1, 0) == 7.0);  // farthest pool point from {1}

  const RowMatrixXd distinct = column({1, 2, 3});
  CHECK(pi_k_complete(distinct, pool, 3).vectors == distinct);

  const RowMatrixXd many = column({1, 2, 3, 4, 5});
  CHECK(pi_k_complete(many, pool, 3).vectors == distinct);
}

TEST_CASE("GeoReS with one tail slot takes the largest provisional residual") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const RowMatrixXd pts = gaussian(9, 2, 200 + seed);
    MatrixChunkStream stream(pts, 4);
    GeoResOptions opt;
    opt.budget = 2;
    opt.alpha = 0.9;
    opt.q = 1;
    opt.local_budget = 16;
    const GeoResResult g = geores(stream, opt);

    // provisional bank = farthest-first over the materialised points
    const RowMatrixXd p = greedy_coreset(pts, 2).vectors;
    Index best = 0;
    double worst = -1.0;
    for (Index i = 0; i < pts.rows(); ++i) {
      double r = 1e300;
      for (Index j = 0; j < p.rows(); ++j) r = std::min(r, testing::sq_dist(pts.row(i).transpose(), p.row(j).transpose()));
      if (r > worst) worst = r, best = i;
    }
    REQUIRE(g.tail.rows() == 1);
    CHECK(g.tail.row(0) == pts.row(best));
    CHECK(g.main_size == 1);
    CHECK(g.bank.size() == 2);
    CHECK(contains_row(g.bank.vectors, pts.row(best).transpose()));
  }
}

TEST_CASE("GeoReS tail selection with the default candidate heap") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const RowMatrixXd pts = gaussian(60, 3, 300 + seed);
    MatrixChunkStream stream(pts, 64);
    GeoResOptions opt;
    opt.budget = 10;
    opt.alpha = 0.7;
    opt.local_budget = 64;
    const GeoResResult g = geores(stream, opt);
    // every point is a candidate; M0 = farthest-first(K0) over the single chunk
    const RowMatrixXd m0 = greedy_coreset(pts, 7).vectors;
    RowMatrixXd chosen = m0;
    for (Index t = 0; t < 3; ++t) {
      Index best = -1;
      double far = -1.0;
      for (Index i = 0; i < pts.rows(); ++i) {
        double d = 1e300;
        for (Index j = 0; j < chosen.rows(); ++j) d = std::min(d, testing::sq_dist(pts.row(i).transpose(), chosen.row(j).transpose()));
        if (d > far) far = d, best = i;
      }
      CHECK(g.tail.row(t) == pts.row(best));
      chosen.conservativeResize(chosen.rows() + 1, Eigen::NoChange);
      chosen.row(chosen.rows() - 1) = pts.row(best);
    }
    CHECK(g.bank.size() == 10);
    CHECK(rows_are_inputs(g.bank.vectors, pts));
    CHECK_FALSE(has_duplicates(g.bank.vectors));
  }
}

TEST_CASE("GeoReS on a K-point stream returns that set") {
  const RowMatrixXd pts = gaussian(5, 2, 17);
  for (double alpha : {0.2, 0.5, 0.9}) {
    MatrixChunkStream stream(pts, 2);
    GeoResOptions opt;
    opt.budget = 5;
    opt.alpha = alpha;
    opt.local_budget = 8;
    CHECK(row_set(geores(stream, opt).bank.vectors) == row_set(pts));
  }
}

TEST_CASE("GeoReS keeps a remote point next to a dense cluster") {
  RowMatrixXd pts = gaussian(101, 2, 21, 0.1);
  pts.row(57) << 50.0, -40.0;
  MatrixChunkStream stream(pts, 25);
  GeoResOptions opt;
  opt.budget = 4;
  opt.alpha = 0.75;
  opt.local_budget = 16;
  const GeoResResult g = geores(stream, opt);
  CHECK(g.main_size == 3);
  CHECK(g.tail_size == 1);
  CHECK(contains_row(g.bank.vectors, pts.row(57).transpose()));
}

TEST_CASE("GeoReS fills to K from the stream when the pool runs short") {
  const RowMatrixXd pts = gaussian(200, 2, 23);
  MatrixChunkStream stream(pts, 10);
  GeoResOptions opt;
  opt.budget = 60;
  opt.alpha = 0.5;
  opt.local_budget = 4;
  opt.q = 30;
  const GeoResResult g = geores(stream, opt);
  CHECK(g.bank.size() == 60);
  CHECK(g.traversals == 3);
  CHECK(rows_are_inputs(g.bank.vectors, pts));
  CHECK_FALSE(has_duplicates(g.bank.vectors));
}

TEST_CASE("GeoReS errors") {
  OneShotStream once;
  CHECK(code_of([&] { geores(once, {}); }) == ErrorCode::NonReiterableDataset);

  ShiftingStream shifting(gaussian(20, 2, 1));
  GeoResOptions opt;
  opt.budget = 4;
  CHECK(code_of([&] { geores(shifting, opt); }) == ErrorCode::NonReiterableDataset);

  const RowMatrixXd pts = gaussian(20, 2, 2);
  MatrixChunkStream stream(pts, 5);
  opt.budget = 10;
  opt.alpha = 0.5;
  opt.q = 3;
  CHECK(code_of([&] { geores(stream, opt); }) == ErrorCode::InvalidArgument);
  CHECK(geores_default_q(50) == 1024);
  CHECK(geores_default_q(100) == 1600);
}

TEST_CASE("banks are deterministic") {
  const RowMatrixXd pts = gaussian(3000, 4, 31);
  auto build = [&] {
    MergeReduceKCenter mr(50, 32);
    for (Index start = 0; start < pts.rows(); start += 300) mr.absorb(pts.middleRows(start, 300));
    MatrixChunkStream stream(pts, 300);
    GeoResOptions opt;
    opt.budget = 50;
    opt.local_budget = 32;
    return std::pair{mr.finalize().vectors, geores(stream, opt).bank.vectors};
  };
  const auto a = build();
  const auto b = build();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(rows_are_inputs(a.first, pts));
  CHECK(rows_are_inputs(a.second, pts));
}

TEST_CASE("constructor names round-trip") {
  for (auto k : {ConstructorKind::GreedyCoreset, ConstructorKind::MergeReduceKCenter,
                 ConstructorKind::MiniBatchKMeans, ConstructorKind::GeoReS}) {
    CHECK(constructor_kind_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(constructor_kind_from_string("random"), Error);
}
