#include "mhpc/detector.hpp"
#include "support.hpp"

#include <doctest.h>

#include <Eigen/Cholesky>

#include <cmath>
#include <cstring>

using namespace mhpc;
using testing::gaussian;

namespace {

ErrorCode code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::Io;
}

DescriptorBlock block_of(std::string id, const RowMatrixXd& data, Index h, Index w,
                         std::optional<int> label = 0) {
  return {std::move(id), h, w, data, label};
}

/// n images on a 3x3 grid drawn from an anisotropic Gaussian in d0 dimensions.
std::vector<DescriptorBlock> gaussian_images(Index n, Index d0, std::uint64_t seed) {
  std::vector<DescriptorBlock> blocks;
  for (Index i = 0; i < n; ++i) {
    RowMatrixXd x = gaussian(9, d0, seed * 100003 + static_cast<std::uint64_t>(i));
    for (Index c = 0; c < d0; ++c) x.col(c) *= 1.0 + 0.5 * static_cast<double>(c);
    blocks.push_back(block_of("img" + std::to_string(i), x, 3, 3));
  }
  return blocks;
}

DetectorConfig small_config() {
  DetectorConfig c;
  c.budget = 40;
  c.local_budget = 32;
  c.batch_rows = 64;
  return c;
}

/// Detector with identity reduction and whitening in one dimension over the given bank.
DetectorState line_detector(std::initializer_list<double> bank_values, Index b) {
  DetectorState s;
  s.reducer.w = MatrixXd::Identity(1, 1);
  s.reducer.u_bar = VectorXd::Zero(1);
  s.reducer.explained_variance = VectorXd::Ones(1);
  s.model = CovarianceModel::identity(1);
  s.bank.vectors.resize(static_cast<Index>(bank_values.size()), 1);
  Index i = 0;
  for (double v : bank_values) s.bank.vectors(i++, 0) = v;
  s.index = FlatIndex(s.bank);
  s.config.b = b;
  return s;
}

DescriptorBlock line_block(std::initializer_list<double> values, Index h, Index w) {
  RowMatrixXd x(static_cast<Index>(values.size()), 1);
  Index i = 0;
  for (double v : values) x(i++, 0) = v;
  return block_of("line", x, h, w);
}

class ChangingSource final : public BlockSource {
 public:
  explicit ChangingSource(std::vector<DescriptorBlock> blocks) : blocks_(std::move(blocks)) {}
  void for_each(const Visitor& visit) const override {
    for (const auto& b : blocks_) visit(b);
    blocks_.front().data(0, 0) += 1.0;
  }

 private:
  mutable std::vector<DescriptorBlock> blocks_;
};

}  // namespace

TEST_CASE("descriptor blocks are validated") {
  CHECK(code_of([] { block_of("a", RowMatrixXd::Zero(5, 2), 2, 2).validate(); }) == ErrorCode::DimensionMismatch);
  RowMatrixXd bad = RowMatrixXd::Zero(4, 2);
  bad(1, 1) = std::nan("");
  CHECK(code_of([&] { block_of("a", bad, 2, 2).validate(); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { block_of("a", RowMatrixXd::Zero(0, 2), 0, 1).validate(); }) == ErrorCode::InvalidDimension);
}

TEST_CASE("config defaults and JSON round-trip") {
  const DetectorConfig c;
  CHECK(c.rho == 0.99);
  CHECK(c.shrinkage.kind == ShrinkageKind::Fixed);
  CHECK(c.shrinkage.lambda == 0.07);
  CHECK(c.eps_rel == 1e-8);
  CHECK(c.budget == 1000);
  CHECK(c.local_budget == 256);
  CHECK(c.b == 9);
  CHECK(c.jitter.delta_min == 1e-12);
  CHECK(c.jitter.growth == 10.0);
  CHECK(c.jitter.delta_max == 1.0);

  DetectorConfig g = config_from_json(nlohmann::json::parse(R"({"constructor":"geores","K":2000,"geores":{"alpha":0.9}})"));
  CHECK(g.constructor == ConstructorKind::GeoReS);
  CHECK(g.budget == 2000);
  CHECK(g.geores_alpha == 0.9);
  CHECK(to_json(config_from_json(to_json(g))) == to_json(g));

  CHECK(code_of([] { config_from_json(nlohmann::json::parse(R"({"budget":5})")); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { config_from_json(nlohmann::json::parse(R"({"b":1})")); }) == ErrorCode::InvalidArgument);
  CHECK(config_from_json(nlohmann::json::parse(R"({"b":1,"scoring":"max"})")).b == 1);
  CHECK(code_of([] { config_from_json(nlohmann::json::parse(R"({"shrinkage":{"lambda":2}})")); }) ==
        ErrorCode::InvalidArgument);
  CHECK(config_from_json(nlohmann::json::parse(R"({"whitening":"euclidean"})")).whitening == Whitening::Identity);
}

TEST_CASE("identical blocks collapse to a one-row bank") {
  const RowMatrixXd patch = gaussian(1, 6, 3);
  RowMatrixXd x(4, 6);
  x.rowwise() = patch.row(0);
  std::vector<DescriptorBlock> blocks;
  for (int i = 0; i < 10; ++i) blocks.push_back(block_of("same" + std::to_string(i), x, 2, 2));
  const FitResult r = fit(VectorBlockSource(blocks), small_config());
  CHECK(r.state.bank.size() == 1);
  CHECK(score_patches(r.state, blocks.front()).isZero(0.0));
}

TEST_CASE("two-dimensional generator gives a two-dimensional reduction") {
  const RowMatrixXd basis = gaussian(2, 32, 5);
  std::vector<DescriptorBlock> blocks;
  for (int i = 0; i < 30; ++i) {
    RowMatrixXd latent = gaussian(16, 2, 600 + static_cast<std::uint64_t>(i));
    latent.col(1) *= 0.7;
    RowMatrixXd x = latent * basis;
    x.array() += 3.0;
    blocks.push_back(block_of("s" + std::to_string(i), x, 4, 4));
  }
  const FitResult r = fit(VectorBlockSource(blocks), small_config());
  CHECK(r.report.reduced_dim == 2);
  CHECK(r.state.reduced_dim() == 2);
  CHECK(r.state.bank.dim() == 2);
}

TEST_CASE("fit traverses the dataset the documented number of times") {
  const VectorBlockSource src(gaussian_images(40, 5, 1));
  DetectorConfig c = small_config();
  CHECK(fit(src, c).report.traversals == 3);
  c.whitening = Whitening::Identity;
  CHECK(fit(src, c).report.traversals == 2);
  c = small_config();
  c.constructor = ConstructorKind::GeoReS;
  c.budget = 20;
  c.geores_alpha = 0.75;
  const FitResult g = fit(src, c);
  CHECK(g.report.traversals == 4);
  CHECK(g.state.bank.size() == 20);
  c = small_config();
  c.constructor = ConstructorKind::MiniBatchKMeans;
  CHECK(fit(src, c).report.traversals == 3);
  c.constructor = ConstructorKind::GreedyCoreset;
  CHECK(fit(src, c).report.traversals == 3);
}

TEST_CASE("Euclidean control uses identity whitening") {
  DetectorConfig c = small_config();
  c.whitening = Whitening::Identity;
  const FitResult r = fit(VectorBlockSource(gaussian_images(20, 4, 2)), c);
  CHECK(r.state.model.lower == MatrixXd::Identity(r.state.reduced_dim(), r.state.reduced_dim()));
  CHECK(r.state.model.mu.isZero(0.0));
}

TEST_CASE("fit reports dataset errors") {
  CHECK(code_of([] { fit(VectorBlockSource({}), small_config()); }) == ErrorCode::EmptyInput);

  auto blocks = gaussian_images(5, 4, 3);
  blocks.push_back(block_of("odd", gaussian(9, 5, 1), 3, 3));
  CHECK(code_of([&] { fit(VectorBlockSource(blocks), small_config()); }) == ErrorCode::DimensionMismatch);

  CHECK(code_of([] { fit(ChangingSource(gaussian_images(10, 4, 4)), small_config()); }) ==
        ErrorCode::NonReiterableDataset);

  try {
    fit(ChangingSource(gaussian_images(10, 4, 4)), small_config());
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("fit [covariance]") != std::string::npos);
  }
  DetectorConfig bad = small_config();
  bad.budget = 0;
  CHECK(code_of([&] { fit(VectorBlockSource(gaussian_images(3, 4, 5)), bad); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("fit is deterministic") {
  const VectorBlockSource src(gaussian_images(30, 6, 7));
  for (auto kind : {ConstructorKind::MergeReduceKCenter, ConstructorKind::GeoReS, ConstructorKind::MiniBatchKMeans}) {
    DetectorConfig c = small_config();
    c.constructor = kind;
    CHECK(serialize(fit(src, c).state) == serialize(fit(src, c).state));
  }
}

TEST_CASE("peak retained rows do not grow with the dataset") {
  DetectorConfig c = small_config();
  c.budget = 30;
  c.local_budget = 16;
  c.batch_rows = 45;
  const auto big = gaussian_images(400, 4, 8);
  const std::vector<DescriptorBlock> half(big.begin(), big.begin() + 200);
  const FitResult a = fit(VectorBlockSource(half), c);
  const FitResult b = fit(VectorBlockSource(big), c);
  CHECK(a.report.patches * 2 == b.report.patches);
  CHECK(a.report.peak_retained_rows == b.report.peak_retained_rows);
  CHECK(a.report.peak_retained_rows < a.report.patches);
}

TEST_CASE("patch scores on a line") {
  const DetectorState s = line_detector({0.0}, 2);
  const MatrixXd a = score_patches(s, line_block({3.0}, 1, 1));
  CHECK(a(0, 0) == 9.0);

  const MatrixXd grid = score_patches(s, line_block({1, 2, 3, 4, 5, 6}, 2, 3));
  CHECK(grid(0, 2) == 9.0);
  CHECK(grid(1, 0) == 16.0);
  CHECK(code_of([&] {
          score_patches(s, block_of("x", RowMatrixXd::Zero(1, 2), 1, 1));
        }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("training patches score zero") {
  const auto blocks = gaussian_images(3, 4, 9);
  DetectorConfig c = small_config();
  c.budget = 100;
  c.local_budget = 100;
  const FitResult r = fit(VectorBlockSource(blocks), c);
  REQUIRE(r.state.bank.size() == 27);
  for (const auto& b : blocks) {
    CHECK(score_patches(r.state, b).isZero(0.0));
    const ImageScore s = score_image(r.state, b);
    CHECK(s.s == 0.0);
    CHECK(s.s_max == 0.0);
  }
}

TEST_CASE("reweighted score for a single patch next to a two-row bank") {
  const DetectorState s = line_detector({0.0, 10.0}, 2);
  const ImageScore r = score_image(s, line_block({1.0}, 1, 1));
  CHECK(r.s_max == 1.0);
  const double expected_w = 1.0 - std::exp(1.0 - 81.0) / (std::exp(1.0 - 81.0) + 1.0);
  CHECK(r.weight == doctest::Approx(expected_w).epsilon(1e-15));
  CHECK(r.s == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.b_used == 2);
}

TEST_CASE("reweighting factor formula and bounds") {
  const std::vector<double> deltas{2.0, 3.0, 5.0};
  const double w = reweighting_factor(2.0, deltas, 5.0);
  const double direct = 1.0 - std::exp(2.0) / (std::exp(2.0) + std::exp(3.0) + std::exp(5.0));
  CHECK(w == doctest::Approx(direct).epsilon(1e-14));
  CHECK(reweighting_factor(2.0, deltas, 105.0) == doctest::Approx(w).epsilon(1e-12));

  // all neighbours equidistant -> exactly the lower bound 1 - 1/b
  const std::vector<double> flat(9, 4.0);
  CHECK(reweighting_factor(4.0, flat, 4.0) == doctest::Approx(1.0 - 1.0 / 9.0).epsilon(1e-15));
}

TEST_CASE("neighbourhood size is clamped to the bank") {
  const DetectorState s = line_detector({0.0, 1.0, 2.5}, 9);
  const ImageScore r = score_image(s, line_block({4.0, 0.5}, 1, 2));
  CHECK(r.b_used == 3);
  CHECK(r.s <= r.s_max);
  CHECK(r.weight >= 1.0 - 1.0 / 3.0);
  CHECK(r.weight < 1.0);
}

TEST_CASE("max scoring mode reports the unweighted maximum") {
  DetectorState s = line_detector({0.0, 1.0}, 2);
  s.config.scoring = ScoringMode::Max;
  const ImageScore r = score_image(s, line_block({3.0, -1.0}, 2, 1));
  CHECK(r.s == 4.0);
  CHECK(r.s_max == 4.0);
}

TEST_CASE("patch score equals the Mahalanobis distance to the nearest bank pre-image") {
  const auto blocks = gaussian_images(60, 6, 10);
  DetectorConfig c = small_config();
  c.rho = 1.0;
  const FitResult r = fit(VectorBlockSource(blocks), c);
  const DetectorState& s = r.state;
  const Index k = s.reduced_dim();
  const MatrixXd sigma_l = s.model.sigma_reg + s.model.delta * MatrixXd::Identity(k, k);
  const Eigen::LDLT<MatrixXd> solver(sigma_l);
  const auto test = gaussian_images(3, 6, 11);
  for (const auto& b : test) {
    const MatrixXd a = score_patches(s, b);
    for (Index j = 0; j < b.patches(); ++j) {
      const VectorXd reduced = transform(s.reducer, b.data.row(j).transpose());
      double best = 1e300;
      for (Index m = 0; m < s.bank.size(); ++m) {
        const VectorXd pre = s.model.lower * s.bank.vectors.row(m).transpose() + s.model.mu;
        const VectorXd diff = reduced - pre;
        best = std::min(best, diff.dot(solver.solve(diff)));
      }
      CHECK(std::abs(a(j / 3, j % 3) - best) <= 1e-6 * best);
    }
  }
}

TEST_CASE("reweighting bounds on fitted detectors") {
  const auto blocks = gaussian_images(50, 3, 12);
  const FitResult r = fit(VectorBlockSource(blocks), small_config());
  for (const auto& b : gaussian_images(30, 3, 13)) {
    const ImageScore s = score_image(r.state, b);
    CHECK(s.s <= s.s_max);
    CHECK(s.weight >= 1.0 - 1.0 / 9.0);
    CHECK(s.weight < 1.0);
    CHECK(s.b_used == 9);
    CHECK(s.s == s.weight * s.s_max);
  }
}

TEST_CASE("anomaly map interpolation") {
  MatrixXd g(2, 2);
  g << 0, 1, 0, 1;
  const MatrixXd m = anomaly_map(g, 2, 3);
  CHECK(m(0, 0) == 0.0);
  CHECK(m(0, 1) == 0.5);
  CHECK(m(1, 1) == 0.5);
  CHECK(m(0, 2) == 1.0);

  MatrixXd r(3, 4);
  r << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  CHECK(anomaly_map(r, 3, 4) == r);

  const MatrixXd c = anomaly_map(MatrixXd::Constant(2, 3, 7.5), 9, 5);
  CHECK((c.array() == 7.5).all());

  const MatrixXd up = anomaly_map(r, 7, 10);
  CHECK(up.minCoeff() >= r.minCoeff());
  CHECK(up.maxCoeff() <= r.maxCoeff());
  CHECK(up(0, 0) == 1.0);
  CHECK(up(6, 9) == 12.0);
  // centre of a 2x2 cell: mean of its corners
  MatrixXd cell(2, 2);
  cell << 1, 3, 5, 11;
  CHECK(anomaly_map(cell, 3, 3)(1, 1) == doctest::Approx(5.0).epsilon(1e-15));

  CHECK(code_of([] { anomaly_map(MatrixXd(0, 0), 2, 2); }) == ErrorCode::EmptyInput);
  CHECK(code_of([&] { anomaly_map(g, 0, 2); }) == ErrorCode::InvalidDimension);
}

TEST_CASE("state round-trip is bit-exact") {
  const auto blocks = gaussian_images(40, 5, 14);
  const FitResult r = fit(VectorBlockSource(blocks), small_config());
  const std::string bytes = serialize(r.state);
  const DetectorState back = deserialize(bytes);
  CHECK(serialize(back) == bytes);
  CHECK(back.reducer.w == r.state.reducer.w);
  CHECK(back.model.lower == r.state.model.lower);
  CHECK(back.bank.vectors == r.state.bank.vectors);
  CHECK(back.index.size() == r.state.bank.size());
  for (const auto& b : gaussian_images(10, 5, 15)) {
    const ImageScore x = score_image(r.state, b);
    const ImageScore y = score_image(back, b);
    CHECK(std::memcmp(&x.s, &y.s, sizeof(double)) == 0);
    CHECK(x.patch_scores == y.patch_scores);
  }

  const auto dir = testing::scratch_dir("detector_state");
  save(r.state, dir / "state.bin");
  CHECK(serialize(load(dir / "state.bin")) == bytes);
  CHECK(code_of([&] { load(dir / "missing.bin"); }) == ErrorCode::Io);
}

TEST_CASE("damaged state files are rejected") {
  const FitResult r = fit(VectorBlockSource(gaussian_images(20, 3, 16)), small_config());
  const std::string bytes = serialize(r.state);

  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  CHECK(code_of([&] { deserialize(flipped); }) == ErrorCode::ChecksumFailure);

  CHECK(code_of([&] { deserialize(bytes.substr(0, bytes.size() - 9)); }) == ErrorCode::TruncatedFile);
  CHECK(code_of([&] { deserialize(bytes.substr(0, 10)); }) == ErrorCode::TruncatedFile);

  // future version with a consistent checksum
  std::string future = bytes;
  const std::string from = "\"format_version\":1";
  const auto at = future.find(from);
  REQUIRE(at != std::string::npos);
  future.replace(at, from.size(), "\"format_version\":2");
  Fnv1a h;
  h.update(future.data(), future.size() - 8);
  const std::uint64_t sum = h.digest();
  std::memcpy(future.data() + future.size() - 8, &sum, 8);
  CHECK(code_of([&] { deserialize(future); }) == ErrorCode::VersionMismatch);

  std::string magic = bytes;
  magic[0] = 'X';
  CHECK(code_of([&] { deserialize(magic); }) == ErrorCode::MalformedFile);
}
