#include "mhpc/detector.hpp"

#include "mhpc/moments.hpp"

#include <algorithm>
#include <cmath>

namespace mhpc {

void DescriptorBlock::validate() const {
  if (grid_h < 1 || grid_w < 1) {
    fail(ErrorCode::InvalidDimension, "block '" + image_id + "': grid dimensions must be positive");
  }
  if (data.rows() != grid_h * grid_w) {
    fail(ErrorCode::DimensionMismatch,
         "block '" + image_id + "': " + std::to_string(data.rows()) + " rows for a " +
             std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  }
  if (data.cols() < 1) fail(ErrorCode::InvalidDimension, "block '" + image_id + "': d0 is zero");
  if (!data.allFinite()) {
    fail(ErrorCode::InvalidArgument, "block '" + image_id + "': non-finite descriptor values");
  }
}

void DetectorConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::InvalidArgument, "config: " + what); };
  if (!(rho > 0.0 && rho <= 1.0)) bad("rho must lie in (0, 1]");
  if (k_max < 0) bad("k_max must be >= 0");
  if (batch_rows < 1) bad("batch_rows must be >= 1");
  if (shrinkage.kind == ShrinkageKind::Fixed && !(shrinkage.lambda >= 0.0 && shrinkage.lambda <= 1.0)) {
    bad("fixed shrinkage lambda must lie in [0, 1]");
  }
  if (!(eps_rel >= 0.0)) bad("eps_rel must be >= 0");
  if (!(jitter.delta_min > 0.0 && jitter.delta_min < jitter.delta_max && jitter.growth > 1.0)) {
    bad("jitter needs 0 < delta_min < delta_max and growth > 1");
  }
  if (budget < 1) bad("K must be >= 1");
  if (local_budget < 1) bad("m_c must be >= 1");
  if (mr_levels < 2) bad("mr_levels must be >= 2");
  if (constructor == ConstructorKind::GeoReS) {
    if (budget < 2) bad("GeoReS needs K >= 2");
    if (!(geores_alpha > 0.0 && geores_alpha < 1.0)) bad("GeoReS alpha must lie in (0, 1)");
    if (geores_q < 0) bad("GeoReS q must be >= 0");
  }
  if (b < 1) bad("b must be >= 1");
  // b = 1 makes the reweighting factor identically zero
  if (scoring == ScoringMode::Reweighted && b < 2) bad("reweighted scoring needs b >= 2");
}

// --- configuration as JSON -------------------------------------------------

nlohmann::json to_json(const DetectorConfig& c) {
  nlohmann::json j;
  j["rho"] = c.rho;
  j["k_max"] = c.k_max;
  j["batch_rows"] = c.batch_rows;
  j["whitening"] = c.whitening == Whitening::Mahalanobis ? "mahalanobis" : "identity";
  j["shrinkage"] = {{"policy", std::string(to_string(c.shrinkage.kind))},
                    {"lambda", c.shrinkage.lambda}};
  j["eps_rel"] = c.eps_rel;
  j["jitter"] = {{"delta_min", c.jitter.delta_min},
                 {"growth", c.jitter.growth},
                 {"delta_max", c.jitter.delta_max}};
  j["constructor"] = std::string(to_string(c.constructor));
  j["K"] = c.budget;
  j["m_c"] = c.local_budget;
  j["mr_levels"] = c.mr_levels;
  j["geores"] = {{"alpha", c.geores_alpha}, {"q", c.geores_q}};
  j["b"] = c.b;
  j["scoring"] = c.scoring == ScoringMode::Reweighted ? "reweighted" : "max";
  j["seed"] = c.seed;
  return j;
}

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                    const std::string& where) {
  for (const auto& item : j.items()) {
    bool found = false;
    for (const char* k : known) found = found || item.key() == k;
    if (!found) fail(ErrorCode::InvalidArgument, "config: unknown key '" + where + item.key() + "'");
  }
}

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

DetectorConfig config_from_json(const nlohmann::json& j, DetectorConfig c) {
  if (!j.is_object()) fail(ErrorCode::InvalidArgument, "config: expected a JSON object");
  reject_unknown(j,
                 {"rho", "k_max", "batch_rows", "whitening", "shrinkage", "eps_rel", "jitter",
                  "constructor", "K", "m_c", "mr_levels", "geores", "b", "scoring", "seed"},
                 "");
  try {
    read_if(j, "rho", c.rho);
    read_if(j, "k_max", c.k_max);
    read_if(j, "batch_rows", c.batch_rows);
    if (j.contains("whitening")) {
      const auto w = j.at("whitening").get<std::string>();
      if (w == "mahalanobis") c.whitening = Whitening::Mahalanobis;
      else if (w == "identity" || w == "euclidean") c.whitening = Whitening::Identity;
      else fail(ErrorCode::InvalidArgument, "config: unknown whitening '" + w + "'");
    }
    if (j.contains("shrinkage")) {
      const auto& s = j.at("shrinkage");
      reject_unknown(s, {"policy", "lambda"}, "shrinkage.");
      if (s.contains("policy")) c.shrinkage.kind = shrinkage_kind_from_string(s.at("policy").get<std::string>());
      read_if(s, "lambda", c.shrinkage.lambda);
    }
    read_if(j, "eps_rel", c.eps_rel);
    if (j.contains("jitter")) {
      const auto& s = j.at("jitter");
      reject_unknown(s, {"delta_min", "growth", "delta_max"}, "jitter.");
      read_if(s, "delta_min", c.jitter.delta_min);
      read_if(s, "growth", c.jitter.growth);
      read_if(s, "delta_max", c.jitter.delta_max);
    }
    if (j.contains("constructor")) {
      c.constructor = constructor_kind_from_string(j.at("constructor").get<std::string>());
    }
    read_if(j, "K", c.budget);
    read_if(j, "m_c", c.local_budget);
    read_if(j, "mr_levels", c.mr_levels);
    if (j.contains("geores")) {
      const auto& s = j.at("geores");
      reject_unknown(s, {"alpha", "q"}, "geores.");
      read_if(s, "alpha", c.geores_alpha);
      read_if(s, "q", c.geores_q);
    }
    read_if(j, "b", c.b);
    if (j.contains("scoring")) {
      const auto m = j.at("scoring").get<std::string>();
      if (m == "reweighted") c.scoring = ScoringMode::Reweighted;
      else if (m == "max") c.scoring = ScoringMode::Max;
      else fail(ErrorCode::InvalidArgument, "config: unknown scoring mode '" + m + "'");
    }
    read_if(j, "seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

// --- fit -------------------------------------------------------------------

namespace {

std::uint64_t hash_block(const DescriptorBlock& b) {
  Fnv1a h;
  h.update(b.image_id);
  h.update_value(b.grid_h);
  h.update_value(b.grid_w);
  h.update_value(b.data.cols());
  h.update(b.data.data(), static_cast<std::size_t>(b.data.size()) * sizeof(double));
  return h.digest();
}

/// One traversal of the dataset grouped into mini-batches of at least
/// `batch_rows` patch rows (whole images only). Validates blocks and
/// fingerprints the traversal.
class Traversal {
 public:
  struct Summary {
    std::uint64_t fingerprint = 0;
    std::int64_t images = 0;
    std::int64_t patches = 0;
    Index max_batch_rows = 0;
    Index d0 = 0;
  };

  /// `batch_rule` maps d0 (known at the first block) to the batch size.
  static Summary run(const BlockSource& source, const std::function<Index(Index)>& batch_rule,
                     const std::function<void(const RowMatrixXd&)>& on_batch) {
    Summary s;
    Fnv1a h;
    Index batch_rows = 1;
    RowMatrixXd buffer;
    Index filled = 0;
    auto flush = [&]() {
      if (filled == 0) return;
      buffer.conservativeResize(filled, Eigen::NoChange);
      s.max_batch_rows = std::max(s.max_batch_rows, filled);
      on_batch(buffer);
      filled = 0;
      buffer.resize(0, s.d0);
    };
    source.for_each([&](const DescriptorBlock& block) {
      block.validate();
      if (s.images == 0) {
        s.d0 = block.d0();
        batch_rows = std::max<Index>(1, batch_rule(s.d0));
      }
      if (block.d0() != s.d0) {
        fail(ErrorCode::DimensionMismatch, "block '" + block.image_id + "' has d0=" +
                                               std::to_string(block.d0()) + ", expected " +
                                               std::to_string(s.d0));
      }
      const std::uint64_t bh = hash_block(block);
      h.update_value(bh);
      ++s.images;
      s.patches += block.patches();
      if (buffer.rows() < filled + block.patches()) {
        buffer.conservativeResize(std::max(filled + block.patches(), batch_rows), s.d0);
      }
      buffer.middleRows(filled, block.patches()) = block.data;
      filled += block.patches();
      if (filled >= batch_rows) flush();
    });
    flush();
    s.fingerprint = h.digest();
    return s;
  }

  static Summary run(const BlockSource& source, Index batch_rows,
                     const std::function<void(const RowMatrixXd&)>& on_batch) {
    return run(source, [batch_rows](Index) { return batch_rows; }, on_batch);
  }
};

void check_same(const Traversal::Summary& first, const Traversal::Summary& again, int pass) {
  if (again.fingerprint != first.fingerprint || again.images != first.images) {
    fail(ErrorCode::NonReiterableDataset,
         "fit: traversal " + std::to_string(pass) + " yielded different content than traversal 1");
  }
}

/// Whitened patch stream over the dataset, for constructors that need
/// several passes.
class WhitenedStream final : public ChunkStream {
 public:
  WhitenedStream(const BlockSource& source, const DetectorState& state, Index batch_rows,
                 const Traversal::Summary& reference, int passes_before)
      : source_(source),
        state_(state),
        batch_rows_(batch_rows),
        reference_(reference),
        passes_before_(passes_before) {}

  void for_each_chunk(const Visitor& visit) override {
    const auto s = Traversal::run(source_, batch_rows_, [&](const RowMatrixXd& batch) {
      visit(embed(state_, batch));
    });
    ++traversals_;
    check_same(reference_, s, passes_before_ + traversals_);
  }

  [[nodiscard]] int traversals() const noexcept { return traversals_; }

 private:
  const BlockSource& source_;
  const DetectorState& state_;
  Index batch_rows_;
  Traversal::Summary reference_;
  int passes_before_;
  int traversals_ = 0;
};

}  // namespace

RowMatrixXd embed(const DetectorState& state, const Eigen::Ref<const RowMatrixXd>& descriptors) {
  require_cols(descriptors.cols(), state.input_dim(), "embed");
  return whiten_batch(state.model, transform_batch(state.reducer, descriptors));
}

namespace {

FitResult fit_stages(const BlockSource& dataset, const DetectorConfig& config, const char*& stage) {
  stage = "config";
  config.validate();
  FitResult result;
  DetectorState& state = result.state;
  FitReport& report = result.report;
  state.config = config;

  stage = "reduction";
  // pass 1: incremental reducer; a mini-batch holds at least k_max rows
  std::optional<ReducerFit> reducer_fit;
  Index batch_rows = config.batch_rows;
  Index peak = 0;
  const auto first = Traversal::run(
      dataset,
      [&](Index d0) {
        reducer_fit = reducer_init(d0, config.k_max);
        batch_rows = std::max(config.batch_rows, reducer_fit->k_max);
        return batch_rows;
      },
      [&](const RowMatrixXd& batch) {
        peak = std::max(peak, batch.rows());
        if (reducer_fit->seen == 0 && batch.rows() < reducer_fit->k_max) {
          // the whole dataset has fewer rows than k_max
          reducer_fit = reducer_init(reducer_fit->d0, batch.rows());
        }
        partial_fit(*reducer_fit, batch);
      });
  if (first.images == 0) fail(ErrorCode::EmptyInput, "fit: empty dataset");
  if (first.patches < 2) fail(ErrorCode::InsufficientSamples, "fit: need at least 2 patches");
  state.reducer = finalize(*reducer_fit, config.rho);
  report.traversals = 1;
  const Index pass1_max_batch = first.max_batch_rows;
  const Index k = state.reducer.output_dim();

  stage = "covariance";
  // pass 2: streaming moments of reduced patches -> whitening operator
  if (config.whitening == Whitening::Mahalanobis) {
    MomentState moments = moments_init(k);
    const auto pass2 = Traversal::run(dataset, batch_rows, [&](const RowMatrixXd& batch) {
      peak = std::max(peak, batch.rows());
      moments = update_batch(moments, transform_batch(state.reducer, batch));
    });
    check_same(first, pass2, 2);
    report.traversals = 2;
    const MatrixXd sigma_hat = finalize_covariance(moments);
    state.model = build_covariance_model(moments.mu, sigma_hat, moments.n, config.shrinkage,
                                         config.eps_rel, config.jitter);
  } else {
    state.model = CovarianceModel::identity(k);
    report.traversals = 1;
  }

  stage = "bank";
  // pass 3: bounded-memory bank construction in whitened space
  switch (config.constructor) {
    case ConstructorKind::MergeReduceKCenter: {
      MergeReduceKCenter builder(config.budget, config.local_budget, config.mr_levels);
      const auto pass3 = Traversal::run(dataset, batch_rows, [&](const RowMatrixXd& batch) {
        builder.absorb(embed(state, batch));
        peak = std::max(peak, batch.rows() + builder.peak_retained());
      });
      check_same(first, pass3, report.traversals + 1);
      ++report.traversals;
      state.bank = builder.finalize();
      break;
    }
    case ConstructorKind::GreedyCoreset: {
      // offline reference: materialises every whitened patch
      RowMatrixXd all(first.patches, k);
      Index filled = 0;
      const auto pass3 = Traversal::run(dataset, batch_rows, [&](const RowMatrixXd& batch) {
        all.middleRows(filled, batch.rows()) = embed(state, batch);
        filled += batch.rows();
        peak = std::max(peak, filled);
      });
      check_same(first, pass3, report.traversals + 1);
      ++report.traversals;
      state.bank = greedy_coreset(all, config.budget);
      break;
    }
    case ConstructorKind::MiniBatchKMeans: {
      MiniBatchKMeans builder(config.budget, config.seed);
      const auto pass3 = Traversal::run(dataset, batch_rows, [&](const RowMatrixXd& batch) {
        builder.absorb(embed(state, batch));
        peak = std::max(peak, batch.rows() + builder.retained());
      });
      check_same(first, pass3, report.traversals + 1);
      ++report.traversals;
      state.bank = builder.finalize();
      break;
    }
    case ConstructorKind::GeoReS: {
      WhitenedStream stream(dataset, state, batch_rows, first, report.traversals);
      GeoResOptions options;
      options.budget = config.budget;
      options.alpha = config.geores_alpha;
      options.q = config.geores_q;
      options.local_budget = config.local_budget;
      options.max_levels = config.mr_levels;
      GeoResResult g = geores(stream, options);
      report.traversals += g.traversals;
      peak = std::max(peak, pass1_max_batch + g.peak_retained);
      state.bank = std::move(g.bank);
      break;
    }
  }

  state.index = FlatIndex(state.bank);
  report.patches = first.patches;
  report.images = first.images;
  report.peak_retained_rows = peak;
  report.reduced_dim = k;
  report.jitter = state.model.delta;
  return result;
}

}  // namespace

FitResult fit(const BlockSource& dataset, const DetectorConfig& config) {
  const char* stage = "config";
  try {
    return fit_stages(dataset, config, stage);
  } catch (const Error& e) {
    throw Error(e.code(), std::string("fit [") + stage + "]: " + e.what());
  }
}

// --- scoring ---------------------------------------------------------------

MatrixXd score_patches(const DetectorState& state, const DescriptorBlock& block) {
  block.validate();
  if (block.d0() != state.input_dim()) {
    fail(ErrorCode::DimensionMismatch, "score: block '" + block.image_id + "' has d0=" +
                                           std::to_string(block.d0()) + ", detector expects " +
                                           std::to_string(state.input_dim()));
  }
  const RowMatrixXd z = embed(state, block.data);
  MatrixXd grid(block.grid_h, block.grid_w);
  VectorXd q(z.cols());
  for (Index j = 0; j < z.rows(); ++j) {
    q = z.row(j).transpose();
    grid(j / block.grid_w, j % block.grid_w) = state.index.search(q, 1).distances.front();
  }
  return grid;
}

double reweighting_factor(double a_star, std::span<const double> neighbour_distances, double tau) {
  if (neighbour_distances.empty()) fail(ErrorCode::EmptyInput, "reweighting: empty neighbourhood");
  double denom = 0.0;
  for (double d : neighbour_distances) denom += std::exp(d - tau);
  return 1.0 - std::exp(a_star - tau) / denom;
}

ImageScore score_image(const DetectorState& state, const DescriptorBlock& block) {
  if (state.index.size() == 0) fail(ErrorCode::EmptyInput, "score: empty bank");
  block.validate();
  if (block.d0() != state.input_dim()) {
    fail(ErrorCode::DimensionMismatch, "score: block '" + block.image_id + "' has d0=" +
                                           std::to_string(block.d0()) + ", detector expects " +
                                           std::to_string(state.input_dim()));
  }
  const RowMatrixXd z = embed(state, block.data);

  ImageScore out;
  out.image_id = block.image_id;
  out.patch_scores.resize(block.grid_h, block.grid_w);
  Index worst_patch = 0;
  Index worst_nn = 0;
  double worst = -1.0;
  VectorXd q(z.cols());
  for (Index j = 0; j < z.rows(); ++j) {
    q = z.row(j).transpose();
    const SearchResult nn = state.index.search(q, 1);
    const double a = nn.distances.front();
    out.patch_scores(j / block.grid_w, j % block.grid_w) = a;
    if (a > worst) {
      worst = a;
      worst_patch = j;
      worst_nn = nn.ids.front();
    }
  }
  out.s_max = worst;

  if (state.config.scoring == ScoringMode::Max) {
    out.s = out.s_max;
    out.weight = 1.0;
    out.b_used = 1;
    return out;
  }

  // N_b(m*): m* and its b-1 nearest rows inside the bank
  const Index b = std::min(state.config.b, state.index.size());
  const VectorXd m_star = state.bank.vectors.row(worst_nn).transpose();
  SearchResult hood = state.index.search(m_star, b);
  if (std::find(hood.ids.begin(), hood.ids.end(), worst_nn) == hood.ids.end()) {
    hood.ids.pop_back();
    hood.ids.insert(hood.ids.begin(), worst_nn);
  }
  const VectorXd u_star = z.row(worst_patch).transpose();
  std::vector<double> deltas;
  deltas.reserve(hood.ids.size());
  for (Index id : hood.ids) deltas.push_back(state.index.distance(u_star, id));
  const double tau = *std::max_element(deltas.begin(), deltas.end());

  out.b_used = b;
  out.weight = reweighting_factor(out.s_max, deltas, tau);
  out.s = out.weight * out.s_max;
  return out;
}

MatrixXd anomaly_map(const MatrixXd& patch_scores, Index out_h, Index out_w) {
  if (patch_scores.size() == 0) fail(ErrorCode::EmptyInput, "anomaly_map: empty grid");
  if (out_h < 1 || out_w < 1) fail(ErrorCode::InvalidDimension, "anomaly_map: output must be positive");
  const Index in_h = patch_scores.rows();
  const Index in_w = patch_scores.cols();
  auto source_coord = [](Index o, Index out_n, Index in_n) {
    if (out_n == 1 || in_n == 1) return 0.0;
    return static_cast<double>(o) * static_cast<double>(in_n - 1) / static_cast<double>(out_n - 1);
  };
  MatrixXd out(out_h, out_w);
  for (Index r = 0; r < out_h; ++r) {
    const double y = source_coord(r, out_h, in_h);
    const Index y0 = std::min<Index>(static_cast<Index>(std::floor(y)), in_h - 1);
    const Index y1 = std::min<Index>(y0 + 1, in_h - 1);
    const double fy = y - static_cast<double>(y0);
    for (Index c = 0; c < out_w; ++c) {
      const double x = source_coord(c, out_w, in_w);
      const Index x0 = std::min<Index>(static_cast<Index>(std::floor(x)), in_w - 1);
      const Index x1 = std::min<Index>(x0 + 1, in_w - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = (1.0 - fx) * patch_scores(y0, x0) + fx * patch_scores(y0, x1);
      const double bottom = (1.0 - fx) * patch_scores(y1, x0) + fx * patch_scores(y1, x1);
      out(r, c) = (1.0 - fy) * top + fy * bottom;
    }
  }
  return out;
}

}  // namespace mhpc
