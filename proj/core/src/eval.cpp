#include "fkb/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <tuple>

#include <Eigen/LU>

#include "fkb/parallel.hpp"
#include "fkb/rng.hpp"
#include "internal/text.hpp"
#include "json.hpp"

namespace fkb {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool in_mask(const Mask& mask, double x, double y) {
  if (mask.empty()) return true;
  const long ix = std::lround(x);
  const long iy = std::lround(y);
  if (ix < 0 || iy < 0 || ix >= mask.width() || iy >= mask.height()) return false;
  return mask(static_cast<int>(ix), static_cast<int>(iy)) != 0;
}

std::vector<std::size_t> mask_indices(const KeypointSet& pts, const Mask& mask) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (in_mask(mask, pts.points[i].x, pts.points[i].y)) keep.push_back(i);
  }
  return keep;
}

DescriptorSet select_rows(const DescriptorSet& d, std::span<const std::size_t> rows) {
  DescriptorSet out;
  out.type = d.type;
  out.dim = d.dim;
  out.count = rows.size();
  for (std::size_t r : rows) {
    if (d.type == DescriptorType::kBinary) {
      const auto row = d.binary_row(r);
      out.bits.insert(out.bits.end(), row.begin(), row.end());
    } else {
      const auto row = d.float_row(r);
      out.values.insert(out.values.end(), row.begin(), row.end());
    }
  }
  return out;
}

KeypointSet select_points(const KeypointSet& k, std::span<const std::size_t> rows) {
  KeypointSet out;
  out.image_width = k.image_width;
  out.image_height = k.image_height;
  for (std::size_t r : rows) out.points.push_back(k.points[r]);
  return out;
}

// Number of points in `from` whose mapped position has a point of `to`
// within epsilon.
std::size_t count_correct(const KeypointSet& from, const KeypointSet& to, const GroundTruthMap& gt, double epsilon) {
  std::size_t correct = 0;
  for (const auto& p : from.points) {
    const auto q = gt.try_map({p.x, p.y});
    if (!q) continue;
    for (const auto& t : to.points) {
      if (std::hypot(q->u - t.x, q->v - t.y) <= epsilon) {
        ++correct;
        break;
      }
    }
  }
  return correct;
}

Mask ones_mask(int w, int h) { return Mask(w, h, 1); }

ImageU8 mask_to_image(const Mask& m) {
  ImageU8 out(m.width(), m.height());
  const auto src = m.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] ? 255 : 0;
  return out;
}

Mask image_to_mask(const ImageU8& img) {
  Mask out(img.width(), img.height());
  const auto src = img.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] ? 1 : 0;
  return out;
}

json matrix_json(const Eigen::Matrix3d& M) {
  json a = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) a.push_back(M(r, c));
  }
  return a;
}

Eigen::Matrix3d matrix_from_json(const json& a) {
  if (!a.is_array() || a.size() != 9) fail(ErrorCode::kFormat, "expected a 9-element matrix");
  Eigen::Matrix3d M;
  for (int i = 0; i < 9; ++i) M(i / 3, i % 3) = a.at(static_cast<std::size_t>(i)).get<double>();
  return M;
}

json gt_json(const GroundTruthMap& gt) {
  switch (gt.kind()) {
    case GroundTruthMap::Kind::kIdentity: return {{"kind", "identity"}};
    case GroundTruthMap::Kind::kHomography: return {{"kind", "homography"}, {"matrix", matrix_json(gt.matrix())}};
    case GroundTruthMap::Kind::kFisheye: {
      const auto& T = gt.transform();
      return {{"kind", "fisheye"},
              {"rotation", matrix_json(T.rotation)},
              {"translation", {T.translation.x(), T.translation.y(), T.translation.z()}},
              {"euler_deg", T.euler_deg},
              {"inverted", gt.inverted()}};
    }
  }
  fail(ErrorCode::kInternal, "unhandled ground truth kind");
}

GroundTruthMap gt_from_json(const json& j, const std::shared_ptr<const FisheyeModel>& model) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "identity") return GroundTruthMap::identity();
  if (kind == "homography") return GroundTruthMap::homography(matrix_from_json(j.at("matrix")));
  if (kind == "fisheye") {
    if (!model) fail(ErrorCode::kFormat, "fisheye ground truth without a camera model in the manifest");
    RigidTransform T;
    T.rotation = matrix_from_json(j.at("rotation"));
    const auto& t = j.at("translation");
    T.translation = Eigen::Vector3d(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
    if (j.contains("euler_deg")) T.euler_deg = j.at("euler_deg").get<std::array<double, 3>>();
    T.validate();
    GroundTruthMap gt = GroundTruthMap::fisheye(model, T);
    return j.value("inverted", false) ? gt.inverse() : gt;
  }
  fail(ErrorCode::kFormat, "unknown ground truth kind: " + kind);
}

std::string pair_file(std::size_t i, const char* suffix) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "pair_%05zu_%s.pgm", i, suffix);
  return buf;
}

std::string csv_double(double v) { return std::isnan(v) ? "nan" : internal::format_double(v); }

json json_double(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

void EvalConfig::validate() const {
  if (!(epsilon > 0.0)) fail(ErrorCode::kRange, "epsilon must be positive");
  if (k < 1) fail(ErrorCode::kRange, "k must be >= 1");
  if (nms_size < 0) fail(ErrorCode::kRange, "nms_size must be >= 0");
}

// ---------------------------------------------------------------------------
// Ground truth

GroundTruthMap GroundTruthMap::identity() { return {}; }

GroundTruthMap GroundTruthMap::homography(const Homography& H) {
  if (!H.allFinite() || std::abs(H.determinant()) <= 1e-12 || std::abs(H(2, 2)) < 1e-12) {
    fail(ErrorCode::kDegenerateInput, "ground-truth homography is not invertible");
  }
  GroundTruthMap gt;
  gt.kind_ = Kind::kHomography;
  gt.H_ = H / H(2, 2);
  return gt;
}

GroundTruthMap GroundTruthMap::fisheye(std::shared_ptr<const FisheyeModel> model, const RigidTransform& T) {
  if (!model) fail(ErrorCode::kDegenerateInput, "fisheye ground truth needs a camera model");
  GroundTruthMap gt;
  gt.kind_ = Kind::kFisheye;
  gt.model_ = std::move(model);
  gt.T_ = T;
  return gt;
}

std::optional<PixelPoint> GroundTruthMap::try_map(const PixelPoint& p) const {
  switch (kind_) {
    case Kind::kIdentity: return p;
    case Kind::kHomography: {
      const Eigen::Vector3d q = H_ * Eigen::Vector3d(p.u, p.v, 1.0);
      if (std::abs(q.z()) < 1e-12) return std::nullopt;
      return PixelPoint{q.x() / q.z(), q.y() / q.z()};
    }
    case Kind::kFisheye: return inverted_ ? try_unwarp_point(*model_, T_, p) : try_warp_point(*model_, T_, p);
  }
  return std::nullopt;
}

PixelPoint GroundTruthMap::map(const PixelPoint& p) const {
  switch (kind_) {
    case Kind::kIdentity: return p;
    case Kind::kHomography: return apply_homography(H_, p);
    case Kind::kFisheye: return inverted_ ? unwarp_point(*model_, T_, p) : warp_point(*model_, T_, p);
  }
  fail(ErrorCode::kInternal, "unhandled ground truth kind");
}

GroundTruthMap GroundTruthMap::inverse() const {
  GroundTruthMap out = *this;
  switch (kind_) {
    case Kind::kIdentity: break;
    case Kind::kHomography: {
      const Homography inv = H_.inverse();
      out.H_ = inv / inv(2, 2);
      break;
    }
    case Kind::kFisheye: out.inverted_ = !inverted_; break;
  }
  return out;
}

KeypointSet map_points(const KeypointSet& pts, const GroundTruthMap& gt) {
  KeypointSet out = pts;
  for (auto& p : out.points) {
    const PixelPoint q = gt.map({p.x, p.y});
    p.x = q.u;
    p.y = q.v;
  }
  return out;
}

KeypointSet filter_by_mask(const KeypointSet& pts, const Mask& mask) {
  return select_points(pts, mask_indices(pts, mask));
}

// ---------------------------------------------------------------------------
// Metrics

double repeatability(const KeypointSet& a, const KeypointSet& b, const GroundTruthMap& gt, const Mask& mask_a,
                     const Mask& mask_b, double epsilon, RepeatabilityMode mode) {
  const KeypointSet fa = filter_by_mask(a, mask_a);
  const KeypointSet fb = filter_by_mask(b, mask_b);
  const std::size_t ca = count_correct(fa, fb, gt, epsilon);
  if (mode == RepeatabilityMode::kOneWay) {
    return fa.empty() ? kNaN : static_cast<double>(ca) / static_cast<double>(fa.size());
  }
  const std::size_t denom = fa.size() + fb.size();
  if (denom == 0) return kNaN;
  const std::size_t cb = count_correct(fb, fa, gt.inverse(), epsilon);
  return static_cast<double>(ca + cb) / static_cast<double>(denom);
}

MatchingResult matching_correctness(const MatchSet& matches, const KeypointSet& kps_a, const KeypointSet& kps_b,
                                    const GroundTruthMap& gt, double epsilon) {
  MatchingResult r;
  for (const auto& m : matches) {
    if (m.index_a >= kps_a.size() || m.index_b >= kps_b.size()) {
      fail(ErrorCode::kRange, "match index outside the keypoint set");
    }
    const auto& pa = kps_a.points[m.index_a];
    const auto& pb = kps_b.points[m.index_b];
    const auto q = gt.try_map({pa.x, pa.y});
    if (!q) continue;
    const double d = std::hypot(q->u - pb.x, q->v - pb.y);
    r.residuals.push_back(d);
    if (d < epsilon) ++r.n_inliers;
  }
  r.n_matches = r.residuals.size();
  r.m_c = r.n_matches == 0 ? kNaN : static_cast<double>(r.n_inliers) / static_cast<double>(r.n_matches);
  return r;
}

double rmse(std::span<const double> residuals) {
  if (residuals.empty()) fail(ErrorCode::kEmptyInput, "RMSE of an empty residual list");
  double sum = 0.0;
  for (double d : residuals) sum += d * d;
  return std::sqrt(sum / static_cast<double>(residuals.size()));
}

// ---------------------------------------------------------------------------
// Test sets

std::string to_string(TestMode mode) { return mode == TestMode::kIllumination ? "illumination" : "viewpoint"; }

TestMode test_mode_from_string(const std::string& name) {
  if (name == "illumination") return TestMode::kIllumination;
  if (name == "viewpoint") return TestMode::kViewpoint;
  fail(ErrorCode::kUsage, "unknown test mode: " + name);
}

std::vector<TestPair> make_testset(std::span<const ImageU8> base_images, const TestSetOptions& options,
                                   std::span<const LutPair> luts, std::shared_ptr<const FisheyeModel> model) {
  if (base_images.empty()) fail(ErrorCode::kEmptyDataset, "no base images for the test set");
  if (!(options.gamma_lo > 0.0) || !(options.gamma_hi >= options.gamma_lo)) {
    fail(ErrorCode::kRange, "gamma range must satisfy 0 < lo <= hi");
  }
  if (options.mode == TestMode::kViewpoint) {
    if (luts.empty()) fail(ErrorCode::kEmptyLutSet, "viewpoint test sets need warp fields");
    if (!model) fail(ErrorCode::kUsage, "viewpoint test sets need the camera model");
  }
  std::vector<TestPair> pairs;
  pairs.reserve(base_images.size());
  for (std::size_t i = 0; i < base_images.size(); ++i) {
    const ImageU8& img = base_images[i];
    TestPair p;
    p.a = img;
    p.condition = to_string(options.mode);
    if (options.mode == TestMode::kIllumination) {
      CounterRng rng(options.seed, StreamDomain::kGamma, i);
      p.gamma = rng.uniform(options.gamma_lo, options.gamma_hi);
      p.b = gamma_correct(img, p.gamma);
      p.mask_a = ones_mask(img.width(), img.height());
      p.mask_b = ones_mask(img.width(), img.height());
    } else {
      const std::size_t li = i % luts.size();
      const LutPair& lut = luts[li];
      if (img.width() != lut.forward.width || img.height() != lut.forward.height) {
        fail(ErrorCode::kDimensionMismatch, "base image size differs from the warp fields");
      }
      p.b = apply_warp(img, lut.forward);
      p.gt = GroundTruthMap::fisheye(model, lut.forward.transform);
      p.lut_index = static_cast<int>(li);
      const OverlapMasks m = overlap_masks(lut);
      p.mask_a = m.source;
      p.mask_b = m.target;
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void save_testset(const std::string& dir, std::span<const TestPair> pairs, const TestSetOptions& options,
                  const std::string& extra_json) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir + ": " + ec.message());

  std::shared_ptr<const FisheyeModel> model;
  json rows = json::array();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const TestPair& p = pairs[i];
    save_pgm((fs::path(dir) / pair_file(i, "a")).string(), p.a);
    save_pgm((fs::path(dir) / pair_file(i, "b")).string(), p.b);
    save_pgm((fs::path(dir) / pair_file(i, "mask_a")).string(), mask_to_image(p.mask_a));
    save_pgm((fs::path(dir) / pair_file(i, "mask_b")).string(), mask_to_image(p.mask_b));
    if (p.gt.model()) model = p.gt.model();
    json row = {{"id", i},
                {"a", pair_file(i, "a")},
                {"b", pair_file(i, "b")},
                {"mask_a", pair_file(i, "mask_a")},
                {"mask_b", pair_file(i, "mask_b")},
                {"condition", p.condition},
                {"gt", gt_json(p.gt)},
                {"source", p.source}};
    if (options.mode == TestMode::kIllumination) row["gamma"] = p.gamma;
    if (p.lut_index >= 0) row["lut_index"] = p.lut_index;
    rows.push_back(std::move(row));
  }
  json manifest = extra_json.empty() ? json::object() : json::parse(extra_json);
  manifest["testset"] = {{"mode", to_string(options.mode)},
                         {"seed", options.seed},
                         {"gamma_range", {options.gamma_lo, options.gamma_hi}},
                         {"count", pairs.size()},
                         {"model", model ? json::parse(model_to_json(*model)) : json(nullptr)},
                         {"pairs", rows}};
  internal::write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

std::vector<TestPair> load_testset(const std::string& dir) {
  const std::string path = (fs::path(dir) / "manifest.json").string();
  json manifest;
  try {
    manifest = json::parse(internal::read_text_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, path + ": " + e.what());
  }
  if (!manifest.contains("testset")) fail(ErrorCode::kFormat, path + ": no \"testset\" object");
  std::vector<TestPair> pairs;
  try {
    const json& ts = manifest.at("testset");
    std::shared_ptr<const FisheyeModel> model;
    if (ts.contains("model") && !ts.at("model").is_null()) {
      model = std::make_shared<const FisheyeModel>(model_from_json(ts.at("model").dump()));
    }
    for (const json& row : ts.at("pairs")) {
      TestPair p;
      p.a = load_pgm((fs::path(dir) / row.at("a").get<std::string>()).string());
      p.b = load_pgm((fs::path(dir) / row.at("b").get<std::string>()).string());
      p.mask_a = image_to_mask(load_pgm((fs::path(dir) / row.at("mask_a").get<std::string>()).string()));
      p.mask_b = image_to_mask(load_pgm((fs::path(dir) / row.at("mask_b").get<std::string>()).string()));
      p.gt = gt_from_json(row.at("gt"), model);
      p.condition = row.value("condition", ts.value("mode", std::string()));
      p.gamma = row.value("gamma", 0.0);
      p.lut_index = row.value("lut_index", -1);
      p.source = row.value("source", std::string());
      pairs.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, path + ": " + e.what());
  }
  if (pairs.empty()) fail(ErrorCode::kEmptyDataset, path + ": test set has no pairs");
  return pairs;
}

// ---------------------------------------------------------------------------
// Feature sources

FeatureSource builtin_features(const DetectorConfig& detector, std::uint64_t brief_seed) {
  auto pattern = std::make_shared<const BriefPattern>(make_brief_pattern(brief_seed));
  return [detector, pattern](const TestPair& pair, std::size_t) {
    PairFeatures f;
    f.detections_a = detect(to_float(pair.a), detector);
    f.detections_b = detect(to_float(pair.b), detector);
    DescribedKeypoints da = describe_brief(pair.a, f.detections_a, *pattern);
    DescribedKeypoints db = describe_brief(pair.b, f.detections_b, *pattern);
    f.a = std::move(da.keypoints);
    f.desc_a = std::move(da.descriptors);
    f.b = std::move(db.keypoints);
    f.desc_b = std::move(db.descriptors);
    return f;
  };
}

FeatureSource adapted_features(BaseDetector base, std::shared_ptr<const FisheyeModel> model,
                               std::shared_ptr<const std::vector<LutPair>> luts, const AdaptationConfig& config,
                               std::uint64_t brief_seed) {
  if (!model || !luts) fail(ErrorCode::kUsage, "adapted features need a camera model and warp fields");
  auto pattern = std::make_shared<const BriefPattern>(make_brief_pattern(brief_seed));
  return [base = std::move(base), model, luts, config, pattern](const TestPair& pair, std::size_t) {
    PairFeatures f;
    f.detections_a = adapt_image(to_float(pair.a), base, *model, *luts, config).superset;
    f.detections_b = adapt_image(to_float(pair.b), base, *model, *luts, config).superset;
    DescribedKeypoints da = describe_brief(pair.a, f.detections_a, *pattern);
    DescribedKeypoints db = describe_brief(pair.b, f.detections_b, *pattern);
    f.a = std::move(da.keypoints);
    f.desc_a = std::move(da.descriptors);
    f.b = std::move(db.keypoints);
    f.desc_b = std::move(db.descriptors);
    return f;
  };
}

FeatureSource external_features(std::vector<ExternalPairFiles> files) {
  auto shared = std::make_shared<const std::vector<ExternalPairFiles>>(std::move(files));
  return [shared](const TestPair&, std::size_t index) {
    if (index >= shared->size()) fail(ErrorCode::kCountMismatch, "no external feature files for pair " + std::to_string(index));
    const auto& e = (*shared)[index];
    ExternalFeatures fa = load_external(e.keypoints_a, e.descriptors_a);
    ExternalFeatures fb = load_external(e.keypoints_b, e.descriptors_b);
    PairFeatures f;
    f.detections_a = fa.keypoints;
    f.detections_b = fb.keypoints;
    f.a = std::move(fa.keypoints);
    f.desc_a = std::move(fa.descriptors);
    f.b = std::move(fb.keypoints);
    f.desc_b = std::move(fb.descriptors);
    return f;
  };
}

// ---------------------------------------------------------------------------
// Benchmark

namespace {

PairResult evaluate_pair(const TestPair& pair, std::size_t index, const FeatureSource& source,
                         const EvalConfig& cfg) {
  PairResult r;
  const PairFeatures f = source(pair, index);
  r.repeatability = repeatability(f.detections_a, f.detections_b, pair.gt, pair.mask_a, pair.mask_b, cfg.epsilon,
                                  cfg.repeatability_mode);

  const auto ia = mask_indices(f.a, pair.mask_a);
  const auto ib = mask_indices(f.b, pair.mask_b);
  const KeypointSet ka = select_points(f.a, ia);
  const KeypointSet kb = select_points(f.b, ib);
  const MatchSet matches = match_nn(select_rows(f.desc_a, ia), select_rows(f.desc_b, ib));
  MatchingResult mc = matching_correctness(matches, ka, kb, pair.gt, cfg.epsilon);
  r.n_matches = mc.n_matches;
  r.n_inliers = mc.n_inliers;
  r.m_c = mc.m_c;
  r.rmse_pair = mc.residuals.empty() ? kNaN : rmse(mc.residuals);
  r.residuals = std::move(mc.residuals);

  if (pair.gt.kind() != GroundTruthMap::Kind::kFisheye) {
    // A pair without a usable estimate counts as incorrect.
    bool correct = false;
    if (matches.size() >= 4) {
      try {
        const HomographyEstimate est = estimate_homography(matches, ka, kb, cfg.ransac);
        correct = homography_correctness(est.H, pair.gt.matrix(), pair.a.width(), pair.a.height(), cfg.epsilon);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kDegenerateConfiguration && e.code() != ErrorCode::kSingularFit &&
            e.code() != ErrorCode::kDegeneratePoint) {
          throw;
        }
      }
    }
    r.h_correct = correct;
  }
  return r;
}

}  // namespace

EvalReport run_benchmark(std::span<const TestPair> pairs, const FeatureSource& source, const EvalConfig& config,
                         const std::string& algorithm) {
  config.validate();
  EvalReport report;
  report.pairs.resize(pairs.size());
  parallel_for(pairs.size(), config.threads, [&](std::size_t i) {
    PairResult r;
    try {
      r = evaluate_pair(pairs[i], i, source, config);
    } catch (const Error& e) {
      r = PairResult{};
      r.repeatability = kNaN;
      r.m_c = kNaN;
      r.rmse_pair = kNaN;
      r.error = std::string(to_string(e.code())) + ": " + e.what();
    }
    r.pair_id = i;
    r.condition = pairs[i].condition;
    r.algorithm = algorithm;
    r.nms = config.nms_size;
    r.k = config.k;
    r.epsilon = config.epsilon;
    report.pairs[i] = std::move(r);
  });
  return report;
}

std::vector<AggregateRow> EvalReport::aggregates() const {
  std::vector<AggregateRow> rows;
  struct Sums {
    double rep = 0.0;
    std::size_t rep_n = 0;
    double mc = 0.0;
    std::size_t mc_n = 0;
    std::size_t hc_true = 0;
    double sq = 0.0;
  };
  std::vector<Sums> sums;
  std::map<std::tuple<std::string, std::string, int, int, double>, std::size_t> index;
  for (const auto& p : pairs) {
    const auto key = std::make_tuple(p.condition, p.algorithm, p.nms, p.k, p.epsilon);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, rows.size()).first;
      AggregateRow row;
      row.condition = p.condition;
      row.algorithm = p.algorithm;
      row.nms = p.nms;
      row.k = p.k;
      row.epsilon = p.epsilon;
      rows.push_back(row);
      sums.emplace_back();
    }
    AggregateRow& row = rows[it->second];
    Sums& s = sums[it->second];
    ++row.n_pairs;
    if (!p.error.empty()) ++row.failed;
    if (std::isnan(p.repeatability)) {
      ++row.repeatability_undefined;
    } else {
      s.rep += p.repeatability;
      ++s.rep_n;
    }
    if (std::isnan(p.m_c)) {
      ++row.m_c_undefined;
    } else {
      s.mc += p.m_c;
      ++s.mc_n;
    }
    if (p.h_correct) {
      ++row.h_c_pairs;
      if (*p.h_correct) ++s.hc_true;
    }
    if (!p.residuals.empty()) {
      for (double d : p.residuals) s.sq += d * d;
      row.n_residuals += p.residuals.size();
    } else if (p.n_matches > 0 && !std::isnan(p.rmse_pair)) {
      // Rows read back from CSV carry only the per-pair RMSE.
      s.sq += p.rmse_pair * p.rmse_pair * static_cast<double>(p.n_matches);
      row.n_residuals += p.n_matches;
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Sums& s = sums[i];
    rows[i].repeatability = s.rep_n ? s.rep / static_cast<double>(s.rep_n) : kNaN;
    rows[i].m_c = s.mc_n ? s.mc / static_cast<double>(s.mc_n) : kNaN;
    rows[i].h_c = rows[i].h_c_pairs ? static_cast<double>(s.hc_true) / static_cast<double>(rows[i].h_c_pairs) : kNaN;
    rows[i].rmse = rows[i].n_residuals ? std::sqrt(s.sq / static_cast<double>(rows[i].n_residuals)) : kNaN;
  }
  return rows;
}

std::string report_csv(const EvalReport& report) {
  std::string out = "pair_id,condition,algorithm,nms,k,epsilon,repeatability,n_matches,n_inliers,m_c,h_correct,rmse_pair\n";
  for (const auto& p : report.pairs) {
    out += std::to_string(p.pair_id) + ',' + p.condition + ',' + p.algorithm + ',' + std::to_string(p.nms) + ',' +
           std::to_string(p.k) + ',' + csv_double(p.epsilon) + ',' + csv_double(p.repeatability) + ',' +
           std::to_string(p.n_matches) + ',' + std::to_string(p.n_inliers) + ',' + csv_double(p.m_c) + ',' +
           (p.h_correct ? (*p.h_correct ? "1" : "0") : "") + ',' + csv_double(p.rmse_pair) + '\n';
  }
  return out;
}

EvalReport read_report_csv(const std::string& path) {
  const auto lines = internal::read_lines(path);
  if (lines.empty() || internal::trim(lines[0]) !=
                           "pair_id,condition,algorithm,nms,k,epsilon,repeatability,n_matches,n_inliers,m_c,h_correct,rmse_pair") {
    fail(ErrorCode::kFormat, path + ": not a benchmark report CSV");
  }
  EvalReport report;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (internal::trim(lines[i]).empty()) continue;
    const auto f = internal::split(lines[i], ',');
    const std::string where = path + ":" + std::to_string(i + 1);
    if (f.size() != 12) fail(ErrorCode::kFormat, where + ": expected 12 fields");
    const auto as_int = [&](std::string_view s) {
      const double v = internal::parse_double(s, where);
      if (v < 0 || v != std::floor(v)) fail(ErrorCode::kFormat, where + ": expected a count");
      return static_cast<std::size_t>(v);
    };
    PairResult r;
    r.pair_id = as_int(f[0]);
    r.condition = std::string(f[1]);
    r.algorithm = std::string(f[2]);
    r.nms = static_cast<int>(as_int(f[3]));
    r.k = static_cast<int>(as_int(f[4]));
    r.epsilon = internal::parse_double(f[5], where);
    r.repeatability = internal::parse_double(f[6], where);
    r.n_matches = as_int(f[7]);
    r.n_inliers = as_int(f[8]);
    r.m_c = internal::parse_double(f[9], where);
    if (f[10] == "1") {
      r.h_correct = true;
    } else if (f[10] == "0") {
      r.h_correct = false;
    } else if (!f[10].empty()) {
      fail(ErrorCode::kFormat, where + ": h_correct must be 0, 1 or empty");
    }
    r.rmse_pair = internal::parse_double(f[11], where);
    report.pairs.push_back(std::move(r));
  }
  return report;
}

std::string report_json(const EvalReport& report) {
  json table1 = json::array();
  json table2 = json::array();
  for (const auto& a : report.aggregates()) {
    table1.push_back({{"algorithm", a.algorithm},
                      {"condition", a.condition},
                      {"nms", a.nms},
                      {"k", a.k},
                      {"epsilon", a.epsilon},
                      {"repeatability", json_double(a.repeatability)},
                      {"n_pairs", a.n_pairs},
                      {"undefined", a.repeatability_undefined}});
    table2.push_back({{"algorithm", a.algorithm},
                      {"condition", a.condition},
                      {"nms", a.nms},
                      {"k", a.k},
                      {"epsilon", a.epsilon},
                      {"h_c", json_double(a.h_c)},
                      {"h_c_pairs", a.h_c_pairs},
                      {"m_c", json_double(a.m_c)},
                      {"m_c_undefined", a.m_c_undefined},
                      {"rmse", json_double(a.rmse)},
                      {"n_residuals", a.n_residuals},
                      {"failed", a.failed}});
  }
  json failures = json::array();
  for (const auto& p : report.pairs) {
    if (!p.error.empty()) failures.push_back({{"pair_id", p.pair_id}, {"algorithm", p.algorithm}, {"error", p.error}});
  }
  const json out = {{"table1", table1}, {"table2", table2}, {"failures", failures}};
  return out.dump(2) + "\n";
}

EvalReport merge_reports(std::span<const EvalReport> reports) {
  EvalReport out;
  for (const auto& r : reports) out.pairs.insert(out.pairs.end(), r.pairs.begin(), r.pairs.end());
  return out;
}

}  // namespace fkb
