#include "fkb/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <memory>

#include "fkb/parallel.hpp"
#include "internal/text.hpp"
#include "json.hpp"

namespace fkb {
namespace {

using nlohmann::json;

// Detections closer than this to an integer are snapped so that identity
// warps reproduce integer detector output bit for bit.
constexpr double kSnap = 1e-9;

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < kSnap ? r : v;
}

// Valid pixels with no invalid pixel within Chebyshev distance `margin`.
// The image boundary itself does not erode.
std::vector<std::uint8_t> erode_valid(const WarpField& field, int margin) {
  const int w = field.width;
  const int h = field.height;
  std::vector<std::uint8_t> out = field.valid;
  if (margin <= 0) return out;
  std::vector<std::uint8_t> tmp(out.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 1;
      for (int d = std::max(0, x - margin); d <= std::min(w - 1, x + margin) && v; ++d) {
        v = field.valid[field.index(d, y)];
      }
      tmp[field.index(x, y)] = v;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 1;
      for (int d = std::max(0, y - margin); d <= std::min(h - 1, y + margin) && v; ++d) {
        v = tmp[field.index(x, d)];
      }
      out[field.index(x, y)] = v;
    }
  }
  return out;
}

// Separable filter with weights taps[|d|] for |d| < taps.size().
std::vector<double> filter_separable(const std::vector<double>& in, int w, int h, const std::vector<double>& taps) {
  const int r = static_cast<int>(taps.size()) - 1;
  std::vector<double> tmp(in.size(), 0.0);
  std::vector<double> out(in.size(), 0.0);
  const auto at = [w](int x, int y) { return static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + x; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d) {
        const int xx = x + d;
        if (xx >= 0 && xx < w) acc += taps[static_cast<std::size_t>(std::abs(d))] * in[at(xx, y)];
      }
      tmp[at(x, y)] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d) {
        const int yy = y + d;
        if (yy >= 0 && yy < h) acc += taps[static_cast<std::size_t>(std::abs(d))] * tmp[at(x, yy)];
      }
      out[at(x, y)] = acc;
    }
  }
  return out;
}

void splat(std::vector<double>& acc, int w, int h, double x, double y) {
  x = snap(x);
  y = snap(y);
  const double fx0 = std::floor(x);
  const double fy0 = std::floor(y);
  const int x0 = static_cast<int>(fx0);
  const int y0 = static_cast<int>(fy0);
  const double ax = x - fx0;
  const double ay = y - fy0;
  const double wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  for (int i = 0; i < 4; ++i) {
    if (wts[i] == 0.0 || xs[i] < 0 || ys[i] < 0 || xs[i] >= w || ys[i] >= h) continue;
    acc[static_cast<std::size_t>(ys[i]) * static_cast<std::size_t>(w) + xs[i]] += wts[i];
  }
}

// Adds one warp's box-window vote mass, capped at 1 per pixel, to support at
// the pixels that warp covers.
// The cap keeps support / coverage a fraction of warps even when a warp
// fires twice inside one window.
void support_one_warp(const std::vector<PixelPoint>& points, const std::vector<std::uint8_t>& covered, int w, int h,
                      int radius, std::vector<double>& scratch, std::vector<int>& stamp, int warp,
                      std::vector<double>& support) {
  std::vector<std::size_t> touched;
  for (const auto& p : points) {
    const double x = snap(p.u);
    const double y = snap(p.v);
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    for (int yy = y0; yy <= y0 + 1; ++yy) {
      for (int xx = x0; xx <= x0 + 1; ++xx) {
        if (xx >= 0 && yy >= 0 && xx < w && yy < h) touched.push_back(static_cast<std::size_t>(yy) * w + xx);
      }
    }
  }
  for (const auto& p : points) splat(scratch, w, h, p.u, p.v);
  for (const std::size_t t : touched) {
    const int tx = static_cast<int>(t % static_cast<std::size_t>(w));
    const int ty = static_cast<int>(t / static_cast<std::size_t>(w));
    for (int y = std::max(0, ty - radius); y <= std::min(h - 1, ty + radius); ++y) {
      for (int x = std::max(0, tx - radius); x <= std::min(w - 1, tx + radius); ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (stamp[i] == warp || (!covered.empty() && !covered[i])) continue;
        stamp[i] = warp;
        double s = 0.0;
        for (int yy = std::max(0, y - radius); yy <= std::min(h - 1, y + radius); ++yy) {
          for (int xx = std::max(0, x - radius); xx <= std::min(w - 1, x + radius); ++xx) {
            s += scratch[static_cast<std::size_t>(yy) * w + xx];
          }
        }
        support[i] += std::min(1.0, s);
      }
    }
  }
  for (const std::size_t t : touched) scratch[t] = 0.0;
}

// What one warp contributes, computed independently per warp.
struct WarpContribution {
  std::vector<PixelPoint> points;    // point-vote: unwarped detections
  std::vector<float> response;       // heatmap: back-warped response (0 where uncovered)
  std::vector<std::uint8_t> covered;  // empty = everything covered
};

WarpContribution contribute(const ImageF32& img, const BaseDetector& detector, const FisheyeModel& model,
                            const LutPair* lut, int index, const AdaptationConfig& cfg) {
  WarpContribution c;
  const int w = img.width();
  const int h = img.height();
  const WarpContext ctx{lut, index};
  if (lut == nullptr) {
    if (cfg.accumulation == Accumulation::kPointVote) {
      for (const auto& kp : detector.detect(img, ctx).points) c.points.push_back({kp.x, kp.y});
    } else {
      const ImageF32 r = detector.response(img);
      c.response.assign(r.pixels().begin(), r.pixels().end());
    }
    return c;
  }

  const ImageF32 warped = apply_warp(img, lut->forward);
  const std::vector<std::uint8_t> inside = erode_valid(lut->forward, cfg.border_margin);
  const WarpField& inv = lut->inverse;
  c.covered.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!inv.is_valid(x, y)) continue;
      const PixelPoint q = inv.source(x, y);
      const int qx = static_cast<int>(std::lround(q.u));
      const int qy = static_cast<int>(std::lround(q.v));
      if (inside[lut->forward.index(qx, qy)]) c.covered[inv.index(x, y)] = 1;
    }
  }

  if (cfg.accumulation == Accumulation::kPointVote) {
    const KeypointSet kps = detector.detect(warped, ctx);
    const double max_u = w - 1;
    const double max_v = h - 1;
    for (const auto& kp : kps.points) {
      const int ix = static_cast<int>(std::lround(kp.x));
      const int iy = static_cast<int>(std::lround(kp.y));
      if (ix < 0 || iy < 0 || ix >= w || iy >= h || !inside[lut->forward.index(ix, iy)]) continue;
      const auto p = try_unwarp_point(model, lut->forward.transform, {kp.x, kp.y});
      if (!p || p->u < -kSnap || p->v < -kSnap || p->u > max_u + kSnap || p->v > max_v + kSnap) continue;
      c.points.push_back(*p);
    }
  } else {
    const ImageF32 r = detector.response(warped);
    c.response.assign(c.covered.size(), 0.0f);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = inv.index(x, y);
        if (!c.covered[i]) continue;
        const PixelPoint q = inv.source(x, y);
        c.response[i] = bilinear_sample(r, q.u, q.v);
      }
    }
  }
  return c;
}

KeypointSet extract_superset(const ImageF32& normalized, const std::vector<double>& tiebreak,
                             const AdaptationConfig& cfg, double threshold) {
  // NMS runs on normalized + a tiny fraction of the tent-weighted votes so
  // plateaus of equal support resolve to the pixel nearest the votes.
  ImageF32 key(normalized.width(), normalized.height(), 0.0f);
  const auto px = normalized.pixels();
  auto kx = key.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (px[i] >= threshold && px[i] > 0.0f) {
      kx[i] = px[i] + (tiebreak.empty() ? 0.0f : static_cast<float>(1e-4 * tiebreak[i]));
    }
  }
  KeypointSet out = nms_topk(key, cfg.nms_size, cfg.k, 0.0);
  for (auto& kp : out.points) {
    kp.score = normalized(static_cast<int>(kp.x), static_cast<int>(kp.y));
  }
  std::stable_sort(out.points.begin(), out.points.end(), score_order);
  return out;
}

}  // namespace

std::string to_string(Accumulation mode) {
  return mode == Accumulation::kPointVote ? "point-vote" : "heatmap";
}

Accumulation accumulation_from_string(const std::string& name) {
  if (name == "point-vote") return Accumulation::kPointVote;
  if (name == "heatmap") return Accumulation::kHeatmap;
  fail(ErrorCode::kUsage, "unknown accumulation mode: " + name);
}

void AdaptationConfig::validate() const {
  if (n_warps < 1) fail(ErrorCode::kRange, "n_warps must be >= 1");
  if (vote_radius < 0) fail(ErrorCode::kRange, "vote_radius must be >= 0");
  if (!(superset_threshold > 0.0) || !std::isfinite(superset_threshold)) {
    fail(ErrorCode::kRange, "superset_threshold must be positive");
  }
  if (nms_size < 0) fail(ErrorCode::kRange, "nms_size must be >= 0");
  if (k < 1) fail(ErrorCode::kRange, "k must be >= 1");
  if (border_margin < 0) fail(ErrorCode::kRange, "border_margin must be >= 0");
  if (n_warps + (include_identity ? 1 : 0) > std::numeric_limits<std::uint16_t>::max()) {
    fail(ErrorCode::kRange, "too many warps for a 16-bit coverage count");
  }
}

BaseDetector builtin_detector(const DetectorConfig& config) {
  BaseDetector d;
  d.name = to_string(config.algo);
  d.response = [config](const ImageF32& img) { return response_map(img, config); };
  d.detect = [config](const ImageF32& img, const WarpContext&) { return detect(img, config); };
  return d;
}

BaseDetector lookup_detector(KeypointSet superset, FisheyeModel model) {
  BaseDetector d;
  d.name = "lookup";
  auto points = std::make_shared<const KeypointSet>(std::move(superset));
  auto cam = std::make_shared<const FisheyeModel>(std::move(model));
  d.detect = [points, cam](const ImageF32& img, const WarpContext& ctx) {
    KeypointSet out;
    out.image_width = img.width();
    out.image_height = img.height();
    const double max_u = img.width() - 1;
    const double max_v = img.height() - 1;
    for (const auto& kp : points->points) {
      if (ctx.lut == nullptr) {
        out.points.push_back(kp);
        continue;
      }
      const auto q = try_warp_point(*cam, ctx.lut->forward.transform, {kp.x, kp.y});
      if (!q || q->u < 0 || q->v < 0 || q->u > max_u || q->v > max_v) continue;
      out.points.push_back({q->u, q->v, kp.score});
    }
    return out;
  };
  d.response = [points](const ImageF32& img) {
    ImageF32 r(img.width(), img.height(), 0.0f);
    for (const auto& kp : points->points) {
      const int x = static_cast<int>(std::lround(kp.x));
      const int y = static_cast<int>(std::lround(kp.y));
      if (x >= 0 && y >= 0 && x < img.width() && y < img.height()) r(x, y) = static_cast<float>(kp.score);
    }
    return r;
  };
  return d;
}

AdaptationResult adapt_image(const ImageF32& img, const BaseDetector& detector, const FisheyeModel& model,
                             std::span<const LutPair> luts, const AdaptationConfig& cfg) {
  cfg.validate();
  if (luts.empty()) fail(ErrorCode::kEmptyLutSet, "adaptation needs at least one warp field pair");
  if (luts.size() < static_cast<std::size_t>(cfg.n_warps)) {
    fail(ErrorCode::kRange, "n_warps exceeds the number of available warp fields");
  }
  const int w = img.width();
  const int h = img.height();
  if (w != model.width() || h != model.height()) {
    fail(ErrorCode::kDimensionMismatch, "image size differs from the camera model");
  }
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.n_warps); ++i) {
    const auto& l = luts[i];
    if (l.forward.width != w || l.forward.height != h || l.inverse.width != w || l.inverse.height != h) {
      fail(ErrorCode::kDimensionMismatch, "warp field size differs from the image");
    }
  }
  if (cfg.accumulation == Accumulation::kHeatmap && !detector.response) {
    fail(ErrorCode::kUsage, "heatmap accumulation needs a detector with a response map");
  }

  const std::size_t n_px = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<double> votes(n_px, 0.0);
  std::vector<std::uint16_t> coverage(n_px, 0);
  std::vector<double> support(n_px, 0.0);
  std::vector<double> scratch(n_px, 0.0);
  std::vector<int> stamp(n_px, -1);

  // Jobs: optional identity first, then LUTs in order.
  const std::size_t offset = cfg.include_identity ? 1 : 0;
  const std::size_t jobs = static_cast<std::size_t>(cfg.n_warps) + offset;
  const int threads = resolve_threads(cfg.threads);
  const std::size_t batch = std::max<std::size_t>(8, 2 * static_cast<std::size_t>(threads));

  for (std::size_t start = 0; start < jobs; start += batch) {
    const std::size_t end = std::min(jobs, start + batch);
    std::vector<WarpContribution> parts(end - start);
    parallel_for(parts.size(), threads, [&](std::size_t j) {
      const std::size_t job = start + j;
      const bool identity = job < offset;
      const LutPair* lut = identity ? nullptr : &luts[job - offset];
      const int index = identity ? -1 : static_cast<int>(job - offset);
      parts[j] = contribute(img, detector, model, lut, index, cfg);
    });
    // Ordered reduction keeps the result independent of the thread count.
    for (const auto& c : parts) {
      for (std::size_t i = 0; i < n_px; ++i) {
        if (c.covered.empty() || c.covered[i]) ++coverage[i];
      }
      if (cfg.accumulation == Accumulation::kPointVote) {
        for (const auto& p : c.points) splat(votes, w, h, p.u, p.v);
        support_one_warp(c.points, c.covered, w, h, cfg.vote_radius, scratch, stamp, static_cast<int>(start + (&c - parts.data())),
                         support);
      } else {
        for (std::size_t i = 0; i < n_px; ++i) votes[i] += c.response[i];
      }
    }
  }

  AdaptationResult result;
  result.accumulator.width = w;
  result.accumulator.height = h;
  result.accumulator.votes.assign(votes.begin(), votes.end());
  result.accumulator.coverage = coverage;
  result.normalized = ImageF32(w, h, 0.0f);
  auto norm = result.normalized.pixels();

  if (cfg.accumulation == Accumulation::kPointVote) {
    const std::size_t r = static_cast<std::size_t>(cfg.vote_radius);
    std::vector<double> tent(r + 1);
    for (std::size_t d = 0; d <= r; ++d) tent[d] = 1.0 - static_cast<double>(d) / static_cast<double>(r + 1);
    std::vector<double> peak = filter_separable(votes, w, h, tent);
    for (std::size_t i = 0; i < n_px; ++i) {
      if (coverage[i] == 0) {
        peak[i] = 0.0;
        continue;
      }
      norm[i] = static_cast<float>(support[i] / coverage[i]);
      peak[i] /= coverage[i];
    }
    result.superset = extract_superset(result.normalized, peak, cfg, cfg.superset_threshold);
  } else {
    for (std::size_t i = 0; i < n_px; ++i) {
      if (coverage[i] != 0) norm[i] = static_cast<float>(votes[i] / coverage[i]);
    }
    const float top = *std::max_element(norm.begin(), norm.end());
    const double threshold = top > 0.0f ? cfg.superset_threshold * top : std::numeric_limits<double>::infinity();
    result.superset = extract_superset(result.normalized, {}, cfg, threshold);
  }
  result.superset.image_width = w;
  result.superset.image_height = h;
  return result;
}

AdaptationResult adapt_rounds(const ImageF32& img, const BaseDetector& detector, const FisheyeModel& model,
                              std::span<const LutPair> luts, const AdaptationConfig& config, int rounds) {
  if (rounds < 1) fail(ErrorCode::kRange, "rounds must be >= 1");
  AdaptationResult result = adapt_image(img, detector, model, luts, config);
  for (int r = 1; r < rounds; ++r) {
    result = adapt_image(img, lookup_detector(result.superset, model), model, luts, config);
  }
  return result;
}

void export_labels(const KeypointSet& superset, const std::string& path) {
  if (superset.empty()) fail(ErrorCode::kEmptyInput, "refusing to write an empty label set: " + path);
  write_keypoints_csv(path, superset);
}

std::vector<std::string> adapt_corpus(std::span<const std::string> image_paths, const BaseDetector& detector,
                                      const FisheyeModel& model, std::span<const LutPair> luts,
                                      const AdaptationConfig& config, const CorpusOptions& options) {
  namespace fs = std::filesystem;
  if (image_paths.empty()) fail(ErrorCode::kEmptyDataset, "no images to adapt");
  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create output directory " + options.out_dir + ": " + ec.message());

  std::vector<std::string> labels;
  json files = json::array();
  for (std::size_t i = 0; i < image_paths.size(); ++i) {
    ImageF32 img = to_float(load_image(image_paths[i]));
    if (options.width > 0 && options.height > 0 && (img.width() != options.width || img.height() != options.height)) {
      img = resize_bilinear(img, options.width, options.height);
    }
    const AdaptationResult res = adapt_rounds(img, detector, model, luts, config, options.rounds);
    char prefix[32];
    std::snprintf(prefix, sizeof prefix, "%05zu_", i);
    const std::string name = prefix + fs::path(image_paths[i]).stem().string() + ".csv";
    const std::string path = (fs::path(options.out_dir) / name).string();
    export_labels(res.superset, path);
    labels.push_back(path);
    files.push_back({{"image", image_paths[i]}, {"labels", name}, {"count", res.superset.size()}});
  }

  json manifest = options.manifest_extra_json.empty() ? json::object() : json::parse(options.manifest_extra_json);
  manifest["adaptation"] = {
      {"seed", options.seed},
      {"n_warps", config.n_warps},
      {"include_identity", config.include_identity},
      {"accumulation", to_string(config.accumulation)},
      {"vote_radius", config.vote_radius},
      {"superset_threshold", config.superset_threshold},
      {"nms_size", config.nms_size},
      {"k", config.k},
      {"border_margin", config.border_margin},
      {"rounds", options.rounds},
      {"resize", {options.width, options.height}},
      {"detector", detector.name},
      {"model_hash", to_hex(model.digest())},
      {"files", files},
  };
  internal::write_text_file((fs::path(options.out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
  return labels;
}

}  // namespace fkb
