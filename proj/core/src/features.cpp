#include "fkb/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "fkb/rng.hpp"
#include "internal/text.hpp"

namespace fkb {

namespace {

struct Tensor {
  ImageF32 xx, yy, xy;
};

// Separable window sum/average with replicated borders, accumulated in double.
std::vector<double> window_filter(const std::vector<double>& in, int w, int h, std::span<const double> kernel) {
  const int radius = static_cast<int>(kernel.size() / 2);
  std::vector<double> tmp(in.size()), out(in.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int xx = std::clamp(x + k, 0, w - 1);
        acc += kernel[static_cast<std::size_t>(k + radius)] * in[static_cast<std::size_t>(y) * w + xx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int yy = std::clamp(y + k, 0, h - 1);
        acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return out;
}

std::vector<double> window_kernel(double sigma) {
  if (sigma <= 0.0) return {1.0, 1.0, 1.0};
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  for (int i = -radius; i <= radius; ++i) k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  return k;
}

// Returns per-pixel (sum Ix^2, sum Iy^2, sum IxIy) over the window.
void structure_tensor(const ImageF32& img, const CornerParams& params, std::vector<double>& sxx,
                      std::vector<double>& syy, std::vector<double>& sxy) {
  const int w = img.width();
  const int h = img.height();
  const std::size_t n = img.size();
  std::vector<double> ixx(n), iyy(n), ixy(n);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto at = [&](int dx, int dy) { return static_cast<double>(img.at_clamped(x + dx, y + dy)); };
      const double gx = (at(1, -1) + 2.0 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2.0 * at(-1, 0) + at(-1, 1));
      const double gy = (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2.0 * at(0, -1) + at(1, -1));
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      ixx[i] = gx * gx;
      iyy[i] = gy * gy;
      ixy[i] = gx * gy;
    }
  }
  const auto kernel = window_kernel(params.window_sigma);
  sxx = window_filter(ixx, w, h, kernel);
  syy = window_filter(iyy, w, h, kernel);
  sxy = window_filter(ixy, w, h, kernel);
}

// Clockwise from 12 o'clock.
constexpr int kCircle[16][2] = {{0, -3}, {1, -3}, {2, -2}, {3, -1}, {3, 0},  {3, 1},  {2, 2},  {1, 3},
                                {0, 3},  {-1, 3}, {-2, 2}, {-3, 1}, {-3, 0}, {-3, -1}, {-2, -2}, {-1, -3}};

}  // namespace

ImageF32 harris_response(const ImageF32& img, const CornerParams& params) {
  std::vector<double> sxx, syy, sxy;
  structure_tensor(img, params, sxx, syy, sxy);
  ImageF32 out(img.width(), img.height());
  auto dst = out.pixels();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double det = sxx[i] * syy[i] - sxy[i] * sxy[i];
    const double trace = sxx[i] + syy[i];
    dst[i] = static_cast<float>(det - params.harris_k * trace * trace);
  }
  return out;
}

ImageF32 shi_tomasi_response(const ImageF32& img, const CornerParams& params) {
  std::vector<double> sxx, syy, sxy;
  structure_tensor(img, params, sxx, syy, sxy);
  ImageF32 out(img.width(), img.height());
  auto dst = out.pixels();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double half_diff = 0.5 * (sxx[i] - syy[i]);
    dst[i] = static_cast<float>(0.5 * (sxx[i] + syy[i]) - std::sqrt(half_diff * half_diff + sxy[i] * sxy[i]));
  }
  return out;
}

int fast_corner_score(const ImageU8& img, int x, int y, int arc) {
  const int centre = img(x, y);
  int diff[16];
  for (int i = 0; i < 16; ++i) diff[i] = static_cast<int>(img(x + kCircle[i][0], y + kCircle[i][1])) - centre;

  // Largest t with some arc of `arc` pixels all > centre + t (or all < centre - t).
  int best = std::numeric_limits<int>::min();
  for (int start = 0; start < 16; ++start) {
    int min_bright = std::numeric_limits<int>::max();
    int min_dark = std::numeric_limits<int>::max();
    for (int j = 0; j < arc; ++j) {
      const int d = diff[(start + j) % 16];
      min_bright = std::min(min_bright, d);
      min_dark = std::min(min_dark, -d);
    }
    best = std::max({best, min_bright - 1, min_dark - 1});
  }
  return best;
}

ImageF32 fast_score_map(const ImageU8& img, int threshold, int arc) {
  if (threshold < 1 || threshold > 254) fail(ErrorCode::kRange, "FAST threshold must lie in [1, 254]");
  if (arc < 1 || arc > 16) fail(ErrorCode::kRange, "FAST arc length must lie in [1, 16]");
  ImageF32 out(img.width(), img.height(), 0.0f);
  for (int y = 3; y < img.height() - 3; ++y) {
    for (int x = 3; x < img.width() - 3; ++x) {
      const int score = fast_corner_score(img, x, y, arc);
      if (score >= threshold) out(x, y) = static_cast<float>(score);
    }
  }
  return out;
}

KeypointSet detect_fast(const ImageU8& img, int threshold, int arc) {
  const ImageF32 scores = fast_score_map(img, threshold, arc);
  KeypointSet out;
  out.image_width = img.width();
  out.image_height = img.height();
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (scores(x, y) > 0.0f) out.points.push_back({static_cast<double>(x), static_cast<double>(y), scores(x, y)});
    }
  }
  std::sort(out.points.begin(), out.points.end(), score_order);
  return out;
}

bool score_order(const Keypoint& a, const Keypoint& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.y != b.y) return a.y < b.y;
  return a.x < b.x;
}

KeypointSet nms_topk(const ImageF32& response, int nms_size, int k, double min_response) {
  if (nms_size < 0) fail(ErrorCode::kRange, "nms_size must be >= 0");
  if (k < 1) fail(ErrorCode::kRange, "k must be >= 1");
  const int w = response.width();
  const int h = response.height();
  KeypointSet out;
  out.image_width = w;
  out.image_height = h;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float v = response(x, y);
      if (!(v > min_response)) continue;
      bool keep = true;
      const int y0 = std::max(0, y - nms_size), y1 = std::min(h - 1, y + nms_size);
      const int x0 = std::max(0, x - nms_size), x1 = std::min(w - 1, x + nms_size);
      for (int yy = y0; yy <= y1 && keep; ++yy) {
        for (int xx = x0; xx <= x1; ++xx) {
          const float q = response(xx, yy);
          // Equal neighbours earlier in raster order win the tie.
          if (q > v || (q == v && (yy < y || (yy == y && xx < x)))) {
            keep = false;
            break;
          }
        }
      }
      if (keep) out.points.push_back({static_cast<double>(x), static_cast<double>(y), static_cast<double>(v)});
    }
  }
  std::sort(out.points.begin(), out.points.end(), score_order);
  if (out.points.size() > static_cast<std::size_t>(k)) out.points.resize(static_cast<std::size_t>(k));
  return out;
}

KeypointSet nms_topk(const KeypointSet& points, int nms_size, int k) {
  if (nms_size < 0) fail(ErrorCode::kRange, "nms_size must be >= 0");
  if (k < 1) fail(ErrorCode::kRange, "k must be >= 1");
  std::vector<Keypoint> sorted = points.points;
  std::sort(sorted.begin(), sorted.end(), [](const Keypoint& a, const Keypoint& b) {
    return a.x != b.x ? a.x < b.x : a.y < b.y;
  });
  KeypointSet out;
  out.image_width = points.image_width;
  out.image_height = points.image_height;
  const double r = nms_size;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const Keypoint& p = sorted[i];
    bool keep = true;
    // Points sorted by x: scan the slab |dx| <= r in both directions.
    auto beats = [&](const Keypoint& q) {
      if (std::abs(q.y - p.y) > r) return false;
      if (q.score != p.score) return q.score > p.score;
      return q.y < p.y || (q.y == p.y && q.x < p.x);
    };
    for (std::size_t j = i; j-- > 0 && keep;) {
      if (p.x - sorted[j].x > r) break;
      if (beats(sorted[j])) keep = false;
    }
    for (std::size_t j = i + 1; j < sorted.size() && keep; ++j) {
      if (sorted[j].x - p.x > r) break;
      if (beats(sorted[j])) keep = false;
    }
    if (keep) out.points.push_back(p);
  }
  std::sort(out.points.begin(), out.points.end(), score_order);
  if (out.points.size() > static_cast<std::size_t>(k)) out.points.resize(static_cast<std::size_t>(k));
  return out;
}

std::string to_string(DetectorAlgo algo) {
  switch (algo) {
    case DetectorAlgo::kHarris: return "harris";
    case DetectorAlgo::kShi: return "shi";
    case DetectorAlgo::kFast: return "fast";
  }
  return "unknown";
}

DetectorAlgo detector_from_string(const std::string& name) {
  if (name == "harris") return DetectorAlgo::kHarris;
  if (name == "shi") return DetectorAlgo::kShi;
  if (name == "fast") return DetectorAlgo::kFast;
  fail(ErrorCode::kUsage, "unknown detector '" + name + "' (expected harris, shi or fast)");
}

ImageF32 response_map(const ImageF32& img, const DetectorConfig& config) {
  switch (config.algo) {
    case DetectorAlgo::kHarris: return harris_response(img, config.corner);
    case DetectorAlgo::kShi: return shi_tomasi_response(img, config.corner);
    case DetectorAlgo::kFast: return fast_score_map(to_u8(img), config.fast_threshold);
  }
  fail(ErrorCode::kInternal, "unhandled detector");
}

KeypointSet detect(const ImageF32& img, const DetectorConfig& config) {
  const ImageF32 response = response_map(img, config);
  double floor = 0.0;
  if (config.algo != DetectorAlgo::kFast) {
    const auto px = response.pixels();
    const float peak = px.empty() ? 0.0f : *std::max_element(px.begin(), px.end());
    // Absolute floor keeps numerically flat images from producing detections.
    floor = std::max(1e-10, config.quality * static_cast<double>(peak));
  }
  return nms_topk(response, config.nms_size, config.k, floor);
}

BriefPattern make_brief_pattern(std::uint64_t pattern_seed) {
  CounterRng rng(pattern_seed, StreamDomain::kBriefPattern, 0);
  constexpr double kSigma = kBriefPatchSize / 5.0;
  constexpr int kHalf = kBriefPatchSize / 2;
  const auto draw = [&] {
    const double v = std::round(rng.gaussian() * kSigma);
    return static_cast<int>(std::clamp(v, -static_cast<double>(kHalf), static_cast<double>(kHalf)));
  };
  BriefPattern pattern;
  pattern.pairs.reserve(kBriefBits);
  for (int i = 0; i < kBriefBits; ++i) {
    std::array<int, 4> p{draw(), draw(), draw(), draw()};
    pattern.pairs.push_back(p);
  }
  return pattern;
}

DescribedKeypoints describe_brief(const ImageU8& img, const KeypointSet& kps, std::uint64_t pattern_seed) {
  return describe_brief(img, kps, make_brief_pattern(pattern_seed));
}

DescribedKeypoints describe_brief(const ImageU8& img, const KeypointSet& kps, const BriefPattern& pattern) {
  const int w = img.width();
  const int h = img.height();
  // Integral image for the 5x5 box sums.
  std::vector<std::int64_t> integral(static_cast<std::size_t>(w + 1) * (h + 1), 0);
  for (int y = 0; y < h; ++y) {
    std::int64_t row = 0;
    for (int x = 0; x < w; ++x) {
      row += img(x, y);
      integral[static_cast<std::size_t>(y + 1) * (w + 1) + x + 1] = integral[static_cast<std::size_t>(y) * (w + 1) + x + 1] + row;
    }
  }
  const auto box5 = [&](int cx, int cy) {
    const auto at = [&](int x, int y) { return integral[static_cast<std::size_t>(y) * (w + 1) + x]; };
    return at(cx + 3, cy + 3) - at(cx - 2, cy + 3) - at(cx + 3, cy - 2) + at(cx - 2, cy - 2);
  };

  DescribedKeypoints out;
  out.keypoints.image_width = kps.image_width ? kps.image_width : w;
  out.keypoints.image_height = kps.image_height ? kps.image_height : h;
  out.descriptors.type = DescriptorType::kBinary;
  out.descriptors.dim = static_cast<int>(pattern.pairs.size());
  const std::size_t row_bytes = out.descriptors.row_bytes();
  for (const auto& kp : kps.points) {
    const int x = static_cast<int>(std::floor(kp.x + 0.5));
    const int y = static_cast<int>(std::floor(kp.y + 0.5));
    if (x < kBriefBorder || y < kBriefBorder || x > w - 1 - kBriefBorder || y > h - 1 - kBriefBorder) continue;
    out.keypoints.points.push_back(kp);
    const std::size_t base = out.descriptors.bits.size();
    out.descriptors.bits.resize(base + row_bytes, 0);
    for (std::size_t i = 0; i < pattern.pairs.size(); ++i) {
      const auto& p = pattern.pairs[i];
      if (box5(x + p[0], y + p[1]) < box5(x + p[2], y + p[3])) {
        out.descriptors.bits[base + i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
      }
    }
  }
  out.descriptors.count = out.keypoints.size();
  return out;
}

int hamming_distance(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  int d = 0;
  std::size_t i = 0;
  for (; i + 8 <= a.size(); i += 8) {
    std::uint64_t x, y;
    std::memcpy(&x, a.data() + i, 8);
    std::memcpy(&y, b.data() + i, 8);
    d += std::popcount(x ^ y);
  }
  for (; i < a.size(); ++i) d += std::popcount(static_cast<unsigned>(a[i] ^ b[i]));
  return d;
}

MatchSet match_nn(const DescriptorSet& a, const DescriptorSet& b) {
  if (a.type != b.type || a.dim != b.dim) fail(ErrorCode::kDtypeMismatch, "descriptor types or dimensions differ");
  MatchSet matches;
  if (b.count == 0) return matches;
  matches.reserve(a.count);
  for (std::size_t i = 0; i < a.count; ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b.count; ++j) {
      double d;
      if (a.type == DescriptorType::kBinary) {
        d = hamming_distance(a.binary_row(i), b.binary_row(j));
      } else {
        const auto ra = a.float_row(i);
        const auto rb = b.float_row(j);
        double sq = 0.0;
        for (std::size_t k = 0; k < ra.size(); ++k) {
          const double diff = static_cast<double>(ra[k]) - rb[k];
          sq += diff * diff;
        }
        d = sq;
      }
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    if (a.type == DescriptorType::kFloat) best_d = std::sqrt(best_d);
    matches.push_back({i, best, best_d});
  }
  return matches;
}

KeypointSet read_keypoints_csv(const std::string& path) {
  const auto lines = internal::read_lines(path);
  if (lines.empty() || internal::trim(lines[0]) != "x,y,score") {
    fail(ErrorCode::kFormat, path + ": expected header 'x,y,score'");
  }
  KeypointSet out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (internal::trim(lines[i]).empty()) continue;
    const auto f = internal::split(lines[i], ',');
    const std::string where = path + ":" + std::to_string(i + 1);
    if (f.size() != 3) fail(ErrorCode::kFormat, where + ": expected 3 fields");
    Keypoint kp{internal::parse_double(f[0], where), internal::parse_double(f[1], where),
                internal::parse_double(f[2], where)};
    if (!std::isfinite(kp.x) || !std::isfinite(kp.y) || !std::isfinite(kp.score)) {
      fail(ErrorCode::kFormat, where + ": non-finite keypoint");
    }
    out.points.push_back(kp);
  }
  return out;
}

void write_keypoints_csv(const std::string& path, const KeypointSet& kps) {
  std::string text = "x,y,score\n";
  for (const auto& p : kps.points) {
    text += internal::format_double(p.x) + "," + internal::format_double(p.y) + "," + internal::format_double(p.score) +
            "\n";
  }
  internal::write_text_file(path, text);
}

namespace {

constexpr char kDescMagic[4] = {'F', 'D', 'S', 'C'};
constexpr std::uint16_t kDescVersion = 1;

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) fail(ErrorCode::kFormat, "truncated descriptor file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in[pos + i]) << (8 * i));
  pos += sizeof(U);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_descriptors(const DescriptorSet& desc) {
  std::vector<std::uint8_t> out(kDescMagic, kDescMagic + 4);
  put_le(out, kDescVersion);
  out.push_back(static_cast<std::uint8_t>(desc.type));
  put_le(out, static_cast<std::uint32_t>(desc.count));
  put_le(out, static_cast<std::uint32_t>(desc.dim));
  if (desc.type == DescriptorType::kBinary) {
    out.insert(out.end(), desc.bits.begin(), desc.bits.end());
  } else {
    for (float v : desc.values) put_le(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

DescriptorSet decode_descriptors(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kDescMagic, kDescMagic + 4, bytes.begin())) {
    fail(ErrorCode::kFormat, "bad descriptor file magic");
  }
  std::size_t pos = 4;
  if (get_le<std::uint16_t>(bytes, pos) != kDescVersion) fail(ErrorCode::kFormat, "unsupported descriptor version");
  const std::uint8_t dtype = get_le<std::uint8_t>(bytes, pos);
  if (dtype > 1) fail(ErrorCode::kFormat, "unknown descriptor dtype");
  DescriptorSet d;
  d.type = static_cast<DescriptorType>(dtype);
  d.count = get_le<std::uint32_t>(bytes, pos);
  d.dim = static_cast<int>(get_le<std::uint32_t>(bytes, pos));
  if (d.dim <= 0) fail(ErrorCode::kFormat, "descriptor dimension must be positive");
  const std::size_t payload = d.type == DescriptorType::kBinary ? d.count * d.row_bytes()
                                                                : d.count * static_cast<std::size_t>(d.dim) * 4;
  if (bytes.size() - pos != payload) fail(ErrorCode::kFormat, "descriptor payload size mismatch");
  if (d.type == DescriptorType::kBinary) {
    d.bits.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  } else {
    d.values.resize(d.count * static_cast<std::size_t>(d.dim));
    for (auto& v : d.values) v = std::bit_cast<float>(get_le<std::uint32_t>(bytes, pos));
  }
  return d;
}

void save_descriptors(const std::string& path, const DescriptorSet& desc) {
  const auto bytes = encode_descriptors(desc);
  internal::write_text_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

DescriptorSet load_descriptors(const std::string& path) {
  const std::string text = internal::read_text_file(path);
  return decode_descriptors(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_matches_csv(const std::string& path, const MatchSet& matches) {
  std::string text = "index_a,index_b,distance\n";
  for (const auto& m : matches) {
    text += std::to_string(m.index_a) + "," + std::to_string(m.index_b) + "," + internal::format_double(m.distance) + "\n";
  }
  internal::write_text_file(path, text);
}

MatchSet read_matches_csv(const std::string& path) {
  const auto lines = internal::read_lines(path);
  if (lines.empty() || internal::trim(lines[0]) != "index_a,index_b,distance") {
    fail(ErrorCode::kFormat, path + ": expected header 'index_a,index_b,distance'");
  }
  MatchSet out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (internal::trim(lines[i]).empty()) continue;
    const auto f = internal::split(lines[i], ',');
    const std::string where = path + ":" + std::to_string(i + 1);
    if (f.size() != 3) fail(ErrorCode::kFormat, where + ": expected 3 fields");
    const double a = internal::parse_double(f[0], where);
    const double b = internal::parse_double(f[1], where);
    if (a < 0 || b < 0) fail(ErrorCode::kFormat, where + ": negative index");
    out.push_back({static_cast<std::size_t>(a), static_cast<std::size_t>(b), internal::parse_double(f[2], where)});
  }
  return out;
}

ExternalFeatures load_external(const std::string& keypoint_path, const std::string& descriptor_path) {
  ExternalFeatures ext;
  ext.keypoints = read_keypoints_csv(keypoint_path);
  ext.descriptors = load_descriptors(descriptor_path);
  if (ext.keypoints.size() != ext.descriptors.count) {
    fail(ErrorCode::kCountMismatch, keypoint_path + " has " + std::to_string(ext.keypoints.size()) + " rows but " +
                                        descriptor_path + " has " + std::to_string(ext.descriptors.count));
  }
  if (ext.descriptors.type == DescriptorType::kFloat) {
    std::size_t fixed = 0;
    std::size_t zero = 0;
    const auto dim = static_cast<std::size_t>(ext.descriptors.dim);
    for (std::size_t i = 0; i < ext.descriptors.count; ++i) {
      float* row = ext.descriptors.values.data() + i * dim;
      double sq = 0.0;
      for (std::size_t k = 0; k < dim; ++k) sq += static_cast<double>(row[k]) * row[k];
      const double norm = std::sqrt(sq);
      if (std::abs(norm - 1.0) <= 1e-6) continue;
      if (norm == 0.0) {
        ++zero;
        continue;
      }
      for (std::size_t k = 0; k < dim; ++k) row[k] = static_cast<float>(row[k] / norm);
      ++fixed;
    }
    if (fixed > 0) {
      ext.warnings.push_back(descriptor_path + ": normalized " + std::to_string(fixed) + " non-unit descriptor rows");
    }
    if (zero > 0) ext.warnings.push_back(descriptor_path + ": " + std::to_string(zero) + " all-zero descriptor rows");
  }
  return ext;
}

}  // namespace fkb
