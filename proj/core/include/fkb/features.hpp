#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fkb/image.hpp"

namespace fkb {

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double score = 0.0;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct KeypointSet {
  std::vector<Keypoint> points;
  int image_width = 0;
  int image_height = 0;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

enum class DescriptorType : std::uint8_t { kBinary = 0, kFloat = 1 };

/// Row-aligned descriptors. Binary rows are packed bits (LSB first within
/// each byte, ceil(dim / 8) bytes per row); float rows hold `dim` floats.
struct DescriptorSet {
  DescriptorType type = DescriptorType::kBinary;
  int dim = 0;
  std::size_t count = 0;
  std::vector<std::uint8_t> bits;
  std::vector<float> values;

  std::size_t row_bytes() const { return (static_cast<std::size_t>(dim) + 7) / 8; }
  std::span<const std::uint8_t> binary_row(std::size_t i) const {
    return std::span(bits).subspan(i * row_bytes(), row_bytes());
  }
  std::span<const float> float_row(std::size_t i) const {
    return std::span(values).subspan(i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim));
  }
};

struct Match {
  std::size_t index_a = 0;
  std::size_t index_b = 0;
  double distance = 0.0;  // Hamming bits or L2
};

using MatchSet = std::vector<Match>;

// ---------------------------------------------------------------------------
// Response maps

struct CornerParams {
  double harris_k = 0.04;
  // 0 selects a 3x3 box window; > 0 a Gaussian window truncated at 3 sigma.
  double window_sigma = 0.0;
};

// Structure tensor from 3x3 Sobel gradients (replicated borders).
ImageF32 harris_response(const ImageF32& img, const CornerParams& params = {});
// Smaller eigenvalue of the structure tensor.
ImageF32 shi_tomasi_response(const ImageF32& img, const CornerParams& params = {});

/// FAST segment test on the radius-3 Bresenham circle: a pixel is a corner if
/// at least `arc` contiguous circle pixels are all > centre + threshold or
/// all < centre - threshold. The score is the largest threshold for which
/// this still holds. 3-pixel border excluded.
KeypointSet detect_fast(const ImageU8& img, int threshold = 20, int arc = 9);
// Dense FAST score map (0 where the pixel is not a corner).
ImageF32 fast_score_map(const ImageU8& img, int threshold = 20, int arc = 9);
int fast_corner_score(const ImageU8& img, int x, int y, int arc = 9);

// ---------------------------------------------------------------------------
// Non-maximum suppression

/// A pixel survives iff its response exceeds `min_response` and it is a
/// strict maximum over the (2 * nms_size + 1)^2 window, equal responses
/// resolved in favour of the lower (row, col). Survivors are sorted by
/// descending score, then (row, col), and truncated to k.
KeypointSet nms_topk(const ImageF32& response, int nms_size, int k, double min_response = 0.0);
// Same rule for sparse points; window membership uses |dx|, |dy| <= nms_size.
KeypointSet nms_topk(const KeypointSet& points, int nms_size, int k);

// Score order used everywhere: descending score, then ascending (y, x).
bool score_order(const Keypoint& a, const Keypoint& b);

enum class DetectorAlgo { kHarris, kShi, kFast };

std::string to_string(DetectorAlgo algo);
DetectorAlgo detector_from_string(const std::string& name);

struct DetectorConfig {
  DetectorAlgo algo = DetectorAlgo::kHarris;
  int nms_size = 4;
  int k = 300;
  CornerParams corner;
  int fast_threshold = 20;
  // Harris/Shi responses must exceed quality * max(response) (and 0).
  double quality = 0.01;
};

ImageF32 response_map(const ImageF32& img, const DetectorConfig& config);
KeypointSet detect(const ImageF32& img, const DetectorConfig& config);

// ---------------------------------------------------------------------------
// Description and matching

constexpr int kBriefBits = 256;
constexpr int kBriefPatchSize = 31;
// Half patch plus the 5x5 smoothing radius.
constexpr int kBriefBorder = 17;

struct BriefPattern {
  // (x1, y1, x2, y2) offsets relative to the keypoint, each in [-15, 15].
  std::vector<std::array<int, 4>> pairs;
};

// Offsets ~ N(0, (31/5)^2) clipped to the patch, drawn from pattern_seed.
BriefPattern make_brief_pattern(std::uint64_t pattern_seed);

struct DescribedKeypoints {
  KeypointSet keypoints;  // keypoints closer than kBriefBorder to the edge are dropped
  DescriptorSet descriptors;
};

DescribedKeypoints describe_brief(const ImageU8& img, const KeypointSet& kps, std::uint64_t pattern_seed = 0);
DescribedKeypoints describe_brief(const ImageU8& img, const KeypointSet& kps, const BriefPattern& pattern);

int hamming_distance(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// For every row of a, the nearest row of b (Hamming or L2), ties to the
/// lowest index. No ratio test, no cross-check. Throws DtypeMismatch.
MatchSet match_nn(const DescriptorSet& a, const DescriptorSet& b);

// ---------------------------------------------------------------------------
// Files

// CSV with header "x,y,score"; row order is preserved.
KeypointSet read_keypoints_csv(const std::string& path);
void write_keypoints_csv(const std::string& path, const KeypointSet& kps);

/// Descriptor file, little-endian: "FDSC", u16 version = 1, u8 dtype
/// (0 = binary, 1 = f32), u32 count, u32 dim (bits or floats), then rows.
std::vector<std::uint8_t> encode_descriptors(const DescriptorSet& desc);
DescriptorSet decode_descriptors(std::span<const std::uint8_t> bytes);
void save_descriptors(const std::string& path, const DescriptorSet& desc);
DescriptorSet load_descriptors(const std::string& path);

// CSV "index_a,index_b,distance".
void write_matches_csv(const std::string& path, const MatchSet& matches);
MatchSet read_matches_csv(const std::string& path);

struct ExternalFeatures {
  KeypointSet keypoints;
  DescriptorSet descriptors;
  std::vector<std::string> warnings;
};

/// Loads an externally computed keypoint CSV and descriptor file. Float rows
/// that are not unit length are normalized and reported in `warnings`.
/// Throws FormatError or CountMismatch.
ExternalFeatures load_external(const std::string& keypoint_path, const std::string& descriptor_path);

}  // namespace fkb
