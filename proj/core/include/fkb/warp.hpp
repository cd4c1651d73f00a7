#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fkb/camera.hpp"
#include "fkb/digest.hpp"
#include "fkb/image.hpp"

namespace fkb {

/// Virtual camera move applied on the unit sphere: X' = R X + t.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  // Sampled (rx, ry, rz) in degrees; informational only.
  std::array<double, 3> euler_deg{0.0, 0.0, 0.0};

  static RigidTransform identity() { return {}; }
  // R = Rz(rz) * Ry(ry) * Rx(rx), i.e. extrinsic rotations about X, then Y, then Z.
  static RigidTransform from_euler_deg(double rx, double ry, double rz, const Eigen::Vector3d& t);

  // Throws RangeError unless R is orthonormal with det +1 and |t| < 1.
  void validate() const;
};

struct SamplingRanges {
  double rot_deg = 30.0;
  double trans = 0.3;
};

/// Draws rx, ry, rz ~ U[-rot_deg, rot_deg] and tx, ty, tz ~ U[-trans, trans]
/// (in that order) from counter stream (seed, draw_index).
/// Throws RangeError for negative ranges or trans * sqrt(3) >= 1.
RigidTransform sample_transform(std::uint64_t seed, std::uint64_t draw_index, const SamplingRanges& ranges = {});

// F(p) = project(R * unproject(p) + t). Throws OutOfDomain.
PixelPoint warp_point(const FisheyeModel& model, const RigidTransform& T, const PixelPoint& p);
// Exact inverse of warp_point. Throws OutOfDomain.
PixelPoint unwarp_point(const FisheyeModel& model, const RigidTransform& T, const PixelPoint& p);

std::optional<PixelPoint> try_warp_point(const FisheyeModel& model, const RigidTransform& T, const PixelPoint& p);
std::optional<PixelPoint> try_unwarp_point(const FisheyeModel& model, const RigidTransform& T, const PixelPoint& p);

// Positive root of mu^2 - 2 mu (y . t) + (|t|^2 - 1) = 0: the scale that puts
// mu * y - t back on the unit sphere.
double inverse_scale(const Eigen::Vector3d& unit_ray, const Eigen::Vector3d& t);

/// kForward fields render F(I) from I (sources via unwarp_point); kInverse
/// fields render F^-1(I') from I' (sources via warp_point).
enum class WarpDirection { kForward, kInverse };

/// Per-destination-pixel source coordinates plus a validity bitmap.
/// Invalid pixels store (-1, -1).
struct WarpField {
  int width = 0;
  int height = 0;
  std::vector<float> src;          // 2 * width * height, (u, v) interleaved
  std::vector<std::uint8_t> valid;  // width * height, 0 or 1
  RigidTransform transform;
  WarpDirection direction = WarpDirection::kForward;
  Sha256 model_hash{};

  bool is_valid(int x, int y) const { return valid[index(x, y)] != 0; }
  PixelPoint source(int x, int y) const {
    const std::size_t i = index(x, y);
    return {src[2 * i], src[2 * i + 1]};
  }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
  }
};

WarpField bake_warp_field(const FisheyeModel& model, const RigidTransform& T, WarpDirection direction);

struct LutPair {
  WarpField forward;
  WarpField inverse;
};

/// `count` transforms drawn with draw indices 0..count-1, each baked in both
/// directions. Work is spread over `threads` workers (0 = hardware).
std::vector<LutPair> bake_lut_set(const FisheyeModel& model, int count, std::uint64_t seed,
                                  const SamplingRanges& ranges = {}, int threads = 1);

// Bilinear resampling; invalid destination pixels are 0.
// Throws DimensionMismatch when the image and field sizes differ.
ImageF32 apply_warp(const ImageF32& img, const WarpField& field);
ImageU8 apply_warp(const ImageU8& img, const WarpField& field);

Mask valid_mask(const WarpField& field);
// Warps `mask` (nonzero = 1) through `field` and thresholds at 0.999.
Mask warp_mask(const Mask& mask, const WarpField& field);
// Overlap masks in the style of the evaluation protocol: all-ones warped by
// the inverse field (frame of I) and by the forward field (frame of I').
struct OverlapMasks {
  Mask source;  // in I
  Mask target;  // in I'
};
OverlapMasks overlap_masks(const LutPair& pair);

/// Binary field file, little-endian:
///   "FWRP", u16 version = 1, u32 width, u32 height, 9 x f64 rotation
///   (row-major), 3 x f64 translation, 32-byte model hash,
///   width*height x (f32 src_u, f32 src_v) row-major, then the validity
///   bitmap: bit i of the row-major pixel index lives in byte i / 8 at bit
///   position i % 8 (LSB first), padded to a whole byte.
std::vector<std::uint8_t> encode_warp_field(const WarpField& field);
// The direction is not stored in the file; the caller supplies it.
WarpField decode_warp_field(std::span<const std::uint8_t> bytes, WarpDirection direction);
void save_warp_field(const std::string& path, const WarpField& field);
WarpField load_warp_field(const std::string& path, WarpDirection direction);

struct LutSetManifest {
  std::uint64_t seed = 0;
  SamplingRanges ranges;
  int count = 0;
  std::string model_hash_hex;
  std::string model_json;
  std::vector<std::string> forward_files;
  std::vector<std::string> inverse_files;
  std::vector<RigidTransform> transforms;
};

// Writes lut_NNNNN_fwd.fwrp / lut_NNNNN_inv.fwrp and returns the manifest
// (not written; callers embed it in their run manifest).
LutSetManifest write_lut_set(const std::string& dir, const std::vector<LutPair>& luts, std::uint64_t seed,
                             const SamplingRanges& ranges, const FisheyeModel& model);
std::string lut_manifest_to_json(const LutSetManifest& manifest);
LutSetManifest lut_manifest_from_json(const std::string& text);
// Reads <dir>/manifest.json and the listed field files.
std::vector<LutPair> load_lut_set(const std::string& dir, LutSetManifest* manifest = nullptr);
// Pairs first .. first + count - 1 only (count < 0 = to the end).
std::vector<LutPair> load_lut_range(const std::string& dir, int first, int count,
                                    LutSetManifest* manifest = nullptr);

}  // namespace fkb
