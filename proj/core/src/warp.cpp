#include "fkb/warp.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include <Eigen/Geometry>

#include "fkb/parallel.hpp"
#include "fkb/rng.hpp"
#include "internal/text.hpp"
#include "json.hpp"

namespace fkb {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
// Source coordinates this close outside the image are clamped onto it.
constexpr double kEdgeTolerance = 1e-6;

}  // namespace

RigidTransform RigidTransform::from_euler_deg(double rx, double ry, double rz, const Eigen::Vector3d& t) {
  RigidTransform T;
  T.rotation = (Eigen::AngleAxisd(rz * kDegToRad, Eigen::Vector3d::UnitZ()) *
                Eigen::AngleAxisd(ry * kDegToRad, Eigen::Vector3d::UnitY()) *
                Eigen::AngleAxisd(rx * kDegToRad, Eigen::Vector3d::UnitX()))
                   .toRotationMatrix();
  T.translation = t;
  T.euler_deg = {rx, ry, rz};
  return T;
}

void RigidTransform::validate() const {
  if (!rotation.allFinite() || !translation.allFinite()) fail(ErrorCode::kRange, "transform has non-finite entries");
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho >= 1e-9) fail(ErrorCode::kRange, "rotation is not orthonormal");
  if (rotation.determinant() <= 0.0) fail(ErrorCode::kRange, "rotation has negative determinant");
  if (translation.norm() >= 1.0) fail(ErrorCode::kRange, "|t| must be < 1");
}

RigidTransform sample_transform(std::uint64_t seed, std::uint64_t draw_index, const SamplingRanges& ranges) {
  if (!(ranges.rot_deg >= 0.0) || !(ranges.trans >= 0.0)) fail(ErrorCode::kRange, "sampling ranges must be >= 0");
  if (ranges.trans * std::sqrt(3.0) >= 1.0) {
    fail(ErrorCode::kRange, "translation range too large: trans * sqrt(3) must stay below 1");
  }
  CounterRng rng(seed, StreamDomain::kTransform, draw_index);
  const double rx = rng.uniform(-ranges.rot_deg, ranges.rot_deg);
  const double ry = rng.uniform(-ranges.rot_deg, ranges.rot_deg);
  const double rz = rng.uniform(-ranges.rot_deg, ranges.rot_deg);
  Eigen::Vector3d t;
  t.x() = rng.uniform(-ranges.trans, ranges.trans);
  t.y() = rng.uniform(-ranges.trans, ranges.trans);
  t.z() = rng.uniform(-ranges.trans, ranges.trans);
  return RigidTransform::from_euler_deg(rx, ry, rz, t);
}

double inverse_scale(const Eigen::Vector3d& unit_ray, const Eigen::Vector3d& t) {
  const double b = unit_ray.dot(t);
  const double c = t.squaredNorm() - 1.0;
  return b + std::sqrt(b * b - c);
}

std::optional<PixelPoint> try_warp_point(const FisheyeModel& model, const RigidTransform& T, const PixelPoint& p) {
  const auto x = model.try_unproject(p);
  if (!x) return std::nullopt;
  return model.try_project(T.rotation * *x + T.translation);
}

std::optional<PixelPoint> try_unwarp_point(const FisheyeModel& model, const RigidTransform& T, const PixelPoint& p) {
  const auto y = model.try_unproject(p);
  if (!y) return std::nullopt;
  const double mu = inverse_scale(*y, T.translation);
  return model.try_project(T.rotation.transpose() * (mu * *y - T.translation));
}

PixelPoint warp_point(const FisheyeModel& model, const RigidTransform& T, const PixelPoint& p) {
  auto q = try_warp_point(model, T, p);
  if (!q) fail(ErrorCode::kOutOfDomain, "point leaves the modelled field of view under the warp");
  return *q;
}

PixelPoint unwarp_point(const FisheyeModel& model, const RigidTransform& T, const PixelPoint& p) {
  auto q = try_unwarp_point(model, T, p);
  if (!q) fail(ErrorCode::kOutOfDomain, "point leaves the modelled field of view under the inverse warp");
  return *q;
}

namespace {

// Point-map round-off (~1e-12 px) would otherwise leave identity fields a
// hair off the pixel grid, breaking bit-exact identity warps.
float grid_snap(double v) {
  const double r = std::round(v);
  return static_cast<float>(std::abs(v - r) < 1e-9 ? r : v);
}

}  // namespace

WarpField bake_warp_field(const FisheyeModel& model, const RigidTransform& T, WarpDirection direction) {
  WarpField field;
  field.width = model.width();
  field.height = model.height();
  field.transform = T;
  field.direction = direction;
  field.model_hash = model.digest();
  const std::size_t n = static_cast<std::size_t>(field.width) * static_cast<std::size_t>(field.height);
  field.src.assign(2 * n, -1.0f);
  field.valid.assign(n, 0);

  const double max_u = field.width - 1;
  const double max_v = field.height - 1;
  for (int y = 0; y < field.height; ++y) {
    for (int x = 0; x < field.width; ++x) {
      const PixelPoint dst{static_cast<double>(x), static_cast<double>(y)};
      const auto src = direction == WarpDirection::kForward ? try_unwarp_point(model, T, dst)
                                                            : try_warp_point(model, T, dst);
      if (!src) continue;
      if (!(src->u >= -kEdgeTolerance && src->u <= max_u + kEdgeTolerance && src->v >= -kEdgeTolerance &&
            src->v <= max_v + kEdgeTolerance)) {
        continue;
      }
      const std::size_t i = field.index(x, y);
      field.src[2 * i] = grid_snap(std::clamp(src->u, 0.0, max_u));
      field.src[2 * i + 1] = grid_snap(std::clamp(src->v, 0.0, max_v));
      field.valid[i] = 1;
    }
  }
  return field;
}

std::vector<LutPair> bake_lut_set(const FisheyeModel& model, int count, std::uint64_t seed,
                                  const SamplingRanges& ranges, int threads) {
  if (count < 1) fail(ErrorCode::kRange, "LUT count must be >= 1");
  // Validate ranges up front so the error is not raised from a worker.
  sample_transform(seed, 0, ranges);
  std::vector<LutPair> luts(static_cast<std::size_t>(count));
  parallel_for(luts.size(), threads, [&](std::size_t i) {
    const RigidTransform T = sample_transform(seed, i, ranges);
    luts[i].forward = bake_warp_field(model, T, WarpDirection::kForward);
    luts[i].inverse = bake_warp_field(model, T, WarpDirection::kInverse);
  });
  return luts;
}

ImageF32 apply_warp(const ImageF32& img, const WarpField& field) {
  if (img.width() != field.width || img.height() != field.height) {
    fail(ErrorCode::kDimensionMismatch, "image and warp field sizes differ");
  }
  ImageF32 out(field.width, field.height, 0.0f);
  for (int y = 0; y < field.height; ++y) {
    for (int x = 0; x < field.width; ++x) {
      if (!field.is_valid(x, y)) continue;
      const PixelPoint s = field.source(x, y);
      out(x, y) = bilinear_sample(img, s.u, s.v);
    }
  }
  return out;
}

ImageU8 apply_warp(const ImageU8& img, const WarpField& field) { return to_u8(apply_warp(to_float(img), field)); }

Mask valid_mask(const WarpField& field) { return Mask(field.width, field.height, field.valid); }

Mask warp_mask(const Mask& mask, const WarpField& field) {
  ImageF32 ones(mask.width(), mask.height());
  auto src = mask.pixels();
  auto dst = ones.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] != 0 ? 1.0f : 0.0f;
  const ImageF32 warped = apply_warp(ones, field);
  Mask out(field.width, field.height, 0);
  auto w = warped.pixels();
  auto o = out.pixels();
  for (std::size_t i = 0; i < w.size(); ++i) o[i] = w[i] >= 0.999f ? 1 : 0;
  return out;
}

OverlapMasks overlap_masks(const LutPair& pair) {
  const Mask ones(pair.forward.width, pair.forward.height, 1);
  return {warp_mask(ones, pair.inverse), warp_mask(ones, pair.forward)};
}

namespace {

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void le(U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }

 private:
  std::vector<std::uint8_t>& out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) fail(ErrorCode::kFormat, "truncated warp field");
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return value;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

constexpr char kFieldMagic[4] = {'F', 'W', 'R', 'P'};
constexpr std::uint16_t kFieldVersion = 1;

}  // namespace

std::vector<std::uint8_t> encode_warp_field(const WarpField& field) {
  const std::size_t n = static_cast<std::size_t>(field.width) * static_cast<std::size_t>(field.height);
  std::vector<std::uint8_t> out;
  out.reserve(4 + 2 + 8 + 96 + 32 + 8 * n + (n + 7) / 8);
  ByteWriter w(out);
  w.bytes(kFieldMagic, 4);
  w.le(kFieldVersion);
  w.le(static_cast<std::uint32_t>(field.width));
  w.le(static_cast<std::uint32_t>(field.height));
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) w.f64(field.transform.rotation(r, c));
  }
  for (int i = 0; i < 3; ++i) w.f64(field.transform.translation(i));
  w.bytes(field.model_hash.data(), field.model_hash.size());
  for (float v : field.src) w.f32(v);
  std::vector<std::uint8_t> bitmap((n + 7) / 8, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (field.valid[i]) bitmap[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  w.bytes(bitmap.data(), bitmap.size());
  return out;
}

WarpField decode_warp_field(std::span<const std::uint8_t> bytes, WarpDirection direction) {
  ByteReader r(bytes);
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kFieldMagic)) fail(ErrorCode::kFormat, "bad warp field magic");
  if (r.le<std::uint16_t>() != kFieldVersion) fail(ErrorCode::kFormat, "unsupported warp field version");
  WarpField field;
  field.direction = direction;
  field.width = static_cast<int>(r.le<std::uint32_t>());
  field.height = static_cast<int>(r.le<std::uint32_t>());
  if (field.width <= 0 || field.height <= 0) fail(ErrorCode::kFormat, "bad warp field dimensions");
  for (int row = 0; row < 3; ++row) {
    for (int c = 0; c < 3; ++c) field.transform.rotation(row, c) = r.f64();
  }
  for (int i = 0; i < 3; ++i) field.transform.translation(i) = r.f64();
  const auto hash = r.take(32);
  std::copy(hash.begin(), hash.end(), field.model_hash.begin());

  const std::size_t n = static_cast<std::size_t>(field.width) * static_cast<std::size_t>(field.height);
  r.need(8 * n + (n + 7) / 8);
  field.src.resize(2 * n);
  for (auto& v : field.src) v = r.f32();
  const auto bitmap = r.take((n + 7) / 8);
  field.valid.resize(n);
  for (std::size_t i = 0; i < n; ++i) field.valid[i] = (bitmap[i / 8] >> (i % 8)) & 1u;
  if (!r.done()) fail(ErrorCode::kFormat, "trailing bytes after warp field");

  const Eigen::Vector3d e = field.transform.rotation.eulerAngles(2, 1, 0);
  field.transform.euler_deg = {e(2) / kDegToRad, e(1) / kDegToRad, e(0) / kDegToRad};
  return field;
}

void save_warp_field(const std::string& path, const WarpField& field) {
  const auto bytes = encode_warp_field(field);
  internal::write_text_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

WarpField load_warp_field(const std::string& path, WarpDirection direction) {
  const std::string text = internal::read_text_file(path);
  return decode_warp_field(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()), direction);
}

LutSetManifest write_lut_set(const std::string& dir, const std::vector<LutPair>& luts, std::uint64_t seed,
                             const SamplingRanges& ranges, const FisheyeModel& model) {
  std::filesystem::create_directories(dir);
  LutSetManifest m;
  m.seed = seed;
  m.ranges = ranges;
  m.count = static_cast<int>(luts.size());
  m.model_hash_hex = to_hex(model.digest());
  m.model_json = model_to_json(model);
  for (std::size_t i = 0; i < luts.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "lut_%05zu_fwd.fwrp", i);
    m.forward_files.emplace_back(name);
    save_warp_field((std::filesystem::path(dir) / name).string(), luts[i].forward);
    std::snprintf(name, sizeof(name), "lut_%05zu_inv.fwrp", i);
    m.inverse_files.emplace_back(name);
    save_warp_field((std::filesystem::path(dir) / name).string(), luts[i].inverse);
    m.transforms.push_back(luts[i].forward.transform);
  }
  return m;
}

std::string lut_manifest_to_json(const LutSetManifest& m) {
  nlohmann::json j;
  j["seed"] = m.seed;
  j["rot_deg"] = m.ranges.rot_deg;
  j["trans"] = m.ranges.trans;
  j["count"] = m.count;
  j["euler_order"] = "extrinsic-xyz";
  j["model_hash"] = m.model_hash_hex;
  j["model"] = nlohmann::json::parse(m.model_json);
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < m.forward_files.size(); ++i) {
    nlohmann::json e;
    e["index"] = i;
    e["forward"] = m.forward_files[i];
    e["inverse"] = m.inverse_files[i];
    if (i < m.transforms.size()) {
      const auto& T = m.transforms[i];
      e["euler_deg"] = T.euler_deg;
      e["translation"] = {T.translation.x(), T.translation.y(), T.translation.z()};
    }
    entries.push_back(std::move(e));
  }
  j["files"] = std::move(entries);
  return j.dump(2);
}

LutSetManifest lut_manifest_from_json(const std::string& text) {
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    if (j.contains("lut_set")) j = j.at("lut_set");
    LutSetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.ranges.rot_deg = j.at("rot_deg").get<double>();
    m.ranges.trans = j.at("trans").get<double>();
    m.count = j.at("count").get<int>();
    m.model_hash_hex = j.value("model_hash", "");
    if (j.contains("model")) m.model_json = j.at("model").dump();
    for (const auto& e : j.at("files")) {
      m.forward_files.push_back(e.at("forward").get<std::string>());
      m.inverse_files.push_back(e.at("inverse").get<std::string>());
      if (e.contains("euler_deg") && e.contains("translation")) {
        const auto eu = e.at("euler_deg").get<std::array<double, 3>>();
        const auto t = e.at("translation").get<std::array<double, 3>>();
        m.transforms.push_back(RigidTransform::from_euler_deg(eu[0], eu[1], eu[2], {t[0], t[1], t[2]}));
      }
    }
    if (static_cast<int>(m.forward_files.size()) != m.count) {
      fail(ErrorCode::kFormat, "LUT manifest count does not match its file list");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("malformed LUT manifest: ") + e.what());
  }
}

std::vector<LutPair> load_lut_set(const std::string& dir, LutSetManifest* manifest) {
  return load_lut_range(dir, 0, -1, manifest);
}

std::vector<LutPair> load_lut_range(const std::string& dir, int first, int count, LutSetManifest* manifest) {
  const auto root = std::filesystem::path(dir);
  LutSetManifest m = lut_manifest_from_json(internal::read_text_file((root / "manifest.json").string()));
  if (m.count < 1) fail(ErrorCode::kEmptyLutSet, "LUT set " + dir + " is empty");
  if (first < 0 || first >= m.count) fail(ErrorCode::kRange, "LUT index outside the set " + dir);
  if (count < 0) count = m.count - first;
  if (count == 0 || first + count > m.count) fail(ErrorCode::kRange, "LUT range exceeds the set " + dir);
  std::vector<LutPair> luts(static_cast<std::size_t>(count));
  for (std::size_t j = 0; j < luts.size(); ++j) {
    const std::size_t i = static_cast<std::size_t>(first) + j;
    luts[j].forward = load_warp_field((root / m.forward_files[i]).string(), WarpDirection::kForward);
    luts[j].inverse = load_warp_field((root / m.inverse_files[i]).string(), WarpDirection::kInverse);
    if (i < m.transforms.size()) {
      luts[j].forward.transform.euler_deg = m.transforms[i].euler_deg;
      luts[j].inverse.transform.euler_deg = m.transforms[i].euler_deg;
    }
  }
  if (manifest) *manifest = std::move(m);
  return luts;
}

}  // namespace fkb
