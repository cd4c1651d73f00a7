#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include <cmath>
#include <fstream>
#include <numbers>

#include "fkb/error.hpp"
#include "fkb/rng.hpp"
#include "fkb/warp.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"

namespace fkb {
namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected fkb::Error";
  return ErrorCode::kInternal;
}

FisheyeModel equidistant() { return FisheyeModel({1.0, 0.0, 0.0, 0.0}, 0.0, 0.0, 10, 10); }

TEST(RigidTransform, EulerOrderIsXThenYThenZ) {
  const auto T = RigidTransform::from_euler_deg(10, -20, 30, Eigen::Vector3d(0.1, 0, 0));
  const double d = std::numbers::pi / 180.0;
  const Eigen::Matrix3d expect = (Eigen::AngleAxisd(30 * d, Eigen::Vector3d::UnitZ()) *
                                  Eigen::AngleAxisd(-20 * d, Eigen::Vector3d::UnitY()) *
                                  Eigen::AngleAxisd(10 * d, Eigen::Vector3d::UnitX()))
                                     .toRotationMatrix();
  EXPECT_LT((T.rotation - expect).norm(), 1e-14);
  EXPECT_NO_THROW(T.validate());
}

TEST(RigidTransform, ValidateRejectsLargeTranslation) {
  RigidTransform T;
  T.translation = {0.0, 0.0, 1.0};
  EXPECT_EQ(code_of([&] { T.validate(); }), ErrorCode::kRange);
}

TEST(SampleTransform, ZeroRangesGiveIdentity) {
  const auto T = sample_transform(9, 4, {0.0, 0.0});
  EXPECT_EQ(T.rotation, Eigen::Matrix3d::Identity());
  EXPECT_EQ(T.translation, Eigen::Vector3d::Zero());
}

TEST(SampleTransform, BoundedAndReproducible) {
  for (std::uint64_t i = 0; i < 200; ++i) {
    const auto a = sample_transform(42, i);
    const auto b = sample_transform(42, i);
    EXPECT_EQ(a.rotation, b.rotation);
    EXPECT_EQ(a.translation, b.translation);
    for (double e : a.euler_deg) {
      EXPECT_GE(e, -30.0);
      EXPECT_LE(e, 30.0);
    }
    for (int k = 0; k < 3; ++k) EXPECT_LE(std::abs(a.translation[k]), 0.3);
  }
}

TEST(SampleTransform, OversizedTranslationRangeRejected) {
  EXPECT_EQ(code_of([] { sample_transform(1, 0, {30.0, 0.6}); }), ErrorCode::kRange);
}

TEST(WarpPoint, IdentityIsNoOp) {
  const auto m = test::standard_model(64, 64);
  CounterRng rng(1, StreamDomain::kSynthetic, 0);
  for (int i = 0; i < 100; ++i) {
    const PixelPoint p{rng.uniform(0, 63), rng.uniform(0, 63)};
    const auto q = warp_point(m, RigidTransform::identity(), p);
    EXPECT_NEAR(q.u, p.u, 1e-9);
    EXPECT_NEAR(q.v, p.v, 1e-9);
  }
}

TEST(WarpPoint, AxialTranslationFixesCentre) {
  RigidTransform T;
  T.translation = {0, 0, 0.3};
  const auto q = warp_point(equidistant(), T, {0, 0});
  EXPECT_NEAR(q.u, 0.0, 1e-12);
  EXPECT_NEAR(q.v, 0.0, 1e-12);
}

TEST(WarpPoint, LateralTranslationHandComposed) {
  RigidTransform T;
  T.translation = {0.1, 0, 0};
  const auto q = warp_point(equidistant(), T, {0, 0});
  EXPECT_NEAR(q.u, std::atan(0.1), 1e-12);
  EXPECT_NEAR(q.u, 0.0996687, 1e-7);
  EXPECT_NEAR(q.v, 0.0, 1e-12);
}

TEST(UnwarpPoint, QuadraticScale) {
  EXPECT_NEAR(inverse_scale({0, 0, 1}, {0, 0, 0.3}), 1.3, 1e-15);
  EXPECT_EQ(inverse_scale({0, 0, 1}, {0, 0, 0}), 1.0);
  RigidTransform T;
  T.translation = {0, 0, 0.3};
  const auto p = unwarp_point(equidistant(), T, {0, 0});
  EXPECT_NEAR(p.u, 0.0, 1e-12);
  EXPECT_NEAR(p.v, 0.0, 1e-12);
}

TEST(UnwarpPoint, PureRotationInverse) {
  const auto m = test::standard_model(128, 128);
  const auto T = RigidTransform::from_euler_deg(12, -7, 25, Eigen::Vector3d::Zero());
  const PixelPoint p{40.0, 70.0};
  const auto q = warp_point(m, T, p);
  const Eigen::Vector3d back = T.rotation.transpose() * m.unproject(q);
  const auto expect = m.project(back);
  const auto got = unwarp_point(m, T, q);
  EXPECT_NEAR(got.u, expect.u, 1e-9);
  EXPECT_NEAR(got.v, expect.v, 1e-9);
}

TEST(UnwarpPoint, RoundTripRandomTransforms) {
  const auto m = test::standard_model(256, 256);
  CounterRng rng(2, StreamDomain::kSynthetic, 0);
  double worst = 0.0;
  int tested = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto T = sample_transform(77, static_cast<std::uint64_t>(i % 100));
    const PixelPoint p{rng.uniform(0, 255), rng.uniform(0, 255)};
    const auto q = try_warp_point(m, T, p);
    if (!q) continue;
    const auto back = unwarp_point(m, T, *q);
    worst = std::max(worst, distance(back, p));
    ++tested;
  }
  EXPECT_GT(tested, 9000);
  EXPECT_LT(worst, 1e-6);
}

TEST(WarpPoint, OutOfDomainReported) {
  const FisheyeModel m({1.0}, 5, 5, 10, 10, 0.5);
  const auto T = RigidTransform::from_euler_deg(0, 40, 0, Eigen::Vector3d::Zero());
  EXPECT_EQ(code_of([&] { warp_point(m, T, {9.0, 5.0}); }), ErrorCode::kOutOfDomain);
}

TEST(BakeWarpField, IdentityField) {
  const auto m = test::standard_model(48, 48);
  const auto f = bake_warp_field(m, RigidTransform::identity(), WarpDirection::kForward);
  for (int y = 0; y < 48; ++y) {
    for (int x = 0; x < 48; ++x) {
      ASSERT_TRUE(f.is_valid(x, y));
      EXPECT_EQ(f.source(x, y), (PixelPoint{static_cast<double>(x), static_cast<double>(y)}));
    }
  }
}

TEST(BakeWarpField, ValidSourcesInsideImage) {
  const auto m = test::standard_model(80, 60);
  for (std::uint64_t i = 0; i < 5; ++i) {
    const auto T = sample_transform(3, i);
    for (auto dir : {WarpDirection::kForward, WarpDirection::kInverse}) {
      const auto f = bake_warp_field(m, T, dir);
      for (int y = 0; y < 60; ++y) {
        for (int x = 0; x < 80; ++x) {
          if (!f.is_valid(x, y)) continue;
          const auto s = f.source(x, y);
          ASSERT_TRUE(std::isfinite(s.u) && std::isfinite(s.v));
          ASSERT_GE(s.u, 0.0);
          ASSERT_LE(s.u, 79.0);
          ASSERT_GE(s.v, 0.0);
          ASSERT_LE(s.v, 59.0);
        }
      }
    }
  }
}

TEST(BakeWarpField, PureRollIsImageRotation) {
  const auto m = test::standard_model(64, 64);
  const auto T = RigidTransform::from_euler_deg(0, 0, 90, Eigen::Vector3d::Zero());
  const auto f = bake_warp_field(m, T, WarpDirection::kForward);
  int valid = 0;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (!f.is_valid(x, y)) continue;
      ++valid;
      const double dx = x - m.cx();
      const double dy = y - m.cy();
      const auto s = f.source(x, y);
      EXPECT_NEAR(s.u, m.cx() + dy, 1e-4);
      EXPECT_NEAR(s.v, m.cy() - dx, 1e-4);
    }
  }
  EXPECT_EQ(valid, 64 * 64);
}

TEST(BakeLutSet, ZeroRangeGivesIdentityPair) {
  const auto m = test::standard_model(24, 24);
  const auto luts = bake_lut_set(m, 1, 5, {0.0, 0.0});
  ASSERT_EQ(luts.size(), 1u);
  const auto id = bake_warp_field(m, RigidTransform::identity(), WarpDirection::kForward);
  EXPECT_EQ(luts[0].forward.src, id.src);
  EXPECT_EQ(luts[0].inverse.src, id.src);
}

TEST(BakeLutSet, DistinctAndThreadIndependent) {
  const auto m = test::standard_model(32, 32);
  const auto one = bake_lut_set(m, 3, 11, {}, 1);
  const auto many = bake_lut_set(m, 3, 11, {}, 3);
  ASSERT_EQ(one.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(encode_warp_field(one[i].forward), encode_warp_field(many[i].forward));
    EXPECT_EQ(encode_warp_field(one[i].inverse), encode_warp_field(many[i].inverse));
    for (int j = 0; j < i; ++j) {
      EXPECT_FALSE(one[i].forward.transform.rotation.isApprox(one[j].forward.transform.rotation));
    }
  }
}

TEST(ApplyWarp, IdentityIsBitExact) {
  const auto m = test::standard_model(40, 30);
  const auto f = bake_warp_field(m, RigidTransform::identity(), WarpDirection::kForward);
  const auto img = test::random_u8(40, 30, 9);
  EXPECT_EQ(apply_warp(img, f), img);
  const auto fimg = to_float(img);
  EXPECT_EQ(apply_warp(fimg, f), fimg);
}

TEST(ApplyWarp, SizeMismatch) {
  const auto f = bake_warp_field(test::standard_model(40, 30), RigidTransform::identity(), WarpDirection::kForward);
  EXPECT_EQ(code_of([&] { apply_warp(ImageF32(30, 40), f); }), ErrorCode::kDimensionMismatch);
}

TEST(ApplyWarp, InvalidPixelsAreBlackAndValidOnesBilinear) {
  const auto m = test::standard_model(64, 64);
  const auto T = sample_transform(5, 2);
  const auto f = bake_warp_field(m, T, WarpDirection::kForward);
  const auto img = test::band_limited(64, 64, 4);
  const auto out = apply_warp(img, f);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (!f.is_valid(x, y)) {
        EXPECT_EQ(out(x, y), 0.0f);
      } else {
        const auto s = f.source(x, y);
        EXPECT_NEAR(out(x, y), bilinear_sample(img, s.u, s.v), 1e-6);
      }
    }
  }
}

TEST(ApplyWarp, RoundTripMaskedError) {
  const auto m = test::standard_model(128, 128);
  for (std::uint64_t i = 0; i < 4; ++i) {
    const auto T = sample_transform(21, i);
    const LutPair pair{bake_warp_field(m, T, WarpDirection::kForward), bake_warp_field(m, T, WarpDirection::kInverse)};
    const auto img = test::band_limited(128, 128, 100 + i);
    const auto back = apply_warp(apply_warp(img, pair.forward), pair.inverse);
    const auto mask = warp_mask(valid_mask(pair.forward), pair.inverse);
    double sum = 0.0;
    int n = 0;
    for (int y = 0; y < 128; ++y) {
      for (int x = 0; x < 128; ++x) {
        if (!mask(x, y)) continue;
        sum += std::abs(back(x, y) - img(x, y));
        ++n;
      }
    }
    ASSERT_GT(n, 0);
    EXPECT_LT(sum / n, 2.0 / 255.0);
  }
}

TEST(Masks, IdentityAllTrue) {
  const auto f = bake_warp_field(test::standard_model(20, 20), RigidTransform::identity(), WarpDirection::kForward);
  const Mask valid = valid_mask(f);
  const Mask warped = warp_mask(Mask(20, 20, 1), f);
  for (auto v : valid.pixels()) EXPECT_EQ(v, 1);
  for (auto v : warped.pixels()) EXPECT_EQ(v, 1);
}

TEST(Masks, AxialTranslationLosesPeriphery) {
  const auto m = test::standard_model(64, 64);
  RigidTransform T;
  T.translation = {0, 0, 0.3};
  const auto f = bake_warp_field(m, T, WarpDirection::kForward);
  const auto mask = valid_mask(f);
  std::size_t on = 0;
  for (auto v : mask.pixels()) on += v;
  EXPECT_LT(on, mask.size());
  EXPECT_GT(on, 0u);
}

TEST(Masks, WarpedOnesMatchValidityUpToOnePixel) {
  const auto m = test::standard_model(96, 96);
  for (std::uint64_t i = 0; i < 3; ++i) {
    const auto f = bake_warp_field(m, sample_transform(8, i), WarpDirection::kForward);
    const auto valid = valid_mask(f);
    const auto warped = warp_mask(Mask(96, 96, 1), f);
    for (int y = 0; y < 96; ++y) {
      for (int x = 0; x < 96; ++x) {
        if (warped(x, y)) {
          EXPECT_TRUE(valid(x, y));
        }
        bool interior = true;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (xx >= 0 && yy >= 0 && xx < 96 && yy < 96 && !valid(xx, yy)) interior = false;
          }
        }
        if (interior && valid(x, y)) {
          EXPECT_TRUE(warped(x, y)) << x << "," << y;
        }
      }
    }
  }
}

TEST(Masks, OverlapPairConsistent) {
  const auto m = test::standard_model(96, 96);
  const auto T = sample_transform(13, 1);
  const LutPair pair{bake_warp_field(m, T, WarpDirection::kForward), bake_warp_field(m, T, WarpDirection::kInverse)};
  const auto masks = overlap_masks(pair);
  CounterRng rng(4, StreamDomain::kSynthetic, 0);
  int checked = 0;
  while (checked < 1000) {
    const int x = static_cast<int>(rng.below(96));
    const int y = static_cast<int>(rng.below(96));
    if (!masks.source(x, y)) continue;
    ++checked;
    const auto q = try_warp_point(m, T, {static_cast<double>(x), static_cast<double>(y)});
    ASSERT_TRUE(q.has_value());
    const int x0 = static_cast<int>(std::floor(q->u));
    const int y0 = static_cast<int>(std::floor(q->v));
    bool hit = false;
    for (int dy = 0; dy <= 1; ++dy) {
      for (int dx = 0; dx <= 1; ++dx) {
        const int xx = x0 + dx, yy = y0 + dy;
        if (xx >= 0 && yy >= 0 && xx < 96 && yy < 96 && masks.target(xx, yy)) hit = true;
      }
    }
    EXPECT_TRUE(hit) << x << "," << y;
  }
}

TEST(FieldFile, RoundTripAndCorruption) {
  test::TempDir dir("field");
  const auto m = test::standard_model(33, 21);
  const auto f = bake_warp_field(m, sample_transform(1, 0), WarpDirection::kInverse);
  const auto bytes = encode_warp_field(f);
  EXPECT_EQ(bytes.size(), 4 + 2 + 4 + 4 + 12 * 8 + 32 + 33 * 21 * 8 + (33 * 21 + 7) / 8);
  const auto back = decode_warp_field(bytes, WarpDirection::kInverse);
  EXPECT_EQ(back.src, f.src);
  EXPECT_EQ(back.valid, f.valid);
  EXPECT_EQ(back.transform.rotation, f.transform.rotation);
  EXPECT_EQ(back.model_hash, m.digest());
  save_warp_field(dir.file("f.fwrp"), f);
  EXPECT_EQ(encode_warp_field(load_warp_field(dir.file("f.fwrp"), WarpDirection::kInverse)), bytes);

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(code_of([&] { decode_warp_field(bad, WarpDirection::kForward); }), ErrorCode::kFormat);
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 200);
  EXPECT_EQ(code_of([&] { decode_warp_field(cut, WarpDirection::kForward); }), ErrorCode::kFormat);
}

TEST(LutSetFiles, WriteLoadAndRange) {
  test::TempDir dir("luts");
  const auto m = test::standard_model(24, 24);
  const auto luts = bake_lut_set(m, 4, 99);
  const auto manifest = write_lut_set(dir.str(), luts, 99, {}, m);
  EXPECT_EQ(manifest.count, 4);
  EXPECT_EQ(manifest.forward_files.size(), 4u);
  std::ofstream(dir.file("manifest.json")) << lut_manifest_to_json(manifest);

  LutSetManifest loaded;
  const auto all = load_lut_set(dir.str(), &loaded);
  ASSERT_EQ(all.size(), 4u);
  EXPECT_EQ(loaded.seed, 99u);
  EXPECT_EQ(loaded.model_hash_hex, to_hex(m.digest()));
  for (int i = 0; i < 4; ++i) EXPECT_EQ(encode_warp_field(all[i].forward), encode_warp_field(luts[i].forward));

  const auto tail = load_lut_range(dir.str(), 2, -1);
  ASSERT_EQ(tail.size(), 2u);
  EXPECT_EQ(tail[0].inverse.src, luts[2].inverse.src);
  EXPECT_EQ(code_of([&] { load_lut_range(dir.str(), 3, 2); }), ErrorCode::kRange);
}

TEST(LutSetFiles, SameSeedSameBytes) {
  const auto m = test::standard_model(24, 24);
  const auto a = bake_lut_set(m, 5, 7);
  const auto b = bake_lut_set(m, 5, 7);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(encode_warp_field(a[i].forward), encode_warp_field(b[i].forward));
    EXPECT_EQ(encode_warp_field(a[i].inverse), encode_warp_field(b[i].inverse));
  }
}

}  // namespace
}  // namespace fkb
