#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fkb/adapt.hpp"
#include "fkb/error.hpp"
#include "json.hpp"
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

double nearest(const Keypoint& kp, const std::vector<PixelPoint>& targets) {
  double best = INFINITY;
  for (const auto& t : targets) best = std::min(best, std::hypot(kp.x - t.u, kp.y - t.v));
  return best;
}

TEST(Adapt, IdentityOnlyEqualsBaseDetector) {
  const auto model = test::standard_model(96, 96);
  const auto luts = bake_lut_set(model, 1, 0, {0.0, 0.0});
  const auto img = test::corner_scene(96, 96, 2, 2, 12, 6).image;
  for (auto algo : {DetectorAlgo::kHarris, DetectorAlgo::kShi, DetectorAlgo::kFast}) {
    DetectorConfig det;
    det.algo = algo;
    const auto base = detect(img, det);
    ASSERT_FALSE(base.empty());
    AdaptationConfig cfg;
    cfg.n_warps = 1;
    cfg.include_identity = false;
    cfg.border_margin = 0;
    cfg.vote_radius = 0;
    const auto res = adapt_image(img, builtin_detector(det), model, luts, cfg);
    ASSERT_EQ(res.superset.size(), base.size()) << to_string(algo);
    // Scores differ (votes vs responses); coordinates must not.
    std::vector<std::pair<double, double>> a, b;
    for (const auto& p : base.points) a.emplace_back(p.x, p.y);
    for (const auto& p : res.superset.points) b.emplace_back(p.x, p.y);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    for (const auto& p : res.superset.points) EXPECT_EQ(p.score, 1.0);
  }
}

TEST(Adapt, WhiteSquareCornersSurvive) {
  const auto model = test::standard_model(128, 128);
  const auto luts = bake_lut_set(model, 50, 11, {15.0, 0.15});
  const auto img = test::white_square(128, 40);
  const std::vector<PixelPoint> corners{{43.5, 43.5}, {83.5, 43.5}, {43.5, 83.5}, {83.5, 83.5}};
  AdaptationConfig cfg;
  cfg.n_warps = 50;
  const auto res = adapt_image(img, builtin_detector({}), model, luts, cfg);
  ASSERT_FALSE(res.superset.empty());
  for (const auto& kp : res.superset.points) EXPECT_LE(nearest(kp, corners), 3.0) << kp.x << "," << kp.y;
  for (const auto& c : corners) {
    double best = 0.0;
    for (const auto& kp : res.superset.points) {
      if (std::hypot(kp.x - c.u, kp.y - c.v) <= 3.0) best = std::max(best, kp.score);
    }
    EXPECT_GT(best, 0.5) << c.u << "," << c.v;
  }
}

TEST(Adapt, CoverageNormalizesPartiallyVisiblePoints) {
  // A point near the border leaves the view in some warps; it must still
  // score 1 when it is found every time it is visible.
  const auto model = test::standard_model(128, 128);
  const auto luts = bake_lut_set(model, 30, 12);
  KeypointSet fixed;
  fixed.points = {{14, 64, 1}, {64, 64, 1}};
  AdaptationConfig cfg;
  cfg.n_warps = 30;
  cfg.border_margin = 0;
  const auto res = adapt_image(ImageF32(128, 128, 0.5f), lookup_detector(fixed, model), model, luts, cfg);
  const auto cov = [&](int x, int y) { return res.accumulator.coverage[static_cast<std::size_t>(y) * 128 + x]; };
  EXPECT_EQ(cov(64, 64), 31);
  EXPECT_LT(cov(14, 64), 31);
  EXPECT_GT(cov(14, 64), 0);
  EXPECT_NEAR(res.normalized(14, 64), 1.0f, 1e-4);
  EXPECT_NEAR(res.normalized(64, 64), 1.0f, 1e-4);
  ASSERT_EQ(res.superset.size(), 2u);
}

TEST(Adapt, SupersetIsStableAndCovered) {
  const auto model = test::standard_model(128, 128);
  const auto luts = bake_lut_set(model, 40, 13);
  AdaptationConfig cfg;
  cfg.n_warps = 40;
  cfg.superset_threshold = 0.8;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto img = test::corner_scene(128, 128, 100 + s, 3, 16, 6).image;
    const auto res = adapt_image(img, builtin_detector({}), model, luts, cfg);
    for (const auto& kp : res.superset.points) {
      const int x = static_cast<int>(std::lround(kp.x));
      const int y = static_cast<int>(std::lround(kp.y));
      EXPECT_GT(res.accumulator.coverage[static_cast<std::size_t>(y) * 128 + x], 0);
      EXPECT_GE(kp.score, 0.8 - 1e-6);
      EXPECT_LE(kp.score, 1.0 + 1e-6);
    }
  }
}

TEST(Adapt, ThreadCountDoesNotChangeResult) {
  const auto model = test::standard_model(96, 96);
  const auto luts = bake_lut_set(model, 20, 14);
  const auto img = test::corner_scene(96, 96, 9, 2, 12, 6).image;
  AdaptationConfig cfg;
  cfg.n_warps = 20;
  const auto a = adapt_image(img, builtin_detector({}), model, luts, cfg);
  cfg.threads = 3;
  const auto b = adapt_image(img, builtin_detector({}), model, luts, cfg);
  EXPECT_EQ(a.superset.points, b.superset.points);
  EXPECT_EQ(a.accumulator.votes, b.accumulator.votes);
}

TEST(Adapt, HeatmapMode) {
  const auto model = test::standard_model(96, 96);
  const auto luts = bake_lut_set(model, 10, 15);
  const auto img = test::white_square(96, 30);
  AdaptationConfig cfg;
  cfg.n_warps = 10;
  cfg.accumulation = Accumulation::kHeatmap;
  cfg.superset_threshold = 0.3;
  const auto res = adapt_image(img, builtin_detector({}), model, luts, cfg);
  ASSERT_FALSE(res.superset.empty());
  const std::vector<PixelPoint> corners{{32.5, 32.5}, {62.5, 32.5}, {32.5, 62.5}, {62.5, 62.5}};
  for (const auto& kp : res.superset.points) EXPECT_LE(nearest(kp, corners), 3.0);
  EXPECT_EQ(accumulation_from_string("heatmap"), Accumulation::kHeatmap);
  EXPECT_EQ(code_of([] { accumulation_from_string("vote"); }), ErrorCode::kUsage);
}

TEST(Adapt, RoundsReuseSuperset) {
  const auto model = test::standard_model(96, 96);
  const auto luts = bake_lut_set(model, 10, 16);
  AdaptationConfig cfg;
  cfg.n_warps = 10;
  const auto img = test::white_square(96, 30);
  const auto two = adapt_rounds(img, builtin_detector({}), model, luts, cfg, 2);
  EXPECT_FALSE(two.superset.empty());
  EXPECT_EQ(code_of([&] { adapt_rounds(img, builtin_detector({}), model, luts, cfg, 0); }), ErrorCode::kRange);
}

TEST(Adapt, ConfigAndInputValidation) {
  const auto model = test::standard_model(48, 48);
  const auto luts = bake_lut_set(model, 2, 0);
  const ImageF32 img(48, 48, 0.5f);
  AdaptationConfig cfg;
  cfg.n_warps = 0;
  EXPECT_EQ(code_of([&] { adapt_image(img, builtin_detector({}), model, luts, cfg); }), ErrorCode::kRange);
  cfg.n_warps = 3;
  EXPECT_EQ(code_of([&] { adapt_image(img, builtin_detector({}), model, luts, cfg); }), ErrorCode::kRange);
  cfg.n_warps = 1;
  EXPECT_EQ(code_of([&] { adapt_image(img, builtin_detector({}), model, {}, cfg); }), ErrorCode::kEmptyLutSet);
  EXPECT_EQ(code_of([&] { adapt_image(ImageF32(40, 48), builtin_detector({}), model, luts, cfg); }),
            ErrorCode::kDimensionMismatch);
  cfg.superset_threshold = 0.0;
  EXPECT_EQ(code_of([&] { cfg.validate(); }), ErrorCode::kRange);
  test::TempDir dir("labels");
  EXPECT_EQ(code_of([&] { export_labels({}, dir.file("x.csv")); }), ErrorCode::kEmptyInput);
}

TEST(AdaptCorpus, LabelsManifestAndDeterminism) {
  test::TempDir dir("corpus");
  const auto model = test::standard_model(64, 64);
  const auto luts = bake_lut_set(model, 100, 21);
  std::vector<std::string> images;
  for (int i = 0; i < 10; ++i) {
    const auto path = dir.file("img" + std::to_string(i) + ".pgm");
    save_pgm(path, to_u8(test::corner_scene(64, 64, 300 + i, 1, 8, 6).image));
    images.push_back(path);
  }
  AdaptationConfig cfg;
  CorpusOptions opt;
  opt.seed = 21;
  opt.out_dir = dir.file("run1");
  const auto labels = adapt_corpus(images, builtin_detector({}), model, luts, cfg, opt);
  ASSERT_EQ(labels.size(), 10u);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(opt.out_dir)) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, 11u);
  const auto manifest = nlohmann::json::parse(test::read_file(opt.out_dir + "/manifest.json"));
  EXPECT_EQ(manifest["adaptation"]["n_warps"], 100);
  EXPECT_EQ(manifest["adaptation"]["seed"], 21);
  EXPECT_EQ(manifest["adaptation"]["files"].size(), 10u);
  EXPECT_EQ(std::filesystem::path(labels[3]).filename().string(), "00003_img3.csv");

  opt.out_dir = dir.file("run2");
  const auto again = adapt_corpus(images, builtin_detector({}), model, luts, cfg, opt);
  for (std::size_t i = 0; i < labels.size(); ++i) EXPECT_EQ(test::read_file(labels[i]), test::read_file(again[i]));
  EXPECT_EQ(code_of([&] { adapt_corpus({}, builtin_detector({}), model, luts, cfg, opt); }),
            ErrorCode::kEmptyDataset);
}

}  // namespace
}  // namespace fkb
