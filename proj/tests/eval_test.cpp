#include <gtest/gtest.h>

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>

#include "fkb/error.hpp"
#include "fkb/eval.hpp"
#include "fkb/rng.hpp"
#include "json.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"

namespace fkb {
namespace {

using nlohmann::json;

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected fkb::Error";
  return ErrorCode::kInternal;
}

KeypointSet pts(std::vector<Keypoint> p) {
  KeypointSet s;
  s.points = std::move(p);
  return s;
}

std::vector<ImageU8> scenes(int n, int size, std::uint64_t seed) {
  std::vector<ImageU8> out;
  for (int i = 0; i < n; ++i) out.push_back(to_u8(test::corner_scene(size, size, seed + i, std::max(1, size / 40), size / 8, 6).image));
  return out;
}

TEST(GroundTruthMap, IdentityAndScaling) {
  const auto id = GroundTruthMap::identity();
  EXPECT_EQ(id.map({3.5, 7.25}), (PixelPoint{3.5, 7.25}));
  const auto h = GroundTruthMap::homography(Eigen::Vector3d(2, 2, 1).asDiagonal());
  EXPECT_EQ(h.map({3, 4}), (PixelPoint{6, 8}));
  const auto back = h.inverse().map({6, 8});
  EXPECT_NEAR(back.u, 3.0, 1e-12);
  EXPECT_NEAR(back.v, 4.0, 1e-12);
  EXPECT_EQ(code_of([] { GroundTruthMap::homography(Homography::Zero()); }), ErrorCode::kDegenerateInput);
}

TEST(GroundTruthMap, FisheyeInversePair) {
  auto model = std::make_shared<const FisheyeModel>(test::standard_model(128, 128));
  const auto gt = GroundTruthMap::fisheye(model, sample_transform(4, 2));
  const auto inv = gt.inverse();
  EXPECT_TRUE(inv.inverted());
  CounterRng rng(1, StreamDomain::kSynthetic, 0);
  KeypointSet in;
  while (in.size() < 200) {
    const PixelPoint p{rng.uniform(10, 118), rng.uniform(10, 118)};
    if (gt.try_map(p)) in.points.push_back({p.u, p.v, 1.0});
  }
  const auto back = map_points(map_points(in, gt), inv);
  for (std::size_t i = 0; i < in.size(); ++i) {
    EXPECT_NEAR(back.points[i].x, in.points[i].x, 1e-4);
    EXPECT_NEAR(back.points[i].y, in.points[i].y, 1e-4);
  }
}

TEST(FilterByMask, NearestPixelRule) {
  Mask m(4, 4, 0);
  m(1, 1) = 1;
  const auto kept = filter_by_mask(pts({{1.4, 0.6, 1}, {1.6, 1.0, 1}, {-3, 1, 1}}), m);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept.points[0].x, 1.4);
  EXPECT_EQ(filter_by_mask(pts({{-3, 1, 1}}), Mask()).size(), 1u);
}

TEST(Repeatability, WorkedExamples) {
  const auto id = GroundTruthMap::identity();
  EXPECT_EQ(repeatability(pts({{10, 10, 1}}), pts({{10, 10, 1}}), id, {}, {}, 3.0), 1.0);
  EXPECT_NEAR(repeatability(pts({{10, 10, 1}, {50, 50, 1}}), pts({{12, 12, 1}}), id, {}, {}, 3.0), 2.0 / 3.0,
              1e-15);
  EXPECT_TRUE(std::isnan(repeatability({}, {}, id, {}, {}, 3.0)));
  EXPECT_NEAR(repeatability(pts({{10, 10, 1}, {50, 50, 1}}), pts({{12, 12, 1}}), id, {}, {}, 3.0,
                            RepeatabilityMode::kOneWay),
              0.5, 1e-15);
}

TEST(Repeatability, IdenticalSetsScoreOne) {
  const auto img = to_float(scenes(1, 96, 3)[0]);
  const auto kps = detect(img, {});
  ASSERT_FALSE(kps.empty());
  EXPECT_EQ(repeatability(kps, kps, GroundTruthMap::identity(), {}, {}, 3.0), 1.0);
}

std::vector<Keypoint> random_points(CounterRng& rng, int n, double extent) {
  std::vector<Keypoint> out;
  for (int i = 0; i < n; ++i) out.push_back({rng.uniform(0, extent), rng.uniform(0, extent), rng.uniform()});
  return out;
}

TEST(Repeatability, MatchesBruteForceSymmetricAndMonotone) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    CounterRng rng(s, StreamDomain::kSynthetic, 2);
    Homography H = Homography::Identity();
    H(0, 2) = rng.uniform(-3, 3);
    H(1, 2) = rng.uniform(-3, 3);
    H(0, 0) = rng.uniform(0.95, 1.05);
    const auto gt = GroundTruthMap::homography(H);
    const auto a = random_points(rng, 1 + static_cast<int>(rng.below(20)), 30);
    const auto b = random_points(rng, 1 + static_cast<int>(rng.below(20)), 30);
    Mask ma(30, 30, 1), mb(30, 30, 1);
    for (int i = 0; i < 100; ++i) ma(static_cast<int>(rng.below(30)), static_cast<int>(rng.below(30))) = 0;
    const double eps = rng.uniform(1, 5);
    const double got = repeatability(pts(a), pts(b), gt, ma, mb, eps);
    const double want = test::brute_repeatability(a, b, test::homography_map(gt.matrix()),
                                                  test::homography_map(gt.matrix().inverse()), ma, mb, eps);
    EXPECT_NEAR(got, want, 1e-12) << "seed " << s;
    const double swapped = repeatability(pts(b), pts(a), gt.inverse(), mb, ma, eps);
    EXPECT_NEAR(got, swapped, 1e-9);
    EXPECT_GE(repeatability(pts(a), pts(b), gt, ma, mb, eps + 1.0), got);
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 1.0);
  }
}

TEST(MatchingCorrectness, HandCounts) {
  const auto id = GroundTruthMap::identity();
  const auto a = pts({{0, 0, 1}, {10, 0, 1}, {20, 0, 1}});
  const auto b = pts({{1, 0, 1}, {10, 2, 1}, {23, 4, 1}});
  const MatchSet m{{0, 0, 0}, {1, 1, 0}, {2, 2, 0}};
  const auto r = matching_correctness(m, a, b, id, 3.0);
  EXPECT_EQ(r.n_matches, 3u);
  EXPECT_EQ(r.n_inliers, 2u);
  EXPECT_NEAR(r.m_c, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(r.residuals, (std::vector<double>{1, 2, 5}));

  const auto strict = matching_correctness({{0, 0, 0}}, pts({{0, 0, 1}}), pts({{3, 0, 1}}), id, 3.0);
  EXPECT_EQ(strict.n_inliers, 0u);
  EXPECT_TRUE(std::isnan(matching_correctness({}, a, b, id, 3.0).m_c));
}

TEST(MatchingCorrectness, MatchesBruteForce) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    CounterRng rng(s, StreamDomain::kSynthetic, 3);
    const auto a = pts(random_points(rng, 1 + static_cast<int>(rng.below(20)), 40));
    const auto b = pts(random_points(rng, 1 + static_cast<int>(rng.below(20)), 40));
    MatchSet m;
    for (std::size_t i = 0; i < a.size(); ++i) m.push_back({i, rng.below(b.size()), 0.0});
    Homography H = Homography::Identity();
    H(0, 2) = rng.uniform(-2, 2);
    const auto gt = GroundTruthMap::homography(H);
    const double eps = rng.uniform(1, 10);
    const auto got = matching_correctness(m, a, b, gt, eps);
    const auto want = test::brute_matching(m, a, b, test::homography_map(H), eps);
    EXPECT_EQ(got.n_matches, want.n_matches);
    EXPECT_EQ(got.n_inliers, want.n_inliers);
    ASSERT_EQ(got.residuals.size(), want.residuals.size());
    for (std::size_t i = 0; i < want.residuals.size(); ++i) EXPECT_NEAR(got.residuals[i], want.residuals[i], 1e-12);
    EXPECT_GE(matching_correctness(m, a, b, gt, eps + 1.0).m_c, got.m_c);
  }
}

TEST(Rmse, WorkedExamplesAndOrderInvariance) {
  const std::vector<double> r{3, 4};
  EXPECT_NEAR(rmse(r), std::sqrt(25.0 / 2.0), 1e-15);
  EXPECT_NEAR(rmse(r), 3.53553, 1e-5);
  const std::vector<double> zeros{0, 0, 0};
  EXPECT_EQ(rmse(zeros), 0.0);
  const std::vector<double> one{2.75};
  EXPECT_EQ(rmse(one), 2.75);
  std::vector<double> many{0.5, 7, 1.25, 3, 9.5};
  const double before = rmse(many);
  std::reverse(many.begin(), many.end());
  EXPECT_NEAR(rmse(many), before, 1e-15);
  EXPECT_NEAR(before, test::brute_rmse(many), 1e-12);
  EXPECT_EQ(code_of([] { rmse({}); }), ErrorCode::kEmptyInput);
}

TEST(MakeTestset, IlluminationPairs) {
  std::vector<ImageU8> base(300, ImageU8(8, 8, 100));
  TestSetOptions opt;
  opt.seed = 3;
  const auto pairs = make_testset(base, opt);
  ASSERT_EQ(pairs.size(), 300u);
  for (const auto& p : pairs) {
    EXPECT_EQ(p.gt.kind(), GroundTruthMap::Kind::kIdentity);
    EXPECT_GE(p.gamma, 0.1);
    EXPECT_LE(p.gamma, 2.0);
    EXPECT_EQ(p.b, gamma_correct(p.a, p.gamma));
  }
  const auto again = make_testset(base, opt);
  for (std::size_t i = 0; i < pairs.size(); ++i) EXPECT_EQ(pairs[i].gamma, again[i].gamma);
  opt.seed = 4;
  EXPECT_NE(make_testset(base, opt)[0].gamma, pairs[0].gamma);
}

TEST(MakeTestset, ViewpointWithIdentityLut) {
  auto model = std::make_shared<const FisheyeModel>(test::standard_model(48, 48));
  const auto luts = bake_lut_set(*model, 1, 0, {0.0, 0.0});
  TestSetOptions opt;
  opt.mode = TestMode::kViewpoint;
  const auto base = scenes(2, 48, 1);
  const auto pairs = make_testset(base, opt, luts, model);
  ASSERT_EQ(pairs.size(), 2u);
  for (const auto& p : pairs) {
    EXPECT_EQ(p.a, p.b);
    for (auto v : p.mask_a.pixels()) EXPECT_EQ(v, 1);
    for (auto v : p.mask_b.pixels()) EXPECT_EQ(v, 1);
  }
  EXPECT_EQ(code_of([&] { make_testset(base, opt, {}, model); }), ErrorCode::kEmptyLutSet);
  EXPECT_EQ(code_of([&] { make_testset({}, opt, luts, model); }), ErrorCode::kEmptyDataset);
}

TEST(Testset, SaveLoadRoundTrip) {
  test::TempDir dir("ts");
  auto model = std::make_shared<const FisheyeModel>(test::standard_model(64, 64));
  const auto luts = bake_lut_set(*model, 2, 5);
  TestSetOptions opt;
  opt.mode = TestMode::kViewpoint;
  const auto pairs = make_testset(scenes(3, 64, 2), opt, luts, model);
  save_testset(dir.str(), pairs, opt, R"({"tool":"test"})");
  const auto back = load_testset(dir.str());
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].a, pairs[i].a);
    EXPECT_EQ(back[i].b, pairs[i].b);
    EXPECT_EQ(back[i].mask_a, pairs[i].mask_a);
    EXPECT_EQ(back[i].lut_index, pairs[i].lut_index);
    EXPECT_EQ(back[i].gt.kind(), GroundTruthMap::Kind::kFisheye);
    const auto p = pairs[i].gt.map({30, 30});
    const auto q = back[i].gt.map({30, 30});
    EXPECT_NEAR(p.u, q.u, 1e-9);
  }
  const auto manifest = json::parse(test::read_file(dir.file("manifest.json")));
  EXPECT_EQ(manifest["tool"], "test");
  EXPECT_EQ(manifest["testset"]["count"], 3);
}

TEST(RunBenchmark, IdentityTestsetIsPerfect) {
  std::vector<TestPair> pairs;
  for (const auto& img : scenes(4, 96, 10)) {
    TestPair p;
    p.a = p.b = img;
    p.gt = GroundTruthMap::identity();
    p.mask_a = p.mask_b = Mask(96, 96, 1);
    p.condition = "identity";
    pairs.push_back(std::move(p));
  }
  for (auto algo : {DetectorAlgo::kHarris, DetectorAlgo::kShi, DetectorAlgo::kFast}) {
    DetectorConfig det;
    det.algo = algo;
    const auto report = run_benchmark(pairs, builtin_features(det), {}, to_string(algo));
    const auto rows = report.aggregates();
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].repeatability, 1.0);
    EXPECT_EQ(rows[0].m_c, 1.0);
    EXPECT_EQ(rows[0].rmse, 0.0);
    EXPECT_EQ(rows[0].h_c, 1.0);
    EXPECT_EQ(rows[0].n_pairs, 4u);
  }
}

TEST(RunBenchmark, ViewpointPairsInternallyConsistent) {
  auto model = std::make_shared<const FisheyeModel>(test::standard_model(128, 128));
  const auto luts = bake_lut_set(*model, 20, 31);
  TestSetOptions opt;
  opt.mode = TestMode::kViewpoint;
  const auto pairs = make_testset(scenes(20, 128, 40), opt, luts, model);
  DetectorConfig det;
  det.nms_size = 8;
  det.k = 300;
  EvalConfig cfg;
  cfg.nms_size = 8;
  cfg.threads = 2;
  const auto report = run_benchmark(pairs, builtin_features(det), cfg, "harris");
  ASSERT_EQ(report.pairs.size(), 20u);
  for (const auto& r : report.pairs) {
    EXPECT_TRUE(r.error.empty()) << r.error;
    EXPECT_GE(r.repeatability, 0.0);
    EXPECT_LE(r.repeatability, 1.0);
    EXPECT_LE(r.n_inliers, r.n_matches);
    EXPECT_LE(r.n_matches, 300u);
    EXPECT_FALSE(r.h_correct.has_value());
  }
  // Same rows whatever the worker count.
  cfg.threads = 1;
  EXPECT_EQ(report_csv(run_benchmark(pairs, builtin_features(det), cfg, "harris")), report_csv(report));
}

TEST(RunBenchmark, ExternalFeaturesSameSchema) {
  test::TempDir dir("ext");
  std::vector<TestPair> pairs;
  std::vector<ExternalPairFiles> files;
  for (const auto& img : scenes(2, 96, 20)) {
    TestPair p;
    p.a = p.b = img;
    p.gt = GroundTruthMap::identity();
    p.condition = "identity";
    const auto d = describe_brief(img, detect(to_float(img), {}), 0);
    const std::string stem = dir.file("p" + std::to_string(pairs.size()));
    write_keypoints_csv(stem + ".csv", d.keypoints);
    save_descriptors(stem + ".fdsc", d.descriptors);
    files.push_back({stem + ".csv", stem + ".fdsc", stem + ".csv", stem + ".fdsc"});
    pairs.push_back(std::move(p));
  }
  const auto ext = run_benchmark(pairs, external_features(files), {}, "external");
  const auto csv = report_csv(ext);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "pair_id,condition,algorithm,nms,k,epsilon,repeatability,n_matches,n_inliers,m_c,h_correct,rmse_pair");
  EXPECT_EQ(ext.aggregates()[0].m_c, 1.0);
  const auto missing = run_benchmark(pairs, external_features({}), {}, "external");
  EXPECT_FALSE(missing.pairs[0].error.empty());
  EXPECT_EQ(missing.aggregates()[0].failed, 2u);
}

TEST(Report, CsvRoundTripAndJsonShape) {
  test::TempDir dir("rep");
  EvalReport r;
  PairResult a;
  a.pair_id = 0;
  a.condition = "illumination";
  a.algorithm = "harris";
  a.nms = 4;
  a.k = 300;
  a.epsilon = 3;
  a.repeatability = 0.5;
  a.n_matches = 4;
  a.n_inliers = 2;
  a.m_c = 0.5;
  a.h_correct = true;
  a.rmse_pair = 2.0;
  PairResult b = a;
  b.pair_id = 1;
  b.repeatability = NAN;
  b.n_matches = 0;
  b.n_inliers = 0;
  b.m_c = NAN;
  b.h_correct = false;
  b.rmse_pair = NAN;
  r.pairs = {a, b};
  std::ofstream(dir.file("r.csv")) << report_csv(r);
  const auto back = read_report_csv(dir.file("r.csv"));
  ASSERT_EQ(back.pairs.size(), 2u);
  EXPECT_TRUE(std::isnan(back.pairs[1].m_c));
  EXPECT_EQ(back.pairs[0].h_correct, std::optional<bool>(true));
  EXPECT_EQ(report_csv(back), report_csv(r));

  const auto rows = r.aggregates();
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].repeatability, 0.5);
  EXPECT_EQ(rows[0].repeatability_undefined, 1u);
  EXPECT_EQ(rows[0].h_c, 0.5);
  EXPECT_NEAR(rows[0].rmse, 2.0, 1e-12);

  const auto j = json::parse(report_json(r));
  EXPECT_EQ(j["table1"].size(), 1u);
  EXPECT_EQ(j["table2"][0]["m_c"], 0.5);
  const std::vector<EvalReport> both{r, r};
  EXPECT_EQ(merge_reports(both).pairs.size(), 4u);
}

}  // namespace
}  // namespace fkb
