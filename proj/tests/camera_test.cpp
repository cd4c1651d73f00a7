#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fkb/camera.hpp"
#include "fkb/error.hpp"
#include "fkb/rng.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"

namespace fkb {
namespace {

FisheyeModel equidistant() { return FisheyeModel({1.0, 0.0, 0.0, 0.0}, 0.0, 0.0, 10, 10); }
FisheyeModel quadratic() { return FisheyeModel({1.0, 0.1, 0.0, 0.0}, 0.0, 0.0, 10, 10); }

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected fkb::Error";
  return ErrorCode::kInternal;
}

TEST(FisheyeModel, RejectsInvalidParameters) {
  EXPECT_EQ(code_of([] { FisheyeModel({}, 1, 1, 4, 4); }), ErrorCode::kDomain);
  EXPECT_EQ(code_of([] { FisheyeModel({-1.0}, 1, 1, 4, 4); }), ErrorCode::kDomain);
  EXPECT_EQ(code_of([] { FisheyeModel({1.0}, 5, 1, 4, 4); }), ErrorCode::kDomain);
  EXPECT_EQ(code_of([] { FisheyeModel({1.0, 0.0, -1.0}, 1, 1, 4, 4, 1.5); }), ErrorCode::kDomain);
  EXPECT_EQ(code_of([] { FisheyeModel({1.0}, 1, 1, 4, 4, 4.0); }), ErrorCode::kDomain);
}

TEST(FisheyeModel, DefaultThetaMaxKeepsDerivativePositive) {
  // p'(theta) = 1 - 0.3 theta^2 vanishes at sqrt(1/0.3).
  const FisheyeModel m({1.0, 0.0, -0.1}, 50, 50, 100, 100);
  EXPECT_LE(m.theta_max(), std::sqrt(1.0 / 0.3) + 1e-9);
  EXPECT_GT(m.theta_max(), std::sqrt(1.0 / 0.3) - 1e-2);
}

TEST(Project, OpticalAxisHitsPrincipalPoint) {
  const auto p = equidistant().project({0, 0, 1});
  EXPECT_DOUBLE_EQ(p.u, 0.0);
  EXPECT_DOUBLE_EQ(p.v, 0.0);
}

TEST(Project, EquidistantAtFortyFiveDegrees) {
  const auto p = equidistant().project({1, 0, 1});
  EXPECT_NEAR(p.u, std::numbers::pi / 4, 1e-12);
  EXPECT_NEAR(p.v, 0.0, 1e-12);
}

TEST(Project, QuadraticTermEvaluated) {
  const auto p = quadratic().project({std::sin(0.5), 0, std::cos(0.5)});
  EXPECT_NEAR(p.u, 0.525, 1e-12);
  EXPECT_NEAR(p.v, 0.0, 1e-12);
}

TEST(Project, ZeroVectorIsDegenerate) {
  EXPECT_EQ(code_of([] { equidistant().project({0, 0, 0}); }), ErrorCode::kDegenerateInput);
}

TEST(Project, BeyondThetaMaxIsDomainError) {
  const FisheyeModel m({1.0}, 5, 5, 10, 10, 1.0);
  EXPECT_EQ(code_of([&] { m.project({1, 0, 0}); }), ErrorCode::kDomain);
}

TEST(Unproject, EquidistantInverse) {
  const auto x = equidistant().unproject({std::numbers::pi / 4, 0});
  EXPECT_NEAR(x.x(), std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(x.y(), 0.0, 1e-12);
  EXPECT_NEAR(x.z(), std::sqrt(0.5), 1e-12);
}

TEST(Unproject, QuadraticMatchesClosedFormRoot) {
  const double theta = (-1.0 + std::sqrt(1.36)) / 0.2;
  EXPECT_NEAR(theta, 0.8309519, 1e-7);
  const auto x = quadratic().unproject({0.9, 0});
  EXPECT_NEAR(x.x(), std::sin(theta), 1e-12);
  EXPECT_NEAR(x.z(), std::cos(theta), 1e-12);
}

TEST(Unproject, PrincipalPointIsOpticalAxis) {
  const auto m = test::standard_model(64, 48);
  const auto x = m.unproject(m.principal_point());
  EXPECT_EQ(x, Eigen::Vector3d(0, 0, 1));
}

TEST(Unproject, OutsideDomainFails) {
  const FisheyeModel m({1.0}, 5, 5, 10, 10, 1.0);
  EXPECT_EQ(code_of([&] { m.unproject({7.0, 5.0}); }), ErrorCode::kDomain);
}

TEST(Project, ScaleInvariant) {
  CounterRng rng(3, StreamDomain::kSynthetic, 0);
  const auto m = test::standard_model(256, 256);
  for (int i = 0; i < 2000; ++i) {
    const Eigen::Vector3d x = test::random_ray(rng, m.theta_max()) * rng.uniform(0.1, 10.0);
    const auto p = m.project(x);
    for (double lambda : {0.25, 2.0, 1024.0}) {
      const auto q = m.project(lambda * x);
      ASSERT_EQ(p, q);
    }
    const double lambda = rng.uniform(1e-3, 1e3);
    const auto q = m.project(lambda * x);
    ASSERT_NEAR(p.u, q.u, 1e-12 * std::max(1.0, std::abs(p.u)));
    ASSERT_NEAR(p.v, q.v, 1e-12 * std::max(1.0, std::abs(p.v)));
  }
}

TEST(Project, RoundTripRandomDirections) {
  CounterRng rng(5, StreamDomain::kSynthetic, 0);
  const auto m = test::random_quartic(5, 320, 240);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Eigen::Vector3d x = test::random_ray(rng, m.theta_max());
    worst = std::max(worst, (m.unproject(m.project(x)) - x).norm());
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(SolveTheta, AgreesWithBisection) {
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto m = test::random_quartic(s, 128, 128);
    CounterRng rng(s, StreamDomain::kSynthetic, 1);
    const double r = rng.uniform(0.0, m.max_radius());
    const double expect = test::bisect_theta(m.coeffs(), r, m.theta_max());
    ASSERT_NEAR(m.solve_theta(r), expect, 1e-10) << "model " << s;
  }
}

std::vector<RadialSample> synthesize(std::span<const double> coeffs, double hi, int n) {
  std::vector<RadialSample> out;
  for (int i = 1; i <= n; ++i) {
    const double theta = hi * i / n;
    out.push_back({theta, test::poly(coeffs, theta)});
  }
  return out;
}

TEST(FitPolynomial, RecoversQuartic) {
  const std::vector<double> truth{300, -12, 4, -0.5};
  const auto fit = fit_polynomial(synthesize(truth, 1.6, 50), 4);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(fit.coeffs[i], truth[i], 1e-6);
  EXPECT_LT(fit.rms_residual, 1e-8);
  EXPECT_TRUE(fit.monotonic);
}

TEST(FitPolynomial, LinearDataGivesLinearModel) {
  std::vector<RadialSample> samples;
  for (int i = 1; i <= 20; ++i) samples.push_back({0.05 * i, 0.1 * i});
  const auto fit = fit_polynomial(samples, 4);
  EXPECT_NEAR(fit.coeffs[0], 2.0, 1e-9);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(fit.coeffs[i], 0.0, 1e-9);
}

TEST(FitPolynomial, UnderdeterminedIsSingular) {
  std::vector<RadialSample> samples{{0.1, 1}, {0.2, 2}, {0.3, 3}};
  EXPECT_EQ(code_of([&] { fit_polynomial(samples, 4); }), ErrorCode::kSingularFit);
}

std::vector<RemapEntry> synth_table(const FisheyeModel& m, double f, PixelPoint c) {
  std::vector<RemapEntry> table;
  for (int v = 0; v < m.height(); v += 8) {
    for (int u = 0; u < m.width(); u += 8) {
      const double dx = u - c.u;
      const double dy = v - c.v;
      const double rho = std::hypot(dx, dy);
      const double theta = std::atan(rho / f);
      const double r = m.radius(theta);
      const double ux = rho > 0 ? dx / rho : 0.0;
      const double uy = rho > 0 ? dy / rho : 0.0;
      table.push_back({m.cx() + r * ux, m.cy() + r * uy, static_cast<double>(u), static_cast<double>(v)});
    }
  }
  return table;
}

TEST(FitFromRemapTable, RecoversKnownModel) {
  const auto m = test::standard_model(512, 512);
  const auto table = synth_table(m, 400.0, {255.5, 255.5});
  RemapFitOptions opt;
  opt.focal = 400.0;
  opt.principal_point = m.principal_point();
  opt.undistorted_center = PixelPoint{255.5, 255.5};
  opt.width = 512;
  opt.height = 512;
  const auto res = fit_from_remap_table(table, opt);
  ASSERT_EQ(res.model.order(), 4);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(res.model.coeffs()[i], m.coeffs()[i], 1e-4);
  EXPECT_EQ(res.samples_used, table.size());
}

TEST(FitFromRemapTable, EmptyAndSingleRow) {
  RemapFitOptions opt;
  opt.focal = 400.0;
  opt.principal_point = {10, 10};
  opt.width = 20;
  opt.height = 20;
  EXPECT_EQ(code_of([&] { fit_from_remap_table({}, opt); }), ErrorCode::kFormat);
  const std::vector<RemapEntry> one{{12, 10, 14, 10}};
  EXPECT_EQ(code_of([&] { fit_from_remap_table(one, opt); }), ErrorCode::kSingularFit);
}

TEST(RemapTableFile, RoundTrip) {
  test::TempDir dir("remap");
  const auto table = synth_table(test::standard_model(64, 64), 50.0, {31.5, 31.5});
  write_remap_table(dir.file("t.csv"), table);
  const auto back = read_remap_table(dir.file("t.csv"));
  ASSERT_EQ(back.size(), table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    EXPECT_EQ(back[i].u_dist, table[i].u_dist);
    EXPECT_EQ(back[i].v_undist, table[i].v_undist);
  }
}

TEST(ModelJson, RoundTripAndDigest) {
  test::TempDir dir("model");
  const auto m = test::random_quartic(17, 200, 100);
  save_model(dir.file("m.json"), m);
  const auto back = load_model(dir.file("m.json"));
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.digest(), m.digest());
  EXPECT_NE(test::random_quartic(18, 200, 100).digest(), m.digest());
  EXPECT_EQ(code_of([] { model_from_json("{\"order\": 2}"); }), ErrorCode::kFormat);
}

}  // namespace
}  // namespace fkb
