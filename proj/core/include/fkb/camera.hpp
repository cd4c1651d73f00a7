#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace fkb {

/// Image-plane location in pixels. Origin at the top-left pixel centre,
/// u grows to the right and v downwards. May lie outside the image.
struct PixelPoint {
  double u = 0.0;
  double v = 0.0;

  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

double distance(const PixelPoint& a, const PixelPoint& b);

/// Direction on the unit sphere (|X| = 1 within 1e-9).
using SpherePoint = Eigen::Vector3d;

/// Radial polynomial fisheye camera.
///
/// A ray X with incidence angle theta = arccos(Z / |X|) lands at radius
/// p(theta) = a1*theta + a2*theta^2 + ... + an*theta^n from the principal
/// point, along the direction of (X, Y). The coefficients carry pixel units.
///
/// Instances are immutable and validated on construction:
///   - n >= 1 and a1 > 0,
///   - p is strictly increasing on [0, theta_max] (p' sampled at 4096 points),
///   - 0 < theta_max <= pi,
///   - the principal point lies in [0, width) x [0, height).
class FisheyeModel {
 public:
  static constexpr int kMonotonicitySamples = 4096;
  static constexpr double kRootTolerance = 1e-12;
  static constexpr int kRootMaxIterations = 100;

  // theta_max defaults to the largest angle where p' stays positive and
  // p(theta) stays within the image diagonal.
  FisheyeModel(std::vector<double> coeffs, double cx, double cy, int width, int height,
               std::optional<double> theta_max = std::nullopt);

  int order() const { return static_cast<int>(coeffs_.size()); }
  const std::vector<double>& coeffs() const { return coeffs_; }
  PixelPoint principal_point() const { return {cx_, cy_}; }
  double cx() const { return cx_; }
  double cy() const { return cy_; }
  int width() const { return width_; }
  int height() const { return height_; }
  double theta_max() const { return theta_max_; }
  // p(theta_max): the largest radius that can be unprojected.
  double max_radius() const { return max_radius_; }

  double radius(double theta) const;
  double radius_derivative(double theta) const;

  // Unique root of p(theta) = r on [0, theta_max]; r must lie in [0, max_radius()].
  double solve_theta(double r) const;

  // Throws DegenerateInput for |X| = 0 and DomainError for theta > theta_max.
  PixelPoint project(const Eigen::Vector3d& ray) const;
  // Throws DomainError when |p - pp| > p(theta_max).
  SpherePoint unproject(const PixelPoint& p) const;

  // Non-throwing variants used by the per-pixel loops.
  std::optional<PixelPoint> try_project(const Eigen::Vector3d& ray) const;
  std::optional<SpherePoint> try_unproject(const PixelPoint& p) const;

  // SHA-256 of the canonical JSON serialization.
  std::array<std::uint8_t, 32> digest() const;

  friend bool operator==(const FisheyeModel&, const FisheyeModel&) = default;

 private:
  std::vector<double> coeffs_;
  double cx_;
  double cy_;
  int width_;
  int height_;
  double theta_max_;
  double max_radius_;
};

// Largest theta in (0, pi] for which p' > 0 on [0, theta] and p(theta) does
// not exceed `radius_cap`.
double default_theta_max(std::span<const double> coeffs, double radius_cap);

struct RadialSample {
  double theta = 0.0;   // rad
  double radius = 0.0;  // px
};

struct PolynomialFit {
  std::vector<double> coeffs;
  double rms_residual = 0.0;
  // False when the fitted p is not increasing over the sampled theta range.
  bool monotonic = true;
};

/// Least-squares fit of p(theta) = sum_i a_i theta^i (no constant term) by
/// column-scaled normal equations. Throws SingularFit when there are fewer
/// distinct positive thetas than `order` or the normal matrix is rank-deficient.
PolynomialFit fit_polynomial(std::span<const RadialSample> samples, int order);

/// One row of a distorted -> undistorted (pinhole) remap table.
struct RemapEntry {
  double u_dist = 0.0;
  double v_dist = 0.0;
  double u_undist = 0.0;
  double v_undist = 0.0;
};

struct RemapFitOptions {
  double focal = 0.0;                           // pinhole focal length, px
  PixelPoint principal_point;                   // distorted image
  std::optional<PixelPoint> undistorted_center;  // defaults to principal_point
  int order = 4;
  int width = 0;
  int height = 0;
  std::optional<double> theta_max;
};

struct RemapFitResult {
  FisheyeModel model;
  PolynomialFit fit;
  std::size_t samples_used = 0;
};

/// Converts each remap row into a (theta, r) sample, with theta the pinhole
/// ray angle atan(|undist - c| / f) and r = |dist - pp|, then fits p.
/// Throws FormatError for an empty table or a non-positive focal length.
RemapFitResult fit_from_remap_table(std::span<const RemapEntry> table, const RemapFitOptions& options);

// CSV with header "u_dist,v_dist,u_undist,v_undist".
std::vector<RemapEntry> read_remap_table(const std::string& path);
void write_remap_table(const std::string& path, std::span<const RemapEntry> table);

// JSON object {"order","coeffs","cx","cy","width","height","theta_max"}.
std::string model_to_json(const FisheyeModel& model);
FisheyeModel model_from_json(const std::string& text);
FisheyeModel load_model(const std::string& path);
void save_model(const std::string& path, const FisheyeModel& model);

}  // namespace fkb
