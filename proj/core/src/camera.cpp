#include "fkb/camera.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include "json.hpp"

#include "fkb/digest.hpp"
#include "fkb/error.hpp"
#include "internal/text.hpp"

namespace fkb {

namespace {

double eval_poly(std::span<const double> coeffs, double theta) {
  double acc = 0.0;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = (acc + *it) * theta;
  return acc;
}

double eval_poly_derivative(std::span<const double> coeffs, double theta) {
  double acc = 0.0;
  for (std::size_t i = coeffs.size(); i-- > 0;) acc = acc * theta + static_cast<double>(i + 1) * coeffs[i];
  return acc;
}

bool increasing_on(std::span<const double> coeffs, double theta_hi, int samples) {
  for (int i = 0; i <= samples; ++i) {
    const double theta = theta_hi * static_cast<double>(i) / samples;
    if (!(eval_poly_derivative(coeffs, theta) > 0.0)) return false;
  }
  return true;
}

}  // namespace

double distance(const PixelPoint& a, const PixelPoint& b) { return std::hypot(a.u - b.u, a.v - b.v); }

double default_theta_max(std::span<const double> coeffs, double radius_cap) {
  constexpr int kScan = FisheyeModel::kMonotonicitySamples;
  const double pi = std::numbers::pi;

  double hi = pi;
  for (int i = 1; i <= kScan; ++i) {
    const double theta = pi * static_cast<double>(i) / kScan;
    if (!(eval_poly_derivative(coeffs, theta) > 0.0)) {
      // Keep lo strictly inside the increasing region.
      double lo = pi * static_cast<double>(i - 1) / kScan;
      double bad = theta;
      for (int it = 0; it < 200 && bad - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + bad);
        (eval_poly_derivative(coeffs, mid) > 0.0 ? lo : bad) = mid;
      }
      hi = lo;
      break;
    }
  }

  if (eval_poly(coeffs, hi) <= radius_cap) return hi;
  double lo = 0.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    (eval_poly(coeffs, mid) <= radius_cap ? lo : hi) = mid;
  }
  return lo;
}

FisheyeModel::FisheyeModel(std::vector<double> coeffs, double cx, double cy, int width, int height,
                           std::optional<double> theta_max)
    : coeffs_(std::move(coeffs)), cx_(cx), cy_(cy), width_(width), height_(height) {
  if (coeffs_.empty()) fail(ErrorCode::kDomain, "fisheye model needs at least one coefficient");
  for (double a : coeffs_) {
    if (!std::isfinite(a)) fail(ErrorCode::kDomain, "fisheye coefficients must be finite");
  }
  if (!(coeffs_[0] > 0.0)) fail(ErrorCode::kDomain, "fisheye coefficient a1 must be positive");
  if (width_ <= 0 || height_ <= 0) fail(ErrorCode::kDomain, "image size must be positive");
  if (!(cx_ >= 0.0 && cx_ < width_ && cy_ >= 0.0 && cy_ < height_)) {
    fail(ErrorCode::kDomain, "principal point must lie inside the image");
  }

  if (theta_max) {
    theta_max_ = *theta_max;
    if (!(theta_max_ > 0.0 && theta_max_ <= std::numbers::pi)) {
      fail(ErrorCode::kDomain, "theta_max must lie in (0, pi]");
    }
    if (!increasing_on(coeffs_, theta_max_, kMonotonicitySamples)) {
      fail(ErrorCode::kDomain, "p(theta) is not strictly increasing on [0, theta_max]");
    }
  } else {
    theta_max_ = default_theta_max(coeffs_, std::hypot(static_cast<double>(width_), static_cast<double>(height_)));
  }
  max_radius_ = eval_poly(coeffs_, theta_max_);
}

double FisheyeModel::radius(double theta) const { return eval_poly(coeffs_, theta); }

double FisheyeModel::radius_derivative(double theta) const { return eval_poly_derivative(coeffs_, theta); }

double FisheyeModel::solve_theta(double r) const {
  if (r <= 0.0) return 0.0;
  if (r >= max_radius_) return theta_max_;

  // Safeguarded Newton: the bracket [lo, hi] always contains the root, and any
  // step leaving it is replaced by bisection.
  double lo = 0.0;
  double hi = theta_max_;
  double theta = std::clamp(r / coeffs_[0], lo, hi);
  for (int it = 0; it < kRootMaxIterations; ++it) {
    const double f = radius(theta) - r;
    if (f == 0.0) return theta;
    (f < 0.0 ? lo : hi) = theta;

    const double df = radius_derivative(theta);
    double next = df > 0.0 ? theta - f / df : lo - 1.0;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - theta) < kRootTolerance) return next;
    theta = next;
  }
  return theta;
}

std::optional<PixelPoint> FisheyeModel::try_project(const Eigen::Vector3d& ray) const {
  const double m = ray.cwiseAbs().maxCoeff();
  if (!(m > 0.0) || !std::isfinite(m)) return std::nullopt;
  // Power-of-two normalization is exact, so project(2^k X) == project(X) bitwise.
  const int e = std::ilogb(m);
  const double x = std::scalbn(ray.x(), -e);
  const double y = std::scalbn(ray.y(), -e);
  const double z = std::scalbn(ray.z(), -e);

  const double d = std::hypot(x, y);
  const double theta = std::atan2(d, z);
  if (theta > theta_max_) return std::nullopt;
  if (d == 0.0) return PixelPoint{cx_, cy_};
  const double r = radius(theta);
  return PixelPoint{cx_ + r * (x / d), cy_ + r * (y / d)};
}

PixelPoint FisheyeModel::project(const Eigen::Vector3d& ray) const {
  const double m = ray.cwiseAbs().maxCoeff();
  if (!(m > 0.0)) fail(ErrorCode::kDegenerateInput, "cannot project the zero vector");
  if (!std::isfinite(m)) fail(ErrorCode::kDegenerateInput, "cannot project a non-finite vector");
  auto p = try_project(ray);
  if (!p) fail(ErrorCode::kDomain, "ray incidence angle exceeds theta_max");
  return *p;
}

std::optional<SpherePoint> FisheyeModel::try_unproject(const PixelPoint& p) const {
  const double dx = p.u - cx_;
  const double dy = p.v - cy_;
  const double r = std::hypot(dx, dy);
  if (!std::isfinite(r) || r > max_radius_) return std::nullopt;
  if (r == 0.0) return SpherePoint(0.0, 0.0, 1.0);
  const double theta = solve_theta(r);
  const double s = std::sin(theta);
  return SpherePoint(s * (dx / r), s * (dy / r), std::cos(theta));
}

SpherePoint FisheyeModel::unproject(const PixelPoint& p) const {
  auto x = try_unproject(p);
  if (!x) fail(ErrorCode::kDomain, "pixel radius exceeds p(theta_max)");
  return *x;
}

std::array<std::uint8_t, 32> FisheyeModel::digest() const { return sha256(model_to_json(*this)); }

PolynomialFit fit_polynomial(std::span<const RadialSample> samples, int order) {
  if (order < 1) fail(ErrorCode::kRange, "polynomial order must be >= 1");
  std::set<double> distinct;
  for (const auto& s : samples) {
    if (!std::isfinite(s.theta) || !std::isfinite(s.radius)) fail(ErrorCode::kFormat, "non-finite fit sample");
    if (s.radius < 0.0) fail(ErrorCode::kFormat, "fit sample radius must be non-negative");
    if (s.theta > 0.0) distinct.insert(s.theta);
  }
  if (static_cast<int>(distinct.size()) < order) {
    fail(ErrorCode::kSingularFit, "need at least " + std::to_string(order) + " distinct positive thetas, got " +
                                      std::to_string(distinct.size()));
  }

  const auto m = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd a(m, order);
  Eigen::VectorXd r(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double theta = samples[static_cast<std::size_t>(i)].theta;
    double power = theta;
    for (int j = 0; j < order; ++j, power *= theta) a(i, j) = power;
    r(i) = samples[static_cast<std::size_t>(i)].radius;
  }

  // Unit-norm columns keep the monomial Gram matrix well conditioned.
  const Eigen::VectorXd scale = a.colwise().norm().transpose();
  for (int j = 0; j < order; ++j) {
    if (!(scale(j) > 0.0)) fail(ErrorCode::kSingularFit, "zero column in fit design matrix");
    a.col(j) /= scale(j);
  }

  const Eigen::MatrixXd normal = a.transpose() * a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal, Eigen::EigenvaluesOnly);
  const double lmax = eig.eigenvalues().maxCoeff();
  const double lmin = eig.eigenvalues().minCoeff();
  if (!(lmin > lmax * 1e-14)) fail(ErrorCode::kSingularFit, "normal equations are rank-deficient");

  const Eigen::LLT<Eigen::MatrixXd> llt(normal);
  if (llt.info() != Eigen::Success) fail(ErrorCode::kSingularFit, "normal equations are not positive definite");
  Eigen::VectorXd x = llt.solve(a.transpose() * r);
  // One step of iterative refinement against the original residual.
  x += llt.solve(a.transpose() * (r - a * x));

  PolynomialFit fit;
  fit.coeffs.resize(static_cast<std::size_t>(order));
  for (int j = 0; j < order; ++j) fit.coeffs[static_cast<std::size_t>(j)] = x(j) / scale(j);

  double sq = 0.0;
  double theta_hi = 0.0;
  for (const auto& s : samples) {
    const double e = eval_poly(fit.coeffs, s.theta) - s.radius;
    sq += e * e;
    theta_hi = std::max(theta_hi, s.theta);
  }
  fit.rms_residual = samples.empty() ? 0.0 : std::sqrt(sq / static_cast<double>(samples.size()));
  fit.monotonic = increasing_on(fit.coeffs, theta_hi, 1000);
  return fit;
}

RemapFitResult fit_from_remap_table(std::span<const RemapEntry> table, const RemapFitOptions& options) {
  if (table.empty()) fail(ErrorCode::kFormat, "remap table is empty");
  if (!(options.focal > 0.0)) fail(ErrorCode::kFormat, "pinhole focal length must be positive");

  const PixelPoint pp = options.principal_point;
  const PixelPoint center = options.undistorted_center.value_or(pp);

  std::vector<RadialSample> samples;
  samples.reserve(table.size());
  double max_u = 0.0;
  double max_v = 0.0;
  for (const auto& e : table) {
    if (!std::isfinite(e.u_dist) || !std::isfinite(e.v_dist) || !std::isfinite(e.u_undist) ||
        !std::isfinite(e.v_undist)) {
      fail(ErrorCode::kFormat, "remap table contains non-finite values");
    }
    max_u = std::max(max_u, e.u_dist);
    max_v = std::max(max_v, e.v_dist);
    const double r = distance({e.u_dist, e.v_dist}, pp);
    const double rho = distance({e.u_undist, e.v_undist}, center);
    const double theta = std::atan2(rho, options.focal);
    if (theta > 0.0 && r > 0.0) samples.push_back({theta, r});
  }

  PolynomialFit fit = fit_polynomial(samples, options.order);
  const int width = options.width > 0 ? options.width : static_cast<int>(std::ceil(max_u)) + 1;
  const int height = options.height > 0 ? options.height : static_cast<int>(std::ceil(max_v)) + 1;
  FisheyeModel model(fit.coeffs, pp.u, pp.v, width, height, options.theta_max);
  return RemapFitResult{std::move(model), std::move(fit), samples.size()};
}

std::vector<RemapEntry> read_remap_table(const std::string& path) {
  const auto lines = internal::read_lines(path);
  if (lines.empty()) fail(ErrorCode::kFormat, path + ": empty remap table");
  if (internal::trim(lines[0]) != "u_dist,v_dist,u_undist,v_undist") {
    fail(ErrorCode::kFormat, path + ": expected header 'u_dist,v_dist,u_undist,v_undist'");
  }
  std::vector<RemapEntry> table;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (internal::trim(lines[i]).empty()) continue;
    const auto fields = internal::split(lines[i], ',');
    const std::string where = path + ":" + std::to_string(i + 1);
    if (fields.size() != 4) fail(ErrorCode::kFormat, where + ": expected 4 fields");
    table.push_back({internal::parse_double(fields[0], where), internal::parse_double(fields[1], where),
                     internal::parse_double(fields[2], where), internal::parse_double(fields[3], where)});
  }
  return table;
}

void write_remap_table(const std::string& path, std::span<const RemapEntry> table) {
  std::string text = "u_dist,v_dist,u_undist,v_undist\n";
  for (const auto& e : table) {
    text += internal::format_double(e.u_dist) + "," + internal::format_double(e.v_dist) + "," +
            internal::format_double(e.u_undist) + "," + internal::format_double(e.v_undist) + "\n";
  }
  internal::write_text_file(path, text);
}

std::string model_to_json(const FisheyeModel& model) {
  nlohmann::json j;
  j["order"] = model.order();
  j["coeffs"] = model.coeffs();
  j["cx"] = model.cx();
  j["cy"] = model.cy();
  j["width"] = model.width();
  j["height"] = model.height();
  j["theta_max"] = model.theta_max();
  return j.dump();
}

FisheyeModel model_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    const auto coeffs = j.at("coeffs").get<std::vector<double>>();
    if (j.contains("order") && j.at("order").get<int>() != static_cast<int>(coeffs.size())) {
      fail(ErrorCode::kFormat, "model 'order' does not match the number of coefficients");
    }
    std::optional<double> theta_max;
    if (j.contains("theta_max") && !j.at("theta_max").is_null()) theta_max = j.at("theta_max").get<double>();
    return FisheyeModel(coeffs, j.at("cx").get<double>(), j.at("cy").get<double>(), j.at("width").get<int>(),
                        j.at("height").get<int>(), theta_max);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("malformed model JSON: ") + e.what());
  }
}

FisheyeModel load_model(const std::string& path) { return model_from_json(internal::read_text_file(path)); }

void save_model(const std::string& path, const FisheyeModel& model) {
  internal::write_text_file(path, model_to_json(model) + "\n");
}

}  // namespace fkb
