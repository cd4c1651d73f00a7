#include "fkb/homography.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "fkb/rng.hpp"
#include "internal/text.hpp"

namespace fkb {
namespace {

// Similarity taking the points to zero mean and mean distance sqrt(2).
Eigen::Matrix3d normalizer(std::span<const PixelPoint> pts) {
  double mx = 0.0;
  double my = 0.0;
  for (const auto& p : pts) {
    mx += p.u;
    my += p.v;
  }
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += std::hypot(p.u - mx, p.v - my);
  mean_dist /= static_cast<double>(pts.size());
  if (!(mean_dist > 0.0)) fail(ErrorCode::kSingularFit, "all correspondence points coincide");
  const double s = std::sqrt(2.0) / mean_dist;
  Eigen::Matrix3d T;
  T << s, 0, -s * mx, 0, s, -s * my, 0, 0, 1;
  return T;
}

Homography normalize_h33(const Homography& H) {
  if (std::abs(H(2, 2)) < 1e-12) fail(ErrorCode::kSingularFit, "homography has h33 = 0");
  return H / H(2, 2);
}

bool collinear(const PixelPoint& a, const PixelPoint& b, const PixelPoint& c) {
  const double ux = b.u - a.u;
  const double uy = b.v - a.v;
  const double vx = c.u - a.u;
  const double vy = c.v - a.v;
  const double cross = std::abs(ux * vy - uy * vx);
  const double scale = std::max({ux * ux + uy * uy, vx * vx + vy * vy, 1e-300});
  return cross <= 1e-9 * scale;
}

bool degenerate_sample(const std::array<PixelPoint, 4>& p) {
  for (int i = 0; i < 4; ++i) {
    if (collinear(p[(i + 1) % 4], p[(i + 2) % 4], p[(i + 3) % 4])) return true;
  }
  return false;
}

double transfer_error(const Homography& H, const Correspondence& c) {
  const Eigen::Vector3d q = H * Eigen::Vector3d(c.a.u, c.a.v, 1.0);
  if (std::abs(q.z()) < 1e-12) return std::numeric_limits<double>::infinity();
  return std::hypot(q.x() / q.z() - c.b.u, q.y() / q.z() - c.b.v);
}

std::vector<std::size_t> consensus(const Homography& H, std::span<const Correspondence> corr, double threshold) {
  std::vector<std::size_t> in;
  for (std::size_t i = 0; i < corr.size(); ++i) {
    if (transfer_error(H, corr[i]) <= threshold) in.push_back(i);
  }
  return in;
}

}  // namespace

Homography fit_homography_dlt(std::span<const Correspondence> corr) {
  if (corr.size() < 4) fail(ErrorCode::kInsufficientMatches, "a homography needs at least 4 correspondences");
  std::vector<PixelPoint> a;
  std::vector<PixelPoint> b;
  a.reserve(corr.size());
  b.reserve(corr.size());
  for (const auto& c : corr) {
    a.push_back(c.a);
    b.push_back(c.b);
  }
  const Eigen::Matrix3d Ta = normalizer(a);
  const Eigen::Matrix3d Tb = normalizer(b);

  Eigen::MatrixXd A(2 * corr.size(), 9);
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const Eigen::Vector3d p = Ta * Eigen::Vector3d(a[i].u, a[i].v, 1.0);
    const Eigen::Vector3d q = Tb * Eigen::Vector3d(b[i].u, b[i].v, 1.0);
    const double x = p.x(), y = p.y();
    const double u = q.x(), v = q.y();
    const Eigen::Index r = static_cast<Eigen::Index>(2 * i);
    A.row(r) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
    A.row(r + 1) << x, y, 1, 0, 0, 0, -u * x, -u * y, -u;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Homography Hn;
  Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Homography H = Tb.inverse() * Hn * Ta;
  if (!H.allFinite() || std::abs(H.determinant()) < 1e-12 * std::pow(H.norm(), 3)) {
    fail(ErrorCode::kSingularFit, "correspondences do not determine a homography");
  }
  return normalize_h33(H);
}

HomographyEstimate estimate_homography(std::span<const Correspondence> corr, const RansacOptions& options) {
  const std::size_t n = corr.size();
  if (n < 4) fail(ErrorCode::kInsufficientMatches, "a homography needs at least 4 correspondences");
  if (options.iterations < 1) fail(ErrorCode::kRange, "RANSAC needs at least one iteration");
  if (!(options.threshold > 0.0)) fail(ErrorCode::kRange, "RANSAC threshold must be positive");

  bool found = false;
  Homography best = Homography::Identity();
  std::size_t best_count = 0;
  for (int it = 0; it < options.iterations; ++it) {
    CounterRng rng(options.seed, StreamDomain::kRansac, static_cast<std::uint64_t>(it));
    std::array<std::size_t, 4> idx{};
    for (int k = 0; k < 4; ++k) {
      bool fresh = false;
      while (!fresh) {
        idx[k] = static_cast<std::size_t>(rng.below(n));
        fresh = std::find(idx.begin(), idx.begin() + k, idx[k]) == idx.begin() + k;
      }
    }
    std::array<PixelPoint, 4> pa{};
    std::array<PixelPoint, 4> pb{};
    std::array<Correspondence, 4> sample{};
    for (int k = 0; k < 4; ++k) {
      sample[k] = corr[idx[k]];
      pa[k] = sample[k].a;
      pb[k] = sample[k].b;
    }
    if (degenerate_sample(pa) || degenerate_sample(pb)) continue;
    Homography H;
    try {
      H = fit_homography_dlt(sample);
    } catch (const Error&) {
      continue;
    }
    const std::size_t count = consensus(H, corr, options.threshold).size();
    if (!found || count > best_count) {
      found = true;
      best = H;
      best_count = count;
    }
    // With exactly four correspondences every draw is the same sample.
    if (n == 4) break;
  }
  if (!found) fail(ErrorCode::kDegenerateConfiguration, "every RANSAC sample was degenerate");

  std::vector<std::size_t> inliers = consensus(best, corr, options.threshold);
  for (int refit = 0; refit < 3 && inliers.size() >= 4; ++refit) {
    std::vector<Correspondence> subset;
    subset.reserve(inliers.size());
    for (std::size_t i : inliers) subset.push_back(corr[i]);
    Homography H;
    try {
      H = fit_homography_dlt(subset);
    } catch (const Error&) {
      break;
    }
    std::vector<std::size_t> next = consensus(H, corr, options.threshold);
    if (next.size() < inliers.size()) break;
    best = H;
    const bool stable = next == inliers;
    inliers = std::move(next);
    if (stable) break;
  }
  return {best, inliers.size()};
}

HomographyEstimate estimate_homography(const MatchSet& matches, const KeypointSet& kps_a, const KeypointSet& kps_b,
                                       const RansacOptions& options) {
  std::vector<Correspondence> corr;
  corr.reserve(matches.size());
  for (const auto& m : matches) {
    if (m.index_a >= kps_a.size() || m.index_b >= kps_b.size()) {
      fail(ErrorCode::kRange, "match index outside the keypoint set");
    }
    const auto& a = kps_a.points[m.index_a];
    const auto& b = kps_b.points[m.index_b];
    corr.push_back({{a.x, a.y}, {b.x, b.y}});
  }
  return estimate_homography(corr, options);
}

PixelPoint apply_homography(const Homography& H, const PixelPoint& p) {
  const Eigen::Vector3d q = H * Eigen::Vector3d(p.u, p.v, 1.0);
  if (std::abs(q.z()) < 1e-12) fail(ErrorCode::kDegeneratePoint, "point maps to infinity under the homography");
  return {q.x() / q.z(), q.y() / q.z()};
}

double corner_error(const Homography& H_est, const Homography& H_gt, int width, int height) {
  const double w = width - 1;
  const double h = height - 1;
  const std::array<PixelPoint, 4> corners{{{0.0, 0.0}, {w, 0.0}, {0.0, h}, {w, h}}};
  double sum = 0.0;
  for (const auto& c : corners) sum += distance(apply_homography(H_est, c), apply_homography(H_gt, c));
  return sum / 4.0;
}

bool homography_correctness(const Homography& H_est, const Homography& H_gt, int width, int height,
                            double epsilon) {
  return corner_error(H_est, H_gt, width, height) <= epsilon;
}

Homography load_homography_text(const std::string& path) {
  std::istringstream in(internal::read_text_file(path));
  std::vector<double> v;
  std::string token;
  while (in >> token) v.push_back(internal::parse_double(token, path));
  if (v.size() != 9) fail(ErrorCode::kFormat, path + ": expected 9 homography entries, found " + std::to_string(v.size()));
  Homography H;
  H << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  if (std::abs(H(2, 2)) < 1e-12) fail(ErrorCode::kFormat, path + ": h33 is zero");
  return H / H(2, 2);
}

void save_homography_text(const std::string& path, const Homography& H) {
  std::string text;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      text += internal::format_double(H(r, c));
      text += c == 2 ? '\n' : ' ';
    }
  }
  internal::write_text_file(path, text);
}

}  // namespace fkb
