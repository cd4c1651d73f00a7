#pragma once

#include <cstdint>
#include <span>
#include <string>

#include <Eigen/Core>

#include "fkb/camera.hpp"
#include "fkb/features.hpp"

namespace fkb {

using Homography = Eigen::Matrix3d;

struct Correspondence {
  PixelPoint a;
  PixelPoint b;
};

struct RansacOptions {
  double threshold = 3.0;  // reprojection error in px
  int iterations = 2000;
  std::uint64_t seed = 0;
};

struct HomographyEstimate {
  Homography H = Homography::Identity();
  std::size_t n_inliers = 0;
};

/// Normalized DLT over all correspondences (least squares for n > 4),
/// h33 = 1. Throws InsufficientMatches or SingularFit.
Homography fit_homography_dlt(std::span<const Correspondence> corr);

/// RANSAC over 4-point normalized DLT samples drawn from the seeded stream,
/// followed by a least-squares refit over the consensus set (repeated while
/// the consensus grows, at most 3 times). Throws InsufficientMatches (< 4)
/// and DegenerateConfiguration (every sample degenerate).
HomographyEstimate estimate_homography(std::span<const Correspondence> corr, const RansacOptions& options = {});
HomographyEstimate estimate_homography(const MatchSet& matches, const KeypointSet& kps_a, const KeypointSet& kps_b,
                                       const RansacOptions& options = {});

// Projective transform with w-division. Throws DegeneratePoint if |w| < 1e-12.
PixelPoint apply_homography(const Homography& H, const PixelPoint& p);

// Mean distance between the four image corners mapped by both matrices.
double corner_error(const Homography& H_est, const Homography& H_gt, int width, int height);
// corner_error <= epsilon.
bool homography_correctness(const Homography& H_est, const Homography& H_gt, int width, int height,
                            double epsilon = 3.0);

// Nine whitespace-separated entries, row-major; normalized so h33 = 1.
Homography load_homography_text(const std::string& path);
void save_homography_text(const std::string& path, const Homography& H);

}  // namespace fkb
