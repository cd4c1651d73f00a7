#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fkb/adapt.hpp"
#include "fkb/camera.hpp"
#include "fkb/features.hpp"
#include "fkb/homography.hpp"
#include "fkb/image.hpp"
#include "fkb/warp.hpp"

namespace fkb {

enum class RepeatabilityMode {
  // (correct_A + correct_B) / (|A| + |B|), each set checked in the other's frame.
  kSymmetric,
  // correct_A / |A| with A mapped into the frame of B.
  kOneWay,
};

struct EvalConfig {
  double epsilon = 3.0;
  int k = 300;
  int nms_size = 4;
  RepeatabilityMode repeatability_mode = RepeatabilityMode::kSymmetric;
  RansacOptions ransac;
  std::uint64_t brief_seed = 0;
  int threads = 1;

  void validate() const;
};

/// Maps points from the frame of image A to the frame of image B.
class GroundTruthMap {
 public:
  enum class Kind { kIdentity, kHomography, kFisheye };

  static GroundTruthMap identity();
  // Throws DegenerateInput when |det H| <= 1e-12; H is normalized to h33 = 1.
  static GroundTruthMap homography(const Homography& H);
  // x -> warp_point(model, T, x).
  static GroundTruthMap fisheye(std::shared_ptr<const FisheyeModel> model, const RigidTransform& T);

  Kind kind() const { return kind_; }
  const Homography& matrix() const { return H_; }
  const RigidTransform& transform() const { return T_; }
  const std::shared_ptr<const FisheyeModel>& model() const { return model_; }
  bool inverted() const { return inverted_; }

  // Throws OutOfDomain (fisheye) or DegeneratePoint (homography).
  PixelPoint map(const PixelPoint& p) const;
  std::optional<PixelPoint> try_map(const PixelPoint& p) const;
  GroundTruthMap inverse() const;

 private:
  Kind kind_ = Kind::kIdentity;
  Homography H_ = Homography::Identity();
  RigidTransform T_;
  std::shared_ptr<const FisheyeModel> model_;
  bool inverted_ = false;
};

// Scores preserved. Throws like GroundTruthMap::map.
KeypointSet map_points(const KeypointSet& pts, const GroundTruthMap& gt);

// Keeps points whose nearest pixel is inside the image and nonzero in the
// mask. An empty (0 x 0) mask keeps everything.
KeypointSet filter_by_mask(const KeypointSet& pts, const Mask& mask);

/// Points are mask-filtered first; a point counts as correct if a point of
/// the other set lies within epsilon (<=) of its mapped position. Points
/// that cannot be mapped count as incorrect. NaN when the denominator is 0.
double repeatability(const KeypointSet& a, const KeypointSet& b, const GroundTruthMap& gt, const Mask& mask_a,
                     const Mask& mask_b, double epsilon, RepeatabilityMode mode = RepeatabilityMode::kSymmetric);

struct MatchingResult {
  double m_c = 0.0;  // NaN without matches
  std::size_t n_matches = 0;
  std::size_t n_inliers = 0;
  std::vector<double> residuals;
};

/// residual = |gt(a_m) - b_m|; inliers have residual < epsilon (strict).
/// Matches whose source point cannot be mapped are dropped.
MatchingResult matching_correctness(const MatchSet& matches, const KeypointSet& kps_a, const KeypointSet& kps_b,
                                    const GroundTruthMap& gt, double epsilon);

// sqrt(sum d^2 / n). Throws EmptyInput.
double rmse(std::span<const double> residuals);

// ---------------------------------------------------------------------------
// Test sets

enum class TestMode { kIllumination, kViewpoint };

std::string to_string(TestMode mode);
TestMode test_mode_from_string(const std::string& name);

struct TestPair {
  ImageU8 a;
  ImageU8 b;
  GroundTruthMap gt;
  Mask mask_a;
  Mask mask_b;
  double gamma = 0.0;  // illumination only
  int lut_index = -1;  // viewpoint only
  std::string condition;
  std::string source;  // base image path, informational
};

struct TestSetOptions {
  TestMode mode = TestMode::kIllumination;
  std::uint64_t seed = 0;
  double gamma_lo = 0.1;
  double gamma_hi = 2.0;
};

/// Illumination: b = gamma_correct(a, gamma_i), gamma_i ~ U[lo, hi] from
/// stream (seed, i); identity ground truth, all-true masks.
/// Viewpoint: b = apply_warp(a, luts[i % n].forward), ground truth the exact
/// point map, mask_a = all-ones through the inverse field, mask_b = all-ones
/// through the forward field. Throws EmptyDataset, EmptyLutSet,
/// DimensionMismatch.
std::vector<TestPair> make_testset(std::span<const ImageU8> base_images, const TestSetOptions& options,
                                   std::span<const LutPair> luts = {},
                                   std::shared_ptr<const FisheyeModel> model = nullptr);

// pair_NNNNN_{a,b,mask_a,mask_b}.pgm plus manifest.json holding a "testset"
// object; extra_json (an object) is merged into the manifest when nonempty.
void save_testset(const std::string& dir, std::span<const TestPair> pairs, const TestSetOptions& options,
                  const std::string& extra_json = "");
// Reads <dir>/manifest.json. Masks are stored as 0/255.
std::vector<TestPair> load_testset(const std::string& dir);

// ---------------------------------------------------------------------------
// Benchmark

struct PairFeatures {
  // Detector output used for repeatability.
  KeypointSet detections_a;
  KeypointSet detections_b;
  // Described keypoints, row-aligned with the descriptors.
  KeypointSet a;
  KeypointSet b;
  DescriptorSet desc_a;
  DescriptorSet desc_b;
};

using FeatureSource = std::function<PairFeatures(const TestPair& pair, std::size_t pair_index)>;

// Built-in detector (NMS/top-k from the config) plus BRIEF.
FeatureSource builtin_features(const DetectorConfig& detector, std::uint64_t brief_seed = 0);
// Adaptation superset of each image plus BRIEF.
FeatureSource adapted_features(BaseDetector base, std::shared_ptr<const FisheyeModel> model,
                               std::shared_ptr<const std::vector<LutPair>> luts, const AdaptationConfig& config,
                               std::uint64_t brief_seed = 0);

struct ExternalPairFiles {
  std::string keypoints_a;
  std::string descriptors_a;
  std::string keypoints_b;
  std::string descriptors_b;
};
// One entry per pair, in pair order. Normalization warnings are dropped.
FeatureSource external_features(std::vector<ExternalPairFiles> files);

struct PairResult {
  std::size_t pair_id = 0;
  std::string condition;
  std::string algorithm;
  int nms = 0;
  int k = 0;
  double epsilon = 0.0;
  double repeatability = 0.0;  // NaN when undefined
  std::size_t n_matches = 0;
  std::size_t n_inliers = 0;
  double m_c = 0.0;                   // NaN without matches
  std::optional<bool> h_correct;      // absent unless the ground truth is a homography or identity
  double rmse_pair = 0.0;             // NaN without residuals
  std::vector<double> residuals;      // not serialized
  std::string error;                  // nonempty when the pair failed
};

struct AggregateRow {
  std::string condition;
  std::string algorithm;
  int nms = 0;
  int k = 0;
  double epsilon = 0.0;
  std::size_t n_pairs = 0;
  double repeatability = 0.0;  // mean over defined pairs
  std::size_t repeatability_undefined = 0;
  double m_c = 0.0;  // mean of per-pair ratios over pairs with >= 1 match
  std::size_t m_c_undefined = 0;
  double h_c = 0.0;  // fraction correct over pairs with a decision
  std::size_t h_c_pairs = 0;
  double rmse = 0.0;  // pooled over all residuals
  std::size_t n_residuals = 0;
  std::size_t failed = 0;
};

struct EvalReport {
  std::vector<PairResult> pairs;

  // Grouped by (condition, algorithm, nms, k, epsilon) in first-seen order.
  std::vector<AggregateRow> aggregates() const;
};

/// Evaluates pairs in parallel; rows are ordered by pair index. A failing
/// pair is recorded with its error message and the run continues.
EvalReport run_benchmark(std::span<const TestPair> pairs, const FeatureSource& source, const EvalConfig& config,
                         const std::string& algorithm);

// Columns: pair_id, condition, algorithm, nms, k, epsilon, repeatability,
// n_matches, n_inliers, m_c, h_correct, rmse_pair.
std::string report_csv(const EvalReport& report);
EvalReport read_report_csv(const std::string& path);
// "table1": repeatability per (algorithm, condition, nms);
// "table2": H_c, M_c, RMSE per (algorithm, condition, nms); plus diagnostics.
std::string report_json(const EvalReport& report);
EvalReport merge_reports(std::span<const EvalReport> reports);

}  // namespace fkb
