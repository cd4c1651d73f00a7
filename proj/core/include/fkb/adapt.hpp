#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fkb/camera.hpp"
#include "fkb/features.hpp"
#include "fkb/image.hpp"
#include "fkb/warp.hpp"

namespace fkb {

enum class Accumulation { kPointVote, kHeatmap };

std::string to_string(Accumulation mode);
Accumulation accumulation_from_string(const std::string& name);

struct AdaptationConfig {
  int n_warps = 100;
  bool include_identity = true;
  Accumulation accumulation = Accumulation::kPointVote;
  // Votes are splatted bilinearly and spread by a tent of radius
  // vote_radius + 1 before normalization.
  int vote_radius = 1;
  // Point-vote: minimum fraction of covering warps that detected the point.
  // Heatmap: fraction of the peak normalized response.
  double superset_threshold = 0.5;
  int nms_size = 4;
  int k = 300;
  // Detections within this many pixels of a warp's invalid region are
  // discarded; the same eroded region defines coverage.
  int border_margin = 4;
  int threads = 1;

  void validate() const;
};

/// Per-pixel vote mass (point-vote: splatted detections; heatmap: summed
/// back-warped responses) and the number of warps in which the pixel was
/// visible inside the eroded valid region.
struct AccumulatorMap {
  int width = 0;
  int height = 0;
  std::vector<float> votes;
  std::vector<std::uint16_t> coverage;
};

/// The warp a detector is being run under; lut == nullptr is the identity.
struct WarpContext {
  const LutPair* lut = nullptr;
  int index = -1;
};

struct BaseDetector {
  std::string name;
  // Dense response for heatmap accumulation.
  std::function<ImageF32(const ImageF32&)> response;
  // Point detections (already NMS/top-k filtered) in the warped frame.
  std::function<KeypointSet(const ImageF32&, const WarpContext&)> detect;
};

BaseDetector builtin_detector(const DetectorConfig& config);
// Detector that "detects" a fixed superset by mapping it into each warp;
// used for multi-round adaptation without a learner.
BaseDetector lookup_detector(KeypointSet superset, FisheyeModel model);

struct AdaptationResult {
  AccumulatorMap accumulator;
  // Point-vote: vote mass within vote_radius (box sum, at most 1 per warp) over coverage, i.e.
  // the fraction of covering warps that detected a point there.
  // Heatmap: mean back-warped response. Zero where coverage is 0.
  ImageF32 normalized;
  // Scores are the normalized values.
  KeypointSet superset;
};

/// Runs the base detector on the image warped by each of the first n_warps
/// forward fields (plus the unwarped image when include_identity), maps the
/// detections back with the exact inverse point map, accumulates them and
/// extracts the superset by NMS/top-k at superset_threshold.
/// Throws EmptyLutSet, DimensionMismatch or RangeError.
AdaptationResult adapt_image(const ImageF32& img, const BaseDetector& detector, const FisheyeModel& model,
                             std::span<const LutPair> luts, const AdaptationConfig& config);

// Round r + 1 uses the round-r superset as a lookup detector.
AdaptationResult adapt_rounds(const ImageF32& img, const BaseDetector& detector, const FisheyeModel& model,
                              std::span<const LutPair> luts, const AdaptationConfig& config, int rounds);

void export_labels(const KeypointSet& superset, const std::string& path);

struct CorpusOptions {
  std::string out_dir;
  std::uint64_t seed = 0;           // LUT seed, recorded only
  std::string manifest_extra_json;  // merged into the run manifest when non-empty
  int rounds = 1;
  // Images are resized (align-corners bilinear) to this size first; 0 keeps them.
  int width = 0;
  int height = 0;
};

/// One label CSV per image (NNNNN_<stem>.csv) plus manifest.json in out_dir.
/// Returns the label file paths in input order.
std::vector<std::string> adapt_corpus(std::span<const std::string> image_paths, const BaseDetector& detector,
                                      const FisheyeModel& model, std::span<const LutPair> luts,
                                      const AdaptationConfig& config, const CorpusOptions& options);

}  // namespace fkb
