#pragma once

#include <array>
#include <string>
#include <vector>

#include "pillar_rcnn/rpn.hpp"

namespace pillar_rcnn {

enum class Difficulty { kLevel1 = 1, kLevel2 = 2 };

struct EvalConfig {
  std::array<double, kNumClasses> iou_thresholds = {0.7, 0.5, 0.5};
  int interpolation_points = 101;

  void validate() const;
};

/// LEVEL_1 keeps boxes with more than five points, LEVEL_2 boxes with at least one.
bool in_difficulty(const Box3D& gt, Difficulty level);
std::vector<Box3D> split_difficulty(const std::vector<Box3D>& gt, Difficulty level);

/// Outcome of matching one detection.
struct MatchResult {
  int gt_index = -1;           // matched gt (index into the scene's gt list) or -1
  bool ignored = false;        // matched a gt outside the difficulty level
  double heading_error = 0;    // radians in [0, pi], TP only
};

/// Greedy matching by descending rectified_score: each detection takes the unmatched
/// same-class gt with the highest 3D IoU at or above the class threshold.
std::vector<MatchResult> match_detections(const std::vector<Detection>& dets, const std::vector<Box3D>& gt,
                                          const EvalConfig& cfg, Difficulty level);

struct SceneResult {
  std::vector<Detection> detections;
  std::vector<Box3D> ground_truth;
};

struct ClassMetrics {
  double ap = 0;
  double aph = 0;
  bool has_gt = false;  // AP is undefined (reported 0) without ground truth
  int num_gt = 0;
  int num_tp = 0;
  int num_fp = 0;
};

/// AP and APH per class over all scenes. Each TP contributes 1 - heading_error / pi to the
/// APH precision numerator; recall is unweighted.
std::array<ClassMetrics, kNumClasses> compute_ap_aph(const std::vector<SceneResult>& scenes, const EvalConfig& cfg,
                                                     Difficulty level);

/// Interpolated area under a PR curve given points in detection order.
double interpolated_ap(const std::vector<double>& precision, const std::vector<double>& recall, int points);

struct MetricsReport {
  std::array<ClassMetrics, kNumClasses> level1;
  std::array<ClassMetrics, kNumClasses> level2;

  std::string to_json() const;
  /// One row per level: mean AP/APH over classes with ground truth, then per class.
  std::string to_table() const;
};

MetricsReport evaluate(const std::vector<SceneResult>& scenes, const EvalConfig& cfg);

}  // namespace pillar_rcnn
