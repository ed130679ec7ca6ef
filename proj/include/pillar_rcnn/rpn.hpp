#pragma once

#include <array>
#include <string>
#include <vector>

#include "pillar_rcnn/geometry.hpp"
#include "pillar_rcnn/layers.hpp"

namespace pillar_rcnn {

/// A scored box. `score` is the classification score S, `iou_score` the predicted IoU
/// W_IoU, and `rectified_score` the ranking score S^(1-beta) * W_IoU^beta.
struct Detection {
  Box3D box;
  double score = 0;
  double iou_score = 0;
  double rectified_score = 0;

  int class_id() const { return box.class_id; }
};

struct RpnConfig {
  std::array<double, kNumClasses> beta = {0.68, 0.68, 0.68};
  std::array<double, kNumClasses> nms_iou = {0.8, 0.55, 0.55};
  std::array<int, kNumClasses> top_k = {200, 150, 150};
  double score_threshold = 0.1;  // peaks must be strictly above this
  double gaussian_overlap = 0.1;
  int min_radius = 2;

  void validate() const;
};

/// Vehicles are detected on the stride-8 level, pedestrians and cyclists on stride 4.
int class_stride(int class_id);
std::vector<int> classes_at_stride(int stride);
inline constexpr std::array<int, 2> kRpnStrides = {4, 8};

/// Regression channel layout of HeadOutput::regression and RpnPositive::regression.
enum RegressionChannel : int {
  kOffsetX = 0, kOffsetY, kZ, kLogLength, kLogWidth, kLogHeight, kSinYaw, kCosYaw, kRegressionChannels
};

/// Center-head predictions on one pyramid level. Heatmap and iou are post-sigmoid.
struct HeadOutput {
  int stride = 0;
  std::vector<int> class_ids;  // heatmap channel -> class id
  FeatureMapf heatmap;
  FeatureMapf regression;      // kRegressionChannels channels
  FeatureMapf iou;             // 1 channel
};

struct RpnPositive {
  int ix = 0, iy = 0;
  int channel = 0;  // heatmap channel
  Box3D box;
  std::array<double, kRegressionChannels> regression{};
};

struct RpnTargets {
  int stride = 0;
  std::vector<int> class_ids;
  FeatureMapf heatmap;
  std::vector<RpnPositive> positives;
};

/// 1x1 prediction heads for one level.
///
/// Tensor names: rpn.p{3,4}.{heatmap, offset, z, size, heading, iou}, kernel [1, 1, N, out].
struct RpnHeadWeights {
  int stride = 0;
  Conv2d<float> heatmap, offset, z, size, heading, iou;

  static std::string prefix(int stride);
  static std::vector<WeightSpec> specs(int stride, int in_channels);
  static RpnHeadWeights from_store(const WeightStore& store, int stride, int in_channels);
};

HeadOutput rpn_head_forward(const FeatureMapf& level, const RpnHeadWeights& weights);

/// CornerNet Gaussian radius (in cells) for a box of the given extent (in cells).
double gaussian_radius(double length_cells, double width_cells, double min_overlap);

/// Builds heatmap and regression targets on one level for the classes assigned to it.
/// Objects whose center falls outside the grid are skipped.
RpnTargets encode_targets(const std::vector<Box3D>& gt, int level_stride, const GridSpec& spec,
                          const RpnConfig& cfg = {});

/// Box encoded by the regression vector at cell (ix, iy).
/// center = (cell + offset) * stride * pillar_size + range_min, i.e. a zero offset points
/// at the cell's lower corner.
Box3D decode_box(int ix, int iy, const double* regression, int level_stride, const GridSpec& spec, int class_id);

struct RpnLevelLoss {
  int stride = 0;
  double heatmap = 0;     // penalty-reduced focal loss
  double regression = 0;  // L1 over the 8 regression channels at positives
  double iou = 0;         // L1 between predicted IoU and IoU of the decoded box with its gt
  int num_positives = 0;

  double total() const { return heatmap + regression + iou; }
};

struct RpnLoss {
  std::vector<RpnLevelLoss> levels;
  double total() const;
};

/// Per-level focal (alpha 2, beta 4) + L1 losses, each normalized by max(1, #positives).
/// Throws ValidationError on a shape mismatch.
RpnLoss rpn_loss(const std::vector<HeadOutput>& predictions, const std::vector<RpnTargets>& targets,
                 const GridSpec& spec);

/// 3x3 local-max peaks above the score threshold, top-k per class, decoded into boxes.
/// rectified_score is set equal to score; apply rectify_detections afterwards.
std::vector<Detection> decode_proposals(const HeadOutput& head, const GridSpec& spec, const RpnConfig& cfg);

/// S^(1-beta) * W^beta, with 0^0 = 1.
double rectify(double score, double iou_score, double beta);

void rectify_detections(std::vector<Detection>& dets, const std::array<double, kNumClasses>& beta);

/// Indices kept by class-wise greedy NMS over descending rectified_score (ties: lower index
/// first). A box is suppressed when its 3D IoU with a kept box of its class exceeds the
/// class threshold. Kept indices are returned in processing order.
std::vector<std::size_t> nms_3d_indices(const std::vector<Detection>& dets,
                                        const std::array<double, kNumClasses>& iou_thresholds);

std::vector<Detection> nms_3d(const std::vector<Detection>& dets,
                              const std::array<double, kNumClasses>& iou_thresholds);

/// One line per detection: class_id cx cy cz l w h yaw S W_IoU S_hat, 6 decimals.
std::string format_detections(const std::vector<Detection>& dets);
std::vector<Detection> parse_detections(const std::string& text, const std::string& source = "<memory>");

}  // namespace pillar_rcnn
