#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "pillar_rcnn/rpn.hpp"

namespace pillar_rcnn {

struct RcnnConfig {
  int grid_size = 7;
  std::array<int, 2> hidden = {256, 256};
  int seg_hidden = 64;
  int num_samples = 128;
  double positive_fraction = 0.5;
  double positive_iou = 0.55;

  void validate() const;
};

/// Class-agnostic refinement MLP plus the auxiliary grid-point segmentation head.
///
/// Tensor names (linear layers, [out, in]):
///   rcnn.fc1      G*G*C -> hidden[0]     rcnn.fc2 hidden[0] -> hidden[1]
///   rcnn.cls      hidden[1] -> 1         rcnn.reg hidden[1] -> 7
///   rcnn.seg.fc1  C -> seg_hidden        rcnn.seg.fc2 seg_hidden -> 1
template <typename Scalar>
struct RcnnWeights {
  Linear<Scalar> fc1, fc2, cls, reg, seg1, seg2;

  static std::vector<WeightSpec> specs(const RcnnConfig& cfg, int pool_channels);
  static RcnnWeights from_store(const WeightStore& store, const RcnnConfig& cfg, int pool_channels);
};

/// G x G sample points of the projected RoI, index i * G + j with i stepping along the
/// length axis. Point (i, j) sits at (-L/2 + (i + 0.5) L / G, -W/2 + (j + 0.5) W / G) in
/// the RoI frame.
std::vector<Vector2d> roi_grid_points(const Box3D& roi, int grid_size);

template <typename Scalar>
struct BilinearSample {
  RowVector<Scalar> value;
  // Support cells and d(value_c)/d(feature_c) for each; cells outside the map have weight
  // 0 and valid == false.
  struct Support {
    int ix = 0, iy = 0;
    Scalar weight = 0;
    bool valid = false;
  };
  std::array<Support, 4> support;
};

/// Bilinear interpolation on the lattice of cell centers, with zero padding outside the map.
template <typename Scalar>
BilinearSample<Scalar> bilinear_sample(const FeatureMap<Scalar>& map, const Vector2d& p, const GridSpec& spec);

/// Pooled RoI features, one row per grid point (G*G x C).
template <typename Scalar>
RowMatrix<Scalar> pool_roi(const FeatureMap<Scalar>& map, const Box3D& roi, int grid_size, const GridSpec& spec);

inline constexpr int kResidualDims = 7;
using Residuals = std::array<double, kResidualDims>;

/// (dx/d, dy/d, dz/h, log(l'/l), log(w'/w), log(h'/h), dyaw) with d the RoI BEV diagonal.
Residuals encode_residuals(const Box3D& roi, const Box3D& target);
Box3D decode_residuals(const Box3D& roi, const Residuals& r);

struct RcnnPrediction {
  double confidence_logit = 0;
  Residuals residuals{};
  std::vector<double> seg_logits;  // G*G, empty unless requested
};

template <typename Scalar>
std::vector<RcnnPrediction> rcnn_forward(const std::vector<Box3D>& rois, const FeatureMap<Scalar>& map,
                                         const RcnnWeights<Scalar>& weights, const RcnnConfig& cfg,
                                         const GridSpec& spec, bool with_segmentation = false);

struct SampledRoi {
  Box3D roi;
  bool positive = false;
  int gt_index = -1;  // best-IoU same-class gt, -1 when none overlaps
  double iou = 0;
  double confidence_target = 0;
  Residuals residual_target{};  // meaningful for positives only
};

/// clamp(2 * IoU - 0.5, 0, 1).
double confidence_target(double iou);

/// Splits proposals at cfg.positive_iou into positive/negative pools and draws up to
/// cfg.num_samples with the configured positive fraction, topping up from the other pool
/// when one runs short. Positives come first in the result.
std::vector<SampledRoi> sample_proposals(const std::vector<Box3D>& proposals, const std::vector<Box3D>& gt,
                                         std::uint64_t seed, const RcnnConfig& cfg = {});

/// 1 where grid point (i, j) of the RoI lies inside any projected gt rect (inclusive).
std::vector<std::uint8_t> aux_seg_labels(const Box3D& roi, const std::vector<Box3D>& gt, int grid_size);

struct RcnnLoss {
  double confidence = 0;  // BCE over all sampled RoIs
  double regression = 0;  // smooth-L1 over positives, divided by the positive count
  double segmentation = 0;

  double rcnn() const { return confidence + regression; }
};

/// `seg_labels[k]` holds the G*G labels of batch[k]. Throws ValidationError on size mismatch.
RcnnLoss rcnn_loss(const std::vector<SampledRoi>& batch, const std::vector<RcnnPrediction>& predictions,
                   const std::vector<std::vector<std::uint8_t>>& seg_labels);

/// Per-term breakdown of the training objective; total is the unweighted sum.
struct LossReport {
  std::vector<double> rpn;  // one entry per pyramid level
  double rcnn_confidence = 0;
  double rcnn_regression = 0;
  double rcnn = 0;
  double seg = 0;
  double total = 0;
};

LossReport make_loss_report(const RpnLoss& rpn, const RcnnLoss& rcnn);

double smooth_l1(double x, double transition = 1.0);
double bce_with_logit(double logit, double target);

/// Refined detections: boxes decoded from the residuals, score = sigmoid(logit), the
/// proposal's iou_score carried over, rectified_score recomputed with the class beta.
template <typename Scalar>
std::vector<Detection> refine(const std::vector<Detection>& proposals, const FeatureMap<Scalar>& map,
                              const RcnnWeights<Scalar>& weights, const RcnnConfig& cfg, const GridSpec& spec,
                              const std::array<double, kNumClasses>& beta);

}  // namespace pillar_rcnn
