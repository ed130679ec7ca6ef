#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pillar_rcnn/layers.hpp"
#include "pillar_rcnn/rpn.hpp"

// Brute-force reference implementations. Each is deterministic for a fixed seed and shares
// no code path with the operator it checks beyond the basic value types.
namespace pillar_rcnn::oracle {

/// Monte-Carlo BEV IoU: uniform samples inside the smaller rect, hit test against the other.
/// Standard error of the IoU is below 1e-3 at 1e6 samples. Identical rects give exactly 1.
double mc_rotated_iou(const RotatedRect2D& a, const RotatedRect2D& b, std::int64_t samples, std::uint64_t seed);

/// Inclusive point-in-rect via edge cross products against the CCW corners.
bool point_in_rect_edges(const Vector2d& p, const RotatedRect2D& r);

/// Zero-padded dense convolution by explicit loops over every output, tap and channel pair.
FeatureMap<double> dense_conv_reference(const FeatureMap<double>& in, const Conv2d<double>& conv, int stride);

/// Output cells of a stride-`stride` 3x3 pad-1 convolution whose receptive field touches at
/// least one active input cell, row-major dense mask (out_h x out_w).
std::vector<std::uint8_t> reachable_mask(const SparseVolume<double>& in, int stride, int& out_h, int& out_w);

/// Select-max suppression over a full pairwise IoU matrix: repeatedly take the highest
/// remaining detection (ties: lower index) and drop every remaining same-class detection
/// whose IoU with it exceeds the class threshold.
std::vector<std::size_t> exhaustive_nms(const std::vector<Detection>& dets,
                                        const std::array<double, kNumClasses>& iou_thresholds);

/// Central differences, one coordinate at a time.
std::vector<double> finite_difference_grad(const std::function<double(const std::vector<double>&)>& f,
                                           const std::vector<double>& x, double h);

/// Head output a perfect network would produce for these targets: heatmap equal to the
/// target heatmap, exact regression at every positive cell, IoU head 1 there.
HeadOutput paint_head_output(const RpnTargets& targets);

/// Grid-point labels from the closed-form RoI-frame grid and the edge point-in-rect test.
std::vector<std::uint8_t> aux_labels_reference(const Box3D& roi, const std::vector<Box3D>& gt, int grid_size);

}  // namespace pillar_rcnn::oracle
