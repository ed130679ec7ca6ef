#pragma once

#include <array>

#include "pillar_rcnn/layers.hpp"

namespace pillar_rcnn {

/// Channel plan of C1..C5. Stage 1 keeps stride 1; stages 2-5 each halve the resolution.
struct BackboneConfig {
  std::array<int, 5> channels = {16, 32, 64, 128, 256};
};

/// Parameters of the pillar encoder and the five backbone stages.
///
/// Tensor names:
///   pfn.linear                       [C1, 4]  per-point encoder
///   backbone.stage1.subm             3x3 submanifold, C1 -> C1
///   backbone.stage{2,3,4}.down       3x3 regular stride-2 sparse, C(k-1) -> Ck
///   backbone.stage{2,3,4}.subm       3x3 submanifold, Ck -> Ck
///   backbone.stage5.down             3x3 dense stride 2, C4 -> C5
///   backbone.stage5.conv             3x3 dense stride 1, C5 -> C5
template <typename Scalar>
struct BackboneWeights {
  Linear<Scalar> encoder;
  Conv2d<Scalar> stage1;
  std::array<Conv2d<Scalar>, 3> down;  // stages 2..4
  std::array<Conv2d<Scalar>, 3> subm;  // stages 2..4
  Conv2d<Scalar> stage5_down;
  Conv2d<Scalar> stage5_conv;

  static std::vector<WeightSpec> specs(const BackboneConfig& cfg);
  static BackboneWeights from_store(const WeightStore& store, const BackboneConfig& cfg);
};

template <typename Scalar>
struct BackboneOutput {
  std::array<SparseVolume<Scalar>, 4> sparse;  // C1..C4, strides 1, 2, 4, 8
  FeatureMap<Scalar> c5;                       // stride 16

  const SparseVolume<Scalar>& level(int k) const { return sparse.at(static_cast<std::size_t>(k - 1)); }
};

/// Simplified PointNet pillar encoder. Each in-range point becomes
/// [x - cell_cx, y - cell_cy, z, intensity], goes through linear + ReLU, and is max-pooled
/// per occupied cell. Cells are half-open: a point exactly at x_max (or y_max, z_max) is
/// dropped, as is anything below the minimum.
template <typename Scalar>
SparseVolume<Scalar> pillarize(const PointCloud& cloud, const GridSpec& spec, const Linear<Scalar>& encoder);

template <typename Scalar>
BackboneOutput<Scalar> backbone_forward(const SparseVolume<Scalar>& pillars,
                                        const BackboneWeights<Scalar>& weights);

}  // namespace pillar_rcnn
