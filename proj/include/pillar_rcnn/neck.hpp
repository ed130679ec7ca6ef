#pragma once

#include <map>

#include "pillar_rcnn/backbone.hpp"

namespace pillar_rcnn {

struct NeckConfig {
  int channels = 128;           // width of P3 / P4
  int pool_stride = 4;          // 2, 4 or 8
  int pool_channels = 128;
  int pool_source_stride = 4;   // bottom-up volume feeding the pooling map; <= pool_stride
  bool pool_bottom_up = true;   // false zeroes the bottom-up branch (semantic-only ablation)

  void validate() const;
};

/// Lateral-connection parameters. Concatenation order is always [top-down, bottom-up], so
/// each lateral kernel's input channels are laid out that way.
///
/// Tensor names:
///   neck.p4.deconv    2x2, C5 -> N          neck.p4.lateral   3x3, N + C4 -> N
///   neck.p3.deconv    2x2, N -> N           neck.p3.lateral   3x3, N + C3 -> N
///   neck.pool.deconv  2x2, Ctop -> P        neck.pool.lateral 3x3, P + Cb -> P
///   neck.pool.down{i} 3x3 stride-2 sparse, Cb -> Cb (only when the source stride is finer)
/// where Ctop is the channel count of the map at twice the pooling stride (P3, P4 or C5).
template <typename Scalar>
struct NeckWeights {
  Conv2d<Scalar> p4_deconv, p4_lateral;
  Conv2d<Scalar> p3_deconv, p3_lateral;
  Conv2d<Scalar> pool_deconv, pool_lateral;
  std::vector<Conv2d<Scalar>> pool_down;

  static std::vector<WeightSpec> specs(const NeckConfig& cfg, const BackboneConfig& backbone);
  static NeckWeights from_store(const WeightStore& store, const NeckConfig& cfg, const BackboneConfig& backbone);
};

/// RPN feature levels keyed by stride: {4: P3, 8: P4}.
template <typename Scalar>
struct FeaturePyramid {
  std::map<int, FeatureMap<Scalar>> levels;

  const FeatureMap<Scalar>& p3() const { return levels.at(4); }
  const FeatureMap<Scalar>& p4() const { return levels.at(8); }
};

/// Deconv-upsample `top_down` by 2, densify `bottom_up`, concatenate [up, bottom_up] and
/// apply a 3x3 conv + ReLU. Throws ValidationError when the upsampled map does not line up
/// with the bottom-up volume.
template <typename Scalar>
FeatureMap<Scalar> lateral_merge(const FeatureMap<Scalar>& top_down, const SparseVolume<Scalar>& bottom_up,
                                 const Conv2d<Scalar>& deconv, const Conv2d<Scalar>& lateral);

/// P4 = merge(C5, C4), P3 = merge(P4, C3).
template <typename Scalar>
FeaturePyramid<Scalar> build_pyramid(const BackboneOutput<Scalar>& backbone, const NeckWeights<Scalar>& weights);

/// Dense pooling map at cfg.pool_stride for RoI grid pooling.
template <typename Scalar>
FeatureMap<Scalar> build_pooling_map(const BackboneOutput<Scalar>& backbone, const FeaturePyramid<Scalar>& pyramid,
                                     const NeckWeights<Scalar>& weights, const NeckConfig& cfg);

}  // namespace pillar_rcnn
