#include "pillar_rcnn/neck.hpp"

#include <bit>

namespace pillar_rcnn {

namespace {

int level_of_stride(int stride) { return std::countr_zero(static_cast<unsigned>(stride)) + 1; }

int top_down_channels(const NeckConfig& cfg, const BackboneConfig& backbone) {
  return cfg.pool_stride == 8 ? backbone.channels[4] : cfg.channels;
}

}  // namespace

void NeckConfig::validate() const {
  if (channels <= 0) throw ValidationError("neck.channels must be positive");
  if (pool_channels <= 0) throw ValidationError("neck.pool_channels must be positive");
  if (pool_stride != 2 && pool_stride != 4 && pool_stride != 8) {
    throw ValidationError("neck.pool_stride must be one of 2, 4, 8");
  }
  if (!std::has_single_bit(static_cast<unsigned>(pool_source_stride)) || pool_source_stride > pool_stride) {
    throw ValidationError("neck.pool_source_stride must be a power of two no larger than neck.pool_stride");
  }
}

template <typename Scalar>
std::vector<WeightSpec> NeckWeights<Scalar>::specs(const NeckConfig& cfg, const BackboneConfig& backbone) {
  const auto& ch = backbone.channels;
  const int n = cfg.channels, p = cfg.pool_channels;
  const int cb = ch[level_of_stride(cfg.pool_source_stride) - 1];
  std::vector<WeightSpec> out;
  auto append = [&](std::vector<WeightSpec> more) { out.insert(out.end(), more.begin(), more.end()); };
  append(Conv2d<Scalar>::specs("neck.p4.deconv", 2, ch[4], n));
  append(Conv2d<Scalar>::specs("neck.p4.lateral", 3, n + ch[3], n));
  append(Conv2d<Scalar>::specs("neck.p3.deconv", 2, n, n));
  append(Conv2d<Scalar>::specs("neck.p3.lateral", 3, n + ch[2], n));
  append(Conv2d<Scalar>::specs("neck.pool.deconv", 2, top_down_channels(cfg, backbone), p));
  for (int s = cfg.pool_source_stride, i = 0; s < cfg.pool_stride; s *= 2, ++i) {
    append(Conv2d<Scalar>::specs("neck.pool.down" + std::to_string(i), 3, cb, cb));
  }
  append(Conv2d<Scalar>::specs("neck.pool.lateral", 3, p + cb, p));
  return out;
}

template <typename Scalar>
NeckWeights<Scalar> NeckWeights<Scalar>::from_store(const WeightStore& store, const NeckConfig& cfg,
                                                    const BackboneConfig& backbone) {
  cfg.validate();
  const auto& ch = backbone.channels;
  const int n = cfg.channels, p = cfg.pool_channels;
  const int cb = ch[level_of_stride(cfg.pool_source_stride) - 1];
  NeckWeights w;
  w.p4_deconv = Conv2d<Scalar>::from_store(store, "neck.p4.deconv", 2, ch[4], n);
  w.p4_lateral = Conv2d<Scalar>::from_store(store, "neck.p4.lateral", 3, n + ch[3], n);
  w.p3_deconv = Conv2d<Scalar>::from_store(store, "neck.p3.deconv", 2, n, n);
  w.p3_lateral = Conv2d<Scalar>::from_store(store, "neck.p3.lateral", 3, n + ch[2], n);
  w.pool_deconv = Conv2d<Scalar>::from_store(store, "neck.pool.deconv", 2, top_down_channels(cfg, backbone), p);
  for (int s = cfg.pool_source_stride, i = 0; s < cfg.pool_stride; s *= 2, ++i) {
    w.pool_down.push_back(Conv2d<Scalar>::from_store(store, "neck.pool.down" + std::to_string(i), 3, cb, cb));
  }
  w.pool_lateral = Conv2d<Scalar>::from_store(store, "neck.pool.lateral", 3, p + cb, p);
  return w;
}

template <typename Scalar>
FeatureMap<Scalar> lateral_merge(const FeatureMap<Scalar>& top_down, const SparseVolume<Scalar>& bottom_up,
                                 const Conv2d<Scalar>& deconv, const Conv2d<Scalar>& lateral) {
  if (top_down.stride != 2 * bottom_up.stride) {
    throw ValidationError("lateral_merge: top-down stride " + std::to_string(top_down.stride) +
                          " is not twice the bottom-up stride " + std::to_string(bottom_up.stride));
  }
  FeatureMap<Scalar> up = deconv2x2(top_down, deconv);
  if (up.height != bottom_up.ny || up.width != bottom_up.nx) {
    throw ValidationError("lateral_merge: upsampled map " + std::to_string(up.height) + "x" +
                          std::to_string(up.width) + " does not match bottom-up grid " +
                          std::to_string(bottom_up.ny) + "x" + std::to_string(bottom_up.nx));
  }
  FeatureMap<Scalar> merged = conv2d(concat_channels(up, densify(bottom_up)), lateral, 1);
  relu_inplace(merged);
  return merged;
}

template <typename Scalar>
FeaturePyramid<Scalar> build_pyramid(const BackboneOutput<Scalar>& backbone, const NeckWeights<Scalar>& weights) {
  FeaturePyramid<Scalar> pyramid;
  pyramid.levels[8] = lateral_merge(backbone.c5, backbone.level(4), weights.p4_deconv, weights.p4_lateral);
  pyramid.levels[4] = lateral_merge(pyramid.levels[8], backbone.level(3), weights.p3_deconv, weights.p3_lateral);
  return pyramid;
}

template <typename Scalar>
FeatureMap<Scalar> build_pooling_map(const BackboneOutput<Scalar>& backbone, const FeaturePyramid<Scalar>& pyramid,
                                     const NeckWeights<Scalar>& weights, const NeckConfig& cfg) {
  cfg.validate();
  const FeatureMap<Scalar>& top = cfg.pool_stride == 8 ? backbone.c5 : pyramid.levels.at(2 * cfg.pool_stride);

  SparseVolume<Scalar> bottom_up = backbone.level(level_of_stride(cfg.pool_source_stride));
  for (const auto& down : weights.pool_down) {
    bottom_up = sparse_conv2d(bottom_up, down, 2, false);
    relu_inplace(bottom_up);
  }
  if (!cfg.pool_bottom_up) {
    bottom_up = SparseVolume<Scalar>::empty(bottom_up.stride, bottom_up.nx, bottom_up.ny, bottom_up.channels());
  }
  return lateral_merge(top, bottom_up, weights.pool_deconv, weights.pool_lateral);
}

template struct NeckWeights<float>;
template struct NeckWeights<double>;

#define PILLAR_RCNN_INSTANTIATE_NECK(S)                                                                   \
  template FeatureMap<S> lateral_merge(const FeatureMap<S>&, const SparseVolume<S>&, const Conv2d<S>&,   \
                                       const Conv2d<S>&);                                                \
  template FeaturePyramid<S> build_pyramid(const BackboneOutput<S>&, const NeckWeights<S>&);            \
  template FeatureMap<S> build_pooling_map(const BackboneOutput<S>&, const FeaturePyramid<S>&,           \
                                           const NeckWeights<S>&, const NeckConfig&);

PILLAR_RCNN_INSTANTIATE_NECK(float)
PILLAR_RCNN_INSTANTIATE_NECK(double)

#undef PILLAR_RCNN_INSTANTIATE_NECK

}  // namespace pillar_rcnn
