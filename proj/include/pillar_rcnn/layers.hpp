#pragma once

#include <string>
#include <vector>

#include "pillar_rcnn/grid.hpp"
#include "pillar_rcnn/weights.hpp"

namespace pillar_rcnn {

/// Fully connected layer, y = x * weight + bias on row vectors.
template <typename Scalar>
struct Linear {
  ColMatrix<Scalar> weight;  // in x out
  RowVector<Scalar> bias;    // out

  Eigen::Index in_features() const { return weight.rows(); }
  Eigen::Index out_features() const { return weight.cols(); }

  /// Reads "<prefix>.w" [out, in] and "<prefix>.b" [out].
  static Linear from_store(const WeightStore& store, const std::string& prefix, int in, int out);
  static std::vector<WeightSpec> specs(const std::string& prefix, int in, int out);

  RowMatrix<Scalar> forward(const Eigen::Ref<const RowMatrix<Scalar>>& x) const;
};

/// Square convolution kernel stored as one (cin x cout) matrix per tap, taps ordered
/// row-major over (ky, kx). Tensor layout is [k, k, cin, cout].
template <typename Scalar>
struct Conv2d {
  int kernel = 3;
  std::vector<ColMatrix<Scalar>> taps;
  RowVector<Scalar> bias;

  Eigen::Index in_channels() const { return taps.empty() ? 0 : taps.front().rows(); }
  Eigen::Index out_channels() const { return bias.size(); }
  const ColMatrix<Scalar>& tap(int ky, int kx) const { return taps[ky * kernel + kx]; }

  static Conv2d from_store(const WeightStore& store, const std::string& prefix, int kernel,
                           int cin, int cout);
  static std::vector<WeightSpec> specs(const std::string& prefix, int kernel, int cin, int cout);
  static Conv2d zeros(int kernel, int cin, int cout);
};

template <typename Scalar>
void relu_inplace(RowMatrix<Scalar>& x) {
  x = x.cwiseMax(Scalar(0));
}

/// Zero-padded dense convolution with odd kernel (pad = kernel / 2).
/// Output dims are floor((n - 1) / stride) + 1.
template <typename Scalar>
FeatureMap<Scalar> conv2d(const FeatureMap<Scalar>& in, const Conv2d<Scalar>& conv, int stride);

/// 2x2 stride-2 transposed convolution: exact 2x upsample. conv.kernel must be 2.
template <typename Scalar>
FeatureMap<Scalar> deconv2x2(const FeatureMap<Scalar>& in, const Conv2d<Scalar>& conv);

/// [a | b] along channels. Spatial dims must agree.
template <typename Scalar>
FeatureMap<Scalar> concat_channels(const FeatureMap<Scalar>& a, const FeatureMap<Scalar>& b);

/// 3x3 sparse convolution (pad 1).
///   submanifold: output sites == input sites; stride must be 1.
///   regular: output sites = every site reached by at least one input site.
/// Bias is added at active output sites only. Throws std::invalid_argument for
/// submanifold with stride != 1 and ValidationError for a channel mismatch.
template <typename Scalar>
SparseVolume<Scalar> sparse_conv2d(const SparseVolume<Scalar>& in, const Conv2d<Scalar>& conv,
                                   int stride, bool submanifold);

template <typename Scalar>
void relu_inplace(SparseVolume<Scalar>& v) {
  relu_inplace(v.features);
}

template <typename Scalar>
void relu_inplace(FeatureMap<Scalar>& m) {
  relu_inplace(m.data);
}

}  // namespace pillar_rcnn
