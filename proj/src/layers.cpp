#include "pillar_rcnn/layers.hpp"

#include <algorithm>
#include <cstdint>
#include <unordered_map>

namespace pillar_rcnn {

namespace {

using u32 = std::uint32_t;

template <typename Scalar>
using StridedRows = Eigen::Map<const RowMatrix<Scalar>, Eigen::Unaligned, Eigen::OuterStride<>>;

template <typename Scalar>
using MutableStridedRows = Eigen::Map<RowMatrix<Scalar>, Eigen::Unaligned, Eigen::OuterStride<>>;

// Output index range [lo, hi] of positions o with 0 <= stride * o + offset < n and o < n_out.
std::pair<int, int> valid_range(int n, int n_out, int stride, int offset) {
  int lo = 0;
  while (lo < n_out && stride * lo + offset < 0) ++lo;
  const int num = n - 1 - offset;
  if (num < 0) return {1, 0};
  const int hi = std::min(n_out - 1, num / stride);
  return {lo, hi};
}

}  // namespace

template <typename Scalar>
Linear<Scalar> Linear<Scalar>::from_store(const WeightStore& store, const std::string& prefix,
                                          int in, int out) {
  const Tensor& w = store.require(prefix + ".w", {u32(out), u32(in)});
  const Tensor& b = store.require(prefix + ".b", {u32(out)});
  Linear layer;
  layer.weight = Eigen::Map<const RowMatrix<float>>(w.values.data(), out, in).transpose().template cast<Scalar>();
  layer.bias = Eigen::Map<const RowVector<float>>(b.values.data(), out).template cast<Scalar>();
  return layer;
}

template <typename Scalar>
std::vector<WeightSpec> Linear<Scalar>::specs(const std::string& prefix, int in, int out) {
  return {{prefix + ".w", {u32(out), u32(in)}, u32(in)}, {prefix + ".b", {u32(out)}, u32(in)}};
}

template <typename Scalar>
RowMatrix<Scalar> Linear<Scalar>::forward(const Eigen::Ref<const RowMatrix<Scalar>>& x) const {
  RowMatrix<Scalar> y = x * weight;
  y.rowwise() += bias;
  return y;
}

template <typename Scalar>
Conv2d<Scalar> Conv2d<Scalar>::from_store(const WeightStore& store, const std::string& prefix,
                                          int kernel, int cin, int cout) {
  const Tensor& w = store.require(prefix + ".w", {u32(kernel), u32(kernel), u32(cin), u32(cout)});
  const Tensor& b = store.require(prefix + ".b", {u32(cout)});
  Conv2d conv;
  conv.kernel = kernel;
  const std::size_t tap_size = static_cast<std::size_t>(cin) * cout;
  for (int t = 0; t < kernel * kernel; ++t) {
    conv.taps.push_back(
        Eigen::Map<const RowMatrix<float>>(w.values.data() + t * tap_size, cin, cout).template cast<Scalar>());
  }
  conv.bias = Eigen::Map<const RowVector<float>>(b.values.data(), cout).template cast<Scalar>();
  return conv;
}

template <typename Scalar>
std::vector<WeightSpec> Conv2d<Scalar>::specs(const std::string& prefix, int kernel, int cin,
                                              int cout) {
  const u32 fan_in = u32(kernel * kernel * cin);
  return {{prefix + ".w", {u32(kernel), u32(kernel), u32(cin), u32(cout)}, fan_in},
          {prefix + ".b", {u32(cout)}, fan_in}};
}

template <typename Scalar>
Conv2d<Scalar> Conv2d<Scalar>::zeros(int kernel, int cin, int cout) {
  Conv2d conv;
  conv.kernel = kernel;
  conv.taps.assign(static_cast<std::size_t>(kernel * kernel), ColMatrix<Scalar>::Zero(cin, cout));
  conv.bias = RowVector<Scalar>::Zero(cout);
  return conv;
}

template <typename Scalar>
FeatureMap<Scalar> conv2d(const FeatureMap<Scalar>& in, const Conv2d<Scalar>& conv, int stride) {
  if (conv.kernel % 2 != 1) throw std::invalid_argument("conv2d: kernel size must be odd");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
  if (in.channels() != conv.in_channels()) {
    throw ValidationError("conv2d: input has " + std::to_string(in.channels()) + " channels, kernel expects " +
                          std::to_string(conv.in_channels()));
  }
  const int pad = conv.kernel / 2;
  const int h = in.height, w = in.width;
  const int ho = (h - 1) / stride + 1, wo = (w - 1) / stride + 1;
  const Eigen::Index cin = in.channels();
  FeatureMap<Scalar> out;
  out.stride = in.stride * stride;
  out.height = ho;
  out.width = wo;
  if (conv.kernel == 1 && stride == 1) {
    out.data.noalias() = in.data * conv.taps.front();
    out.data.rowwise() += conv.bias;
    return out;
  }
  out.data.resize(static_cast<Eigen::Index>(ho) * wo, conv.out_channels());
  out.data.rowwise() = conv.bias;

  for (int oy = 0; oy < ho; ++oy) {
    for (int ky = 0; ky < conv.kernel; ++ky) {
      const int iy = stride * oy + ky - pad;
      if (iy < 0 || iy >= h) continue;
      for (int kx = 0; kx < conv.kernel; ++kx) {
        const auto [lo, hi] = valid_range(w, wo, stride, kx - pad);
        if (hi < lo) continue;
        const int n = hi - lo + 1;
        const int ix0 = stride * lo + kx - pad;
        StridedRows<Scalar> src(in.data.data() + (static_cast<Eigen::Index>(iy) * w + ix0) * cin, n, cin,
                                Eigen::OuterStride<>(stride * cin));
        out.data.middleRows(static_cast<Eigen::Index>(oy) * wo + lo, n).noalias() += src * conv.tap(ky, kx);
      }
    }
  }
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> deconv2x2(const FeatureMap<Scalar>& in, const Conv2d<Scalar>& conv) {
  if (conv.kernel != 2) throw std::invalid_argument("deconv2x2: kernel size must be 2");
  if (in.channels() != conv.in_channels()) {
    throw ValidationError("deconv2x2: input has " + std::to_string(in.channels()) +
                          " channels, kernel expects " + std::to_string(conv.in_channels()));
  }
  if (in.stride % 2 != 0) throw ValidationError("deconv2x2: input stride must be even");
  const int w = in.width, wo = 2 * in.width;
  const Eigen::Index cout = conv.out_channels();
  FeatureMap<Scalar> out;
  out.stride = in.stride / 2;
  out.height = 2 * in.height;
  out.width = wo;
  out.data.resize(static_cast<Eigen::Index>(out.height) * wo, cout);
  for (int y = 0; y < in.height; ++y) {
    const auto src = in.data.middleRows(static_cast<Eigen::Index>(y) * w, w);
    for (int ky = 0; ky < 2; ++ky) {
      for (int kx = 0; kx < 2; ++kx) {
        MutableStridedRows<Scalar> dst(out.data.data() + (static_cast<Eigen::Index>(2 * y + ky) * wo + kx) * cout, w,
                                       cout, Eigen::OuterStride<>(2 * cout));
        dst.noalias() = src * conv.tap(ky, kx);
        dst.rowwise() += conv.bias;
      }
    }
  }
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> concat_channels(const FeatureMap<Scalar>& a, const FeatureMap<Scalar>& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ValidationError("concat_channels: spatial mismatch " + std::to_string(a.height) + "x" +
                          std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                          std::to_string(b.width));
  }
  FeatureMap<Scalar> out;
  out.stride = a.stride;
  out.height = a.height;
  out.width = a.width;
  out.data.resize(a.data.rows(), a.channels() + b.channels());
  out.data.leftCols(a.channels()) = a.data;
  out.data.rightCols(b.channels()) = b.data;
  return out;
}

template <typename Scalar>
SparseVolume<Scalar> sparse_conv2d(const SparseVolume<Scalar>& in, const Conv2d<Scalar>& conv,
                                   int stride, bool submanifold) {
  if (conv.kernel != 3) throw std::invalid_argument("sparse_conv2d: kernel size must be 3");
  if (submanifold && stride != 1) {
    throw std::invalid_argument("sparse_conv2d: submanifold convolution requires stride 1");
  }
  if (stride != 1 && stride != 2) throw std::invalid_argument("sparse_conv2d: stride must be 1 or 2");
  if (in.channels() != conv.in_channels()) {
    throw ValidationError("sparse_conv2d: input has " + std::to_string(in.channels()) +
                          " channels, kernel expects " + std::to_string(conv.in_channels()));
  }
  constexpr int kPad = 1;
  const int nx_out = (in.nx - 1) / stride + 1, ny_out = (in.ny - 1) / stride + 1;

  // Output site reached from input coordinate c through tap k, or -1.
  auto project = [&](int c, int k, int n_out) {
    const int num = c + kPad - k;
    if (num < 0 || num % stride != 0) return -1;
    const int o = num / stride;
    return o < n_out ? o : -1;
  };

  auto out = SparseVolume<Scalar>::empty(in.stride * stride, nx_out, ny_out, conv.out_channels());
  if (submanifold) {
    out.coords = in.coords;
  } else {
    std::vector<std::int64_t> keys;
    keys.reserve(in.coords.size() * 4);
    for (const Cell& c : in.coords) {
      for (int ky = 0; ky < 3; ++ky) {
        const int oy = project(c.iy, ky, ny_out);
        if (oy < 0) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ox = project(c.ix, kx, nx_out);
          if (ox >= 0) keys.push_back(cell_key(ox, oy, ny_out));
        }
      }
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    out.coords.reserve(keys.size());
    for (auto k : keys) out.coords.push_back({static_cast<int>(k / ny_out), static_cast<int>(k % ny_out)});
  }

  std::unordered_map<std::int64_t, int> out_index;
  out_index.reserve(out.coords.size() * 2);
  for (std::size_t i = 0; i < out.coords.size(); ++i) {
    out_index.emplace(cell_key(out.coords[i].ix, out.coords[i].iy, ny_out), static_cast<int>(i));
  }

  // Rulebook: per tap, (input row, output row) pairs.
  std::vector<std::vector<std::pair<int, int>>> rules(9);
  for (std::size_t i = 0; i < in.coords.size(); ++i) {
    const Cell& c = in.coords[i];
    for (int ky = 0; ky < 3; ++ky) {
      const int oy = project(c.iy, ky, ny_out);
      if (oy < 0) continue;
      for (int kx = 0; kx < 3; ++kx) {
        const int ox = project(c.ix, kx, nx_out);
        if (ox < 0) continue;
        auto it = out_index.find(cell_key(ox, oy, ny_out));
        if (it != out_index.end()) rules[ky * 3 + kx].emplace_back(static_cast<int>(i), it->second);
      }
    }
  }

  out.features.resize(static_cast<Eigen::Index>(out.coords.size()), conv.out_channels());
  out.features.rowwise() = conv.bias;
  RowMatrix<Scalar> gathered, products;
  for (int t = 0; t < 9; ++t) {
    const auto& pairs = rules[t];
    if (pairs.empty()) continue;
    gathered.resize(static_cast<Eigen::Index>(pairs.size()), in.channels());
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      gathered.row(static_cast<Eigen::Index>(p)) = in.features.row(pairs[p].first);
    }
    products.noalias() = gathered * conv.taps[t];
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      out.features.row(pairs[p].second) += products.row(static_cast<Eigen::Index>(p));
    }
  }
  return out;
}

template struct Linear<float>;
template struct Linear<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;

#define PILLAR_RCNN_INSTANTIATE_LAYERS(S)                                                      \
  template FeatureMap<S> conv2d(const FeatureMap<S>&, const Conv2d<S>&, int);                \
  template FeatureMap<S> deconv2x2(const FeatureMap<S>&, const Conv2d<S>&);                  \
  template FeatureMap<S> concat_channels(const FeatureMap<S>&, const FeatureMap<S>&);         \
  template SparseVolume<S> sparse_conv2d(const SparseVolume<S>&, const Conv2d<S>&, int, bool);

PILLAR_RCNN_INSTANTIATE_LAYERS(float)
PILLAR_RCNN_INSTANTIATE_LAYERS(double)

#undef PILLAR_RCNN_INSTANTIATE_LAYERS

}  // namespace pillar_rcnn
