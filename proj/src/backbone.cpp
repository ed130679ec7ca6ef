#include "pillar_rcnn/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pillar_rcnn {

template <typename Scalar>
std::vector<WeightSpec> BackboneWeights<Scalar>::specs(const BackboneConfig& cfg) {
  const auto& ch = cfg.channels;
  std::vector<WeightSpec> out;
  auto append = [&](std::vector<WeightSpec> more) { out.insert(out.end(), more.begin(), more.end()); };
  append(Linear<Scalar>::specs("pfn.linear", 4, ch[0]));
  append(Conv2d<Scalar>::specs("backbone.stage1.subm", 3, ch[0], ch[0]));
  for (int k = 2; k <= 4; ++k) {
    const std::string stage = "backbone.stage" + std::to_string(k);
    append(Conv2d<Scalar>::specs(stage + ".down", 3, ch[k - 2], ch[k - 1]));
    append(Conv2d<Scalar>::specs(stage + ".subm", 3, ch[k - 1], ch[k - 1]));
  }
  append(Conv2d<Scalar>::specs("backbone.stage5.down", 3, ch[3], ch[4]));
  append(Conv2d<Scalar>::specs("backbone.stage5.conv", 3, ch[4], ch[4]));
  return out;
}

template <typename Scalar>
BackboneWeights<Scalar> BackboneWeights<Scalar>::from_store(const WeightStore& store,
                                                            const BackboneConfig& cfg) {
  const auto& ch = cfg.channels;
  BackboneWeights w;
  w.encoder = Linear<Scalar>::from_store(store, "pfn.linear", 4, ch[0]);
  w.stage1 = Conv2d<Scalar>::from_store(store, "backbone.stage1.subm", 3, ch[0], ch[0]);
  for (int k = 2; k <= 4; ++k) {
    const std::string stage = "backbone.stage" + std::to_string(k);
    w.down[k - 2] = Conv2d<Scalar>::from_store(store, stage + ".down", 3, ch[k - 2], ch[k - 1]);
    w.subm[k - 2] = Conv2d<Scalar>::from_store(store, stage + ".subm", 3, ch[k - 1], ch[k - 1]);
  }
  w.stage5_down = Conv2d<Scalar>::from_store(store, "backbone.stage5.down", 3, ch[3], ch[4]);
  w.stage5_conv = Conv2d<Scalar>::from_store(store, "backbone.stage5.conv", 3, ch[4], ch[4]);
  return w;
}

template <typename Scalar>
SparseVolume<Scalar> pillarize(const PointCloud& cloud, const GridSpec& spec, const Linear<Scalar>& encoder) {
  if (encoder.in_features() != 4) throw ValidationError("pillarize: encoder must take 4 input features");
  const int nx = spec.nx(), ny = spec.ny();
  const double ps = spec.pillar_size;

  struct Entry {
    std::int64_t key;
    Eigen::Index point;
  };
  std::vector<Entry> entries;
  entries.reserve(static_cast<std::size_t>(cloud.size()));
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const double x = cloud.points(i, 0), y = cloud.points(i, 1), z = cloud.points(i, 2);
    if (!(x >= spec.x_min && x < spec.x_max && y >= spec.y_min && y < spec.y_max && z >= spec.z_min &&
          z < spec.z_max)) {
      continue;
    }
    const int ix = static_cast<int>(std::floor((x - spec.x_min) / ps));
    const int iy = static_cast<int>(std::floor((y - spec.y_min) / ps));
    if (ix < 0 || ix >= nx || iy < 0 || iy >= ny) continue;
    entries.push_back({cell_key(ix, iy, ny), i});
  }
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.key != b.key ? a.key < b.key : a.point < b.point; });

  RowMatrix<Scalar> encoded(static_cast<Eigen::Index>(entries.size()), 4);
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const auto i = entries[e].point;
    const int ix = static_cast<int>(entries[e].key / ny), iy = static_cast<int>(entries[e].key % ny);
    const double cx = spec.x_min + (ix + 0.5) * ps, cy = spec.y_min + (iy + 0.5) * ps;
    const auto r = static_cast<Eigen::Index>(e);
    encoded(r, 0) = static_cast<Scalar>(cloud.points(i, 0) - cx);
    encoded(r, 1) = static_cast<Scalar>(cloud.points(i, 1) - cy);
    encoded(r, 2) = static_cast<Scalar>(cloud.points(i, 2));
    encoded(r, 3) = static_cast<Scalar>(cloud.points(i, 3));
  }
  RowMatrix<Scalar> point_features = encoder.forward(encoded);
  relu_inplace(point_features);

  auto volume = SparseVolume<Scalar>::empty(1, nx, ny, encoder.out_features());
  std::vector<std::pair<std::size_t, std::size_t>> groups;  // [begin, end)
  for (std::size_t b = 0; b < entries.size();) {
    std::size_t e = b;
    while (e < entries.size() && entries[e].key == entries[b].key) ++e;
    groups.emplace_back(b, e);
    b = e;
  }
  volume.features.resize(static_cast<Eigen::Index>(groups.size()), encoder.out_features());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto [b, e] = groups[g];
    const auto key = entries[b].key;
    volume.coords.push_back({static_cast<int>(key / ny), static_cast<int>(key % ny)});
    volume.features.row(static_cast<Eigen::Index>(g)) =
        point_features.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)).colwise().maxCoeff();
  }
  return volume;
}

template <typename Scalar>
BackboneOutput<Scalar> backbone_forward(const SparseVolume<Scalar>& pillars,
                                        const BackboneWeights<Scalar>& weights) {
  BackboneOutput<Scalar> out;
  out.sparse[0] = sparse_conv2d(pillars, weights.stage1, 1, true);
  relu_inplace(out.sparse[0]);
  for (int k = 1; k < 4; ++k) {
    SparseVolume<Scalar> down = sparse_conv2d(out.sparse[k - 1], weights.down[k - 1], 2, false);
    relu_inplace(down);
    out.sparse[k] = sparse_conv2d(down, weights.subm[k - 1], 1, true);
    relu_inplace(out.sparse[k]);
  }
  FeatureMap<Scalar> c5 = conv2d(densify(out.sparse[3]), weights.stage5_down, 2);
  relu_inplace(c5);
  out.c5 = conv2d(c5, weights.stage5_conv, 1);
  relu_inplace(out.c5);
  return out;
}

template struct BackboneWeights<float>;
template struct BackboneWeights<double>;
template SparseVolume<float> pillarize(const PointCloud&, const GridSpec&, const Linear<float>&);
template SparseVolume<double> pillarize(const PointCloud&, const GridSpec&, const Linear<double>&);
template BackboneOutput<float> backbone_forward(const SparseVolume<float>&, const BackboneWeights<float>&);
template BackboneOutput<double> backbone_forward(const SparseVolume<double>&, const BackboneWeights<double>&);

}  // namespace pillar_rcnn
