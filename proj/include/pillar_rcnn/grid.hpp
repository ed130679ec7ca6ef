#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pillar_rcnn/types.hpp"

namespace pillar_rcnn {

/// Detection range and base pillar size. Grid dimensions are derived, never stored.
struct GridSpec {
  double x_min = -75.2, x_max = 75.2;
  double y_min = -75.2, y_max = 75.2;
  double z_min = -2.0, z_max = 4.0;
  double pillar_size = 0.1;

  int nx() const;
  int ny() const;

  /// Throws ValidationError (naming the field) unless the ranges are ordered, the extents
  /// are integer multiples of the pillar size, and both dims are divisible by `max_stride`.
  void validate(int max_stride = 16) const;
};

/// Raw LiDAR points, one row per point: x, y, z, intensity.
struct PointCloud {
  Eigen::Matrix<float, Eigen::Dynamic, 4, Eigen::RowMajor> points;

  Eigen::Index size() const { return points.rows(); }

  /// Binary format: "PBK1", u32 count, count x 4 little-endian f32.
  std::string serialize() const;
  static PointCloud deserialize(const std::string& bytes, const std::string& source = "<memory>");
  void save(const std::filesystem::path& path) const;
  static PointCloud load(const std::filesystem::path& path);
};

struct Cell {
  int ix = 0, iy = 0;
  auto operator<=>(const Cell&) const = default;
};

/// Active pillar sites at a given stride. Coordinates are unique and sorted by (ix, iy);
/// `features` holds one row per coordinate.
template <typename Scalar>
struct SparseVolume {
  int stride = 1;
  int nx = 0, ny = 0;  // grid extent at this stride
  std::vector<Cell> coords;
  RowMatrix<Scalar> features;

  Eigen::Index channels() const { return features.cols(); }
  std::size_t size() const { return coords.size(); }

  static SparseVolume empty(int stride, int nx, int ny, Eigen::Index channels) {
    SparseVolume v;
    v.stride = stride;
    v.nx = nx;
    v.ny = ny;
    v.features.resize(0, channels);
    return v;
  }
};

/// Dense H x W x C map, origin at (x_min, y_min). Row r of `data` is cell (iy, ix) with
/// r = iy * width + ix.
template <typename Scalar>
struct FeatureMap {
  int stride = 1;
  int height = 0, width = 0;
  RowMatrix<Scalar> data;

  Eigen::Index channels() const { return data.cols(); }
  Eigen::Index index(int iy, int ix) const { return static_cast<Eigen::Index>(iy) * width + ix; }
  auto at(int iy, int ix) { return data.row(index(iy, ix)); }
  auto at(int iy, int ix) const { return data.row(index(iy, ix)); }

  static FeatureMap zeros(int stride, int height, int width, Eigen::Index channels) {
    FeatureMap m;
    m.stride = stride;
    m.height = height;
    m.width = width;
    m.data = RowMatrix<Scalar>::Zero(static_cast<Eigen::Index>(height) * width, channels);
    return m;
  }
};

using SparseVolumef = SparseVolume<float>;
using FeatureMapf = FeatureMap<float>;

/// Scatters features into a zero-initialized dense map.
template <typename Scalar>
FeatureMap<Scalar> densify(const SparseVolume<Scalar>& v);

/// Active set = cells with any |feature| > threshold.
template <typename Scalar>
SparseVolume<Scalar> sparsify(const FeatureMap<Scalar>& map, Scalar threshold = 0);

/// Packs (ix, iy) into an integer whose ordering matches Cell ordering.
inline std::int64_t cell_key(int ix, int iy, int ny) {
  return static_cast<std::int64_t>(ix) * ny + iy;
}

}  // namespace pillar_rcnn
