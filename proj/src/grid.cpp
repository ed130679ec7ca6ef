#include "pillar_rcnn/grid.hpp"

#include <algorithm>
#include <cmath>

#include "pillar_rcnn/io.hpp"

namespace pillar_rcnn {

namespace {

constexpr std::string_view kCloudMagic = "PBK1";

int cells_along(double lo, double hi, double size) {
  return static_cast<int>(std::lround((hi - lo) / size));
}

}  // namespace

int GridSpec::nx() const { return cells_along(x_min, x_max, pillar_size); }
int GridSpec::ny() const { return cells_along(y_min, y_max, pillar_size); }

void GridSpec::validate(int max_stride) const {
  if (!(pillar_size > 0)) throw ValidationError("grid.pillar_size must be positive");
  if (!(x_max > x_min)) throw ValidationError("grid.x_max must exceed grid.x_min");
  if (!(y_max > y_min)) throw ValidationError("grid.y_max must exceed grid.y_min");
  if (!(z_max > z_min)) throw ValidationError("grid.z_max must exceed grid.z_min");
  const double fx = (x_max - x_min) / pillar_size, fy = (y_max - y_min) / pillar_size;
  if (std::abs(fx - std::round(fx)) > 1e-6) {
    throw ValidationError("grid.x range is not an integer multiple of grid.pillar_size");
  }
  if (std::abs(fy - std::round(fy)) > 1e-6) {
    throw ValidationError("grid.y range is not an integer multiple of grid.pillar_size");
  }
  if (nx() % max_stride != 0 || ny() % max_stride != 0) {
    throw ValidationError("grid dims " + std::to_string(nx()) + "x" + std::to_string(ny()) +
                          " must be divisible by " + std::to_string(max_stride));
  }
}

std::string PointCloud::serialize() const {
  io::ByteWriter w;
  w.put_bytes(kCloudMagic);
  w.put_u32(static_cast<std::uint32_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (int c = 0; c < 4; ++c) w.put_f32(points(i, c));
  }
  return w.bytes();
}

PointCloud PointCloud::deserialize(const std::string& bytes, const std::string& source) {
  io::ByteReader r(bytes, source);
  if (r.take(4) != kCloudMagic) throw IoError(source + ": bad magic, expected PBK1");
  const std::uint32_t n = r.u32();
  if (static_cast<std::size_t>(n) * 16 != r.remaining()) {
    throw IoError(source + ": point count " + std::to_string(n) + " does not match payload size");
  }
  PointCloud cloud;
  cloud.points.resize(n, 4);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (int c = 0; c < 4; ++c) cloud.points(i, c) = r.f32();
  }
  return cloud;
}

void PointCloud::save(const std::filesystem::path& path) const {
  io::write_file_atomic(path, serialize());
}

PointCloud PointCloud::load(const std::filesystem::path& path) {
  return deserialize(io::read_file(path), path.string());
}

template <typename Scalar>
FeatureMap<Scalar> densify(const SparseVolume<Scalar>& v) {
  auto map = FeatureMap<Scalar>::zeros(v.stride, v.ny, v.nx, v.channels());
  for (std::size_t i = 0; i < v.coords.size(); ++i) {
    map.at(v.coords[i].iy, v.coords[i].ix) = v.features.row(static_cast<Eigen::Index>(i));
  }
  return map;
}

template <typename Scalar>
SparseVolume<Scalar> sparsify(const FeatureMap<Scalar>& map, Scalar threshold) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index r = 0; r < map.data.rows(); ++r) {
    if (map.data.row(r).cwiseAbs().maxCoeff() > threshold) rows.push_back(r);
  }
  // Row order is (iy, ix); volumes are ordered by (ix, iy).
  std::sort(rows.begin(), rows.end(), [&](Eigen::Index a, Eigen::Index b) {
    const Cell ca{static_cast<int>(a % map.width), static_cast<int>(a / map.width)};
    const Cell cb{static_cast<int>(b % map.width), static_cast<int>(b / map.width)};
    return ca < cb;
  });
  auto v = SparseVolume<Scalar>::empty(map.stride, map.width, map.height, map.channels());
  v.features.resize(static_cast<Eigen::Index>(rows.size()), map.channels());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    v.coords.push_back({static_cast<int>(rows[i] % map.width), static_cast<int>(rows[i] / map.width)});
    v.features.row(static_cast<Eigen::Index>(i)) = map.data.row(rows[i]);
  }
  return v;
}

template FeatureMap<float> densify(const SparseVolume<float>&);
template FeatureMap<double> densify(const SparseVolume<double>&);
template SparseVolume<float> sparsify(const FeatureMap<float>&, float);
template SparseVolume<double> sparsify(const FeatureMap<double>&, double);

}  // namespace pillar_rcnn
