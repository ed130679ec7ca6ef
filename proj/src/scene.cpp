#include "pillar_rcnn/scene.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "pillar_rcnn/io.hpp"
#include "pillar_rcnn/rng.hpp"

namespace pillar_rcnn {

void SceneSpec::validate(const GridSpec& grid) const {
  for (int c = 0; c < kNumClasses; ++c) {
    if (counts[c] < 0) throw ValidationError(std::string("scene.counts.") + kClassNames[c] + " must be non-negative");
    for (double s : mean_size[c]) {
      if (!(s > 0)) throw ValidationError(std::string("scene.mean_size.") + kClassNames[c] + " must be positive");
    }
  }
  if (!(size_jitter >= 0 && size_jitter < 1)) throw ValidationError("scene.size_jitter must lie in [0, 1)");
  if (min_points < 0 || max_points < min_points) throw ValidationError("scene.points range is invalid");
  if (!(clutter_density >= 0)) throw ValidationError("scene.clutter_density must be non-negative");
  if (!(ground_z - 0.15 >= grid.z_min && ground_z + 3.0 < grid.z_max)) {
    throw ValidationError("scene.ground_z leaves no room inside the grid z range");
  }
  if (!(surface_inset >= 0)) throw ValidationError("scene.surface_inset must be non-negative");
  if (!(placement_margin >= 0) || 2 * placement_margin >= std::min(grid.x_max - grid.x_min, grid.y_max - grid.y_min)) {
    throw ValidationError("scene.placement_margin is too large for the grid");
  }
  if (max_attempts < 1) throw ValidationError("scene.max_attempts must be positive");
}

int count_points_in_box(const PointCloud& cloud, const Box3D& box) {
  int n = 0;
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    if (point_in_box<double>(cloud.points(i, 0), cloud.points(i, 1), cloud.points(i, 2), box)) ++n;
  }
  return n;
}

namespace {

bool corners_inside(const Box3D& b, const GridSpec& grid, double margin) {
  for (const auto& c : project_to_bev(b).corners()) {
    if (c.x() < grid.x_min + margin || c.x() > grid.x_max - margin || c.y() < grid.y_min + margin ||
        c.y() > grid.y_max - margin) {
      return false;
    }
  }
  return true;
}

// A point on the side or top faces, pulled `inset` inside, in world coordinates.
Eigen::Vector3d surface_point(const Box3D& b, double inset, Rng& rng) {
  const double l = std::max(b.length - 2 * inset, 0.0), w = std::max(b.width - 2 * inset, 0.0);
  const double h = std::max(b.height - inset, 0.0);
  const double area_lh = l * h, area_wh = w * h, area_top = l * w;
  const double pick = rng.uniform() * (2 * area_lh + 2 * area_wh + area_top);
  double lx, ly, z;
  if (pick < 2 * area_lh) {
    lx = rng.uniform(-l / 2, l / 2);
    ly = pick < area_lh ? -w / 2 : w / 2;
    z = rng.uniform(0, h);
  } else if (pick < 2 * area_lh + 2 * area_wh) {
    lx = pick < 2 * area_lh + area_wh ? -l / 2 : l / 2;
    ly = rng.uniform(-w / 2, w / 2);
    z = rng.uniform(0, h);
  } else {
    lx = rng.uniform(-l / 2, l / 2);
    ly = rng.uniform(-w / 2, w / 2);
    z = h;
  }
  const Vector2d p = project_to_bev(b).to_world(Vector2d(lx, ly));
  return {p.x(), p.y(), b.bottom() + z};
}

}  // namespace

Scene generate_scene(const SceneSpec& spec, const GridSpec& grid) {
  spec.validate(grid);
  Rng rng(spec.seed);
  Scene scene;
  std::vector<RotatedRect2D> placed;

  for (int cls = 0; cls < kNumClasses; ++cls) {
    for (int k = 0; k < spec.counts[cls]; ++k) {
      bool ok = false;
      for (int attempt = 0; attempt < spec.max_attempts && !ok; ++attempt) {
        const auto& m = spec.mean_size[cls];
        const double l = m[0] * rng.uniform(1 - spec.size_jitter, 1 + spec.size_jitter);
        const double w = m[1] * rng.uniform(1 - spec.size_jitter, 1 + spec.size_jitter);
        const double h = m[2] * rng.uniform(1 - spec.size_jitter, 1 + spec.size_jitter);
        const double cx = rng.uniform(grid.x_min, grid.x_max);
        const double cy = rng.uniform(grid.y_min, grid.y_max);
        const double yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
        const Box3D box(cx, cy, spec.ground_z + h / 2, l, w, h, yaw, cls);
        if (!corners_inside(box, grid, spec.placement_margin)) continue;
        const RotatedRect2D rect = project_to_bev(box);
        const bool overlaps = std::any_of(placed.begin(), placed.end(),
                                          [&](const RotatedRect2D& r) { return intersection_area(rect, r) > 0; });
        if (overlaps) continue;
        placed.push_back(rect);
        scene.boxes.push_back(box);
        ok = true;
      }
      if (!ok) {
        const int n = static_cast<int>(scene.boxes.size());
        throw SceneGenerationError("scene generation: rejection budget exhausted after placing " +
                                       std::to_string(n) + " boxes",
                                   n);
      }
    }
  }

  std::vector<Eigen::Vector4d> pts;
  for (const Box3D& b : scene.boxes) {
    const int n = rng.uniform_int(spec.min_points, spec.max_points);
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3d p = surface_point(b, spec.surface_inset, rng);
      pts.emplace_back(p.x(), p.y(), p.z(), rng.uniform());
    }
  }
  const double area = (grid.x_max - grid.x_min) * (grid.y_max - grid.y_min);
  const auto clutter = static_cast<long>(std::lround(spec.clutter_density * area));
  for (long i = 0; i < clutter; ++i) {
    const double x = rng.uniform(grid.x_min, grid.x_max), y = rng.uniform(grid.y_min, grid.y_max);
    const double z = rng.uniform(spec.ground_z - 0.15, spec.ground_z - 0.05);
    pts.emplace_back(x, y, z, rng.uniform());
  }
  scene.cloud.points.resize(static_cast<Eigen::Index>(pts.size()), 4);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    scene.cloud.points.row(static_cast<Eigen::Index>(i)) = pts[i].cast<float>().transpose();
  }
  for (Box3D& b : scene.boxes) b.num_points = count_points_in_box(scene.cloud, b);
  return scene;
}

std::vector<Detection> jitter_detections(const std::vector<Box3D>& gt, const JitterSpec& spec, const GridSpec& grid) {
  Rng rng(spec.seed);
  std::vector<Detection> out;
  for (const Box3D& g : gt) {
    auto scale = [&] { return std::exp(spec.size_sigma * rng.normal()); };
    const double dx = spec.center_sigma * rng.normal(), dy = spec.center_sigma * rng.normal();
    const double dz = spec.center_sigma * rng.normal();
    const double sl = scale(), sw = scale(), sh = scale();
    const double dyaw = spec.yaw_sigma * rng.normal() + spec.yaw_offset;
    Detection d;
    d.box = Box3D(g.cx + dx, g.cy + dy, g.cz + dz, g.length * sl, g.width * sw, g.height * sh, g.yaw + dyaw,
                  g.class_id);
    const double iou = iou_3d(d.box, g);
    d.score = d.iou_score = d.rectified_score = iou;
    out.push_back(d);
  }
  const SceneSpec sizes;
  for (int i = 0; i < spec.false_positives; ++i) {
    const int cls = rng.uniform_int(0, kNumClasses - 1);
    const auto& m = sizes.mean_size[cls];
    Detection d;
    d.box = Box3D(rng.uniform(grid.x_min, grid.x_max), rng.uniform(grid.y_min, grid.y_max), m[2] / 2, m[0], m[1],
                  m[2], rng.uniform(-std::numbers::pi, std::numbers::pi), cls);
    d.score = d.iou_score = d.rectified_score = 0.5 * rng.uniform();
    out.push_back(d);
  }
  return out;
}

std::string format_boxes(const std::vector<Box3D>& boxes) {
  std::string out;
  char line[512];
  for (const auto& b : boxes) {
    std::snprintf(line, sizeof(line), "%d %.6f %.6f %.6f %.6f %.6f %.6f %.6f %d\n", b.class_id, b.cx, b.cy, b.cz,
                  b.length, b.width, b.height, b.yaw, b.num_points);
    out += line;
  }
  return out;
}

std::vector<Box3D> parse_boxes(const std::string& text, const std::string& source) {
  std::vector<Box3D> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    int cls, npts;
    double cx, cy, cz, l, w, h, yaw;
    if (!(ls >> cls >> cx >> cy >> cz >> l >> w >> h >> yaw >> npts) || cls < 0 || cls >= kNumClasses) {
      throw IoError(source + ":" + std::to_string(lineno) + ": malformed box record");
    }
    try {
      out.emplace_back(cx, cy, cz, l, w, h, yaw, cls, npts);
    } catch (const ValidationError& e) {
      throw IoError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_scene(const std::filesystem::path& dir, const std::string& name, const Scene& scene) {
  scene.cloud.save(dir / (name + ".pbk"));
  io::write_file_atomic(dir / (name + ".gt.txt"), format_boxes(scene.boxes));
}

Scene read_scene(const std::filesystem::path& cloud_path, const std::filesystem::path& gt_path) {
  Scene s;
  s.cloud = PointCloud::load(cloud_path);
  s.boxes = parse_boxes(io::read_file(gt_path), gt_path.string());
  return s;
}

}  // namespace pillar_rcnn
