#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "pillar_rcnn/grid.hpp"
#include "pillar_rcnn/rpn.hpp"

namespace pillar_rcnn {

struct SceneSpec {
  std::uint64_t seed = 0;
  std::array<int, kNumClasses> counts = {8, 6, 4};
  // Mean (length, width, height) per class; each dimension is scaled by U(1 - jitter, 1 + jitter).
  std::array<std::array<double, 3>, kNumClasses> mean_size = {{{4.6, 2.1, 1.7}, {0.9, 0.9, 1.7}, {1.8, 0.8, 1.7}}};
  double size_jitter = 0.2;
  int min_points = 0;        // surface points per object, inclusive range
  int max_points = 150;
  double clutter_density = 0.05;  // ground points per square meter
  double ground_z = 0.0;
  double surface_inset = 0.02;    // surface samples are pulled this far inside the box
  double placement_margin = 2.0;  // boxes stay this far inside the grid range
  int max_attempts = 2000;        // per box

  void validate(const GridSpec& grid) const;
};

struct Scene {
  PointCloud cloud;
  std::vector<Box3D> boxes;
};

class SceneGenerationError : public std::runtime_error {
 public:
  SceneGenerationError(const std::string& what, int placed) : std::runtime_error(what), placed_(placed) {}
  int placed() const { return placed_; }

 private:
  int placed_;
};

/// Pairwise BEV-disjoint boxes resting on the ground, surface points on the sides and top
/// of each, plus uniform ground clutter. Box num_points is recounted from the stored f32
/// points. Throws SceneGenerationError when the rejection budget runs out.
Scene generate_scene(const SceneSpec& spec, const GridSpec& grid);

/// Number of cloud points inside the box (inclusive BEV rect and z bounds).
int count_points_in_box(const PointCloud& cloud, const Box3D& box);

struct JitterSpec {
  double center_sigma = 0;  // meters
  double size_sigma = 0;    // relative
  double yaw_sigma = 0;     // radians
  double yaw_offset = 0;    // added to every heading
  int false_positives = 0;
  std::uint64_t seed = 0;
};

/// Pseudo-detector: one perturbed copy per gt box scored by its IoU with the source box
/// (S = W_IoU = S_hat = IoU), plus false positives scored in [0, 0.5).
std::vector<Detection> jitter_detections(const std::vector<Box3D>& gt, const JitterSpec& spec, const GridSpec& grid);

/// One box per line: class cx cy cz l w h yaw num_points, 6 decimals.
std::string format_boxes(const std::vector<Box3D>& boxes);
std::vector<Box3D> parse_boxes(const std::string& text, const std::string& source = "<memory>");

/// Writes <dir>/<name>.pbk and <dir>/<name>.gt.txt.
void write_scene(const std::filesystem::path& dir, const std::string& name, const Scene& scene);
Scene read_scene(const std::filesystem::path& cloud_path, const std::filesystem::path& gt_path);

}  // namespace pillar_rcnn
