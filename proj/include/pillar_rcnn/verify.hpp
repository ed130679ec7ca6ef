#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pillar_rcnn/grid.hpp"
#include "pillar_rcnn/rpn.hpp"

namespace pillar_rcnn {

struct VerifyBudget {
  int iou_pairs = 1000;
  std::int64_t mc_samples = 1'000'000;
  int sparse_volumes = 100;  // per layer type
  int bilinear_samples = 1000;
  int nms_scenes = 100;
  int nms_boxes = 100;
  int aux_rois = 1000;
  int paint_sets = 50;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  int jobs = 1;
  bool corrupt_kernel = false;  // negative control: perturbs one sparse-conv weight
  VerifyBudget budget;
  GridSpec grid;
  RpnConfig rpn;
  int grid_size = 7;
};

struct Measure {
  std::string name;
  double max_error = 0;
  double tolerance = 0;
  bool ok() const { return max_error <= tolerance; }
};

struct SuiteReport {
  std::string name;
  std::size_t cases = 0;
  std::size_t violations = 0;         // discrete invariant breaches (set or identity mismatches)
  std::vector<Measure> measures;
  std::vector<std::string> failures;  // first few breaches, human readable
  std::vector<std::string> notes;
  double seconds = 0;

  bool passed() const;
};

SuiteReport verify_iou(const VerifyOptions& opts);
SuiteReport verify_sparse_dense(const VerifyOptions& opts);
SuiteReport verify_bilinear_gradient(const VerifyOptions& opts);
SuiteReport verify_nms(const VerifyOptions& opts);
SuiteReport verify_aux_labels(const VerifyOptions& opts);
SuiteReport verify_paint_decode(const VerifyOptions& opts);

std::vector<SuiteReport> run_verify_suites(const VerifyOptions& opts);
std::string format_verify_report(const std::vector<SuiteReport>& reports);

}  // namespace pillar_rcnn
