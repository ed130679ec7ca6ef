#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pillar_rcnn/backbone.hpp"
#include "pillar_rcnn/eval.hpp"
#include "pillar_rcnn/neck.hpp"
#include "pillar_rcnn/rcnn.hpp"
#include "pillar_rcnn/rpn.hpp"
#include "pillar_rcnn/scene.hpp"

namespace pillar_rcnn {

/// Every tunable of the pipeline. All fields have defaults, so "{}" is a complete config.
struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string weights_path;  // empty: seeded random weights
  GridSpec grid;
  BackboneConfig backbone;
  NeckConfig neck;
  RpnConfig rpn;
  RcnnConfig rcnn;
  EvalConfig eval;
  SceneSpec scene;

  /// Throws ValidationError naming the offending field.
  void validate() const;

  /// Unknown keys and type mismatches are ValidationErrors naming the dotted field path.
  static PipelineConfig from_json(const std::string& text, const std::string& source = "<memory>");
  /// Throws IoError when the file cannot be read.
  static PipelineConfig load(const std::filesystem::path& path);
  std::string to_json() const;
};

/// Every parameter tensor the pipeline reads, in a fixed order.
std::vector<WeightSpec> pipeline_weight_specs(const PipelineConfig& cfg);

/// Loads cfg.weights_path and validates it against the specs, or fills seeded random
/// weights when no path is set.
WeightStore load_or_init_weights(const PipelineConfig& cfg);

struct Model {
  BackboneWeights<float> backbone;
  NeckWeights<float> neck;
  std::vector<RpnHeadWeights> heads;  // one per entry of kRpnStrides
  RcnnWeights<float> rcnn;

  static Model from_store(const WeightStore& store, const PipelineConfig& cfg);
};

struct StageTiming {
  std::string stage;
  double seconds = 0;
};

struct StageDims {
  std::string name;  // C1..C5, P3, P4, pool
  int stride = 0;
  int height = 0, width = 0;
  int channels = 0;
};

struct DetectionRun {
  std::vector<Detection> proposals;   // after rectification and NMS
  std::vector<Detection> detections;  // refined
  std::vector<StageTiming> timings;
  std::vector<StageDims> dims;
};

/// Map extent each stage must have under `cfg`, asserted by run_detection.
std::vector<StageDims> expected_dims(const PipelineConfig& cfg);

/// pillarize -> backbone -> pyramid -> heads -> decode -> rectify -> NMS -> pooling map ->
/// refine. A cloud with no point inside the grid yields no detections. Throws
/// std::logic_error when a stage's map extent differs from expected_dims.
DetectionRun run_detection(const PointCloud& cloud, const Model& model, const PipelineConfig& cfg);

}  // namespace pillar_rcnn
