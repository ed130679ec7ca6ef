#pragma once

#include <filesystem>
#include <ostream>
#include <vector>

#include "pillar_rcnn/eval.hpp"
#include "pillar_rcnn/pipeline.hpp"

namespace pillar_rcnn {

/// Scene i is generated from derive_seed(cfg.seed, i) and written as scene_NNNN.{pbk,gt.txt}.
/// Prints one line of object counts per scene.
std::vector<std::filesystem::path> cmd_synth(const PipelineConfig& cfg, int n_scenes,
                                             const std::filesystem::path& out_dir, int jobs, std::ostream& log);

/// Writes <out_dir>/<stem>.det.txt per scene and prints per-stage timings and map dims.
std::vector<std::filesystem::path> cmd_detect(const PipelineConfig& cfg,
                                              const std::vector<std::filesystem::path>& scenes,
                                              const std::filesystem::path& out_dir, int jobs, std::ostream& log);

/// Pairs detection and gt files by scene stem (text before the first '.'); a count or stem
/// mismatch is a ValidationError. Writes the JSON report when json_out is non-empty.
MetricsReport cmd_eval(const PipelineConfig& cfg, const std::vector<std::filesystem::path>& detections,
                       const std::vector<std::filesystem::path>& ground_truth,
                       const std::filesystem::path& json_out, std::ostream& log);

/// Runs every oracle suite; returns true when all pass.
bool cmd_verify(const PipelineConfig& cfg, int jobs, bool corrupt_kernel, std::ostream& log);

}  // namespace pillar_rcnn
