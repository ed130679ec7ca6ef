#include "pillar_rcnn/commands.hpp"

#include <cstdio>
#include <sstream>

#include "pillar_rcnn/io.hpp"
#include "pillar_rcnn/parallel.hpp"
#include "pillar_rcnn/rng.hpp"
#include "pillar_rcnn/verify.hpp"

namespace pillar_rcnn {

namespace fs = std::filesystem;

namespace {

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

std::string scene_stem(const fs::path& p) {
  const std::string name = p.filename().string();
  return name.substr(0, name.find('.'));
}

}  // namespace

std::vector<fs::path> cmd_synth(const PipelineConfig& cfg, int n_scenes, const fs::path& out_dir, int jobs,
                                std::ostream& log) {
  if (n_scenes < 0) throw ValidationError("scene count must be non-negative");
  if (n_scenes == 0) return {};
  ensure_directory(out_dir);
  std::vector<std::string> lines(static_cast<std::size_t>(n_scenes));
  std::vector<fs::path> written(lines.size());
  parallel_for(lines.size(), jobs, [&](std::size_t i) {
    SceneSpec spec = cfg.scene;
    spec.seed = derive_seed(cfg.seed, i);
    const Scene scene = generate_scene(spec, cfg.grid);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04zu", i);
    write_scene(out_dir, name, scene);
    written[i] = out_dir / (std::string(name) + ".pbk");
    std::array<int, kNumClasses> counts{};
    for (const auto& b : scene.boxes) ++counts.at(static_cast<std::size_t>(b.class_id));
    char line[160];
    std::snprintf(line, sizeof(line), "%s: vehicle %d pedestrian %d cyclist %d points %ld\n", name, counts[0],
                  counts[1], counts[2], static_cast<long>(scene.cloud.size()));
    lines[i] = line;
  });
  for (const auto& l : lines) log << l;
  return written;
}

std::vector<fs::path> cmd_detect(const PipelineConfig& cfg, const std::vector<fs::path>& scenes,
                                 const fs::path& out_dir, int jobs, std::ostream& log) {
  const Model model = Model::from_store(load_or_init_weights(cfg), cfg);
  if (scenes.empty()) return {};
  ensure_directory(out_dir);
  std::vector<std::string> reports(scenes.size());
  std::vector<fs::path> written(scenes.size());
  parallel_for(scenes.size(), jobs, [&](std::size_t i) {
    const PointCloud cloud = PointCloud::load(scenes[i]);
    const DetectionRun run = run_detection(cloud, model, cfg);
    written[i] = out_dir / (scene_stem(scenes[i]) + ".det.txt");
    io::write_file_atomic(written[i], format_detections(run.detections));

    std::ostringstream r;
    r << scenes[i].string() << ": " << run.proposals.size() << " proposals, " << run.detections.size()
      << " detections\n  dims:";
    for (const auto& d : run.dims) r << ' ' << d.name << '=' << d.height << 'x' << d.width << 'x' << d.channels;
    r << "\n  timing:";
    char buf[64];
    for (const auto& t : run.timings) {
      std::snprintf(buf, sizeof(buf), " %s=%.3fs", t.stage.c_str(), t.seconds);
      r << buf;
    }
    r << '\n';
    reports[i] = r.str();
  });
  for (const auto& r : reports) log << r;
  return written;
}

MetricsReport cmd_eval(const PipelineConfig& cfg, const std::vector<fs::path>& detections,
                       const std::vector<fs::path>& ground_truth, const fs::path& json_out, std::ostream& log) {
  if (detections.size() != ground_truth.size()) {
    throw ValidationError("det/gt scene mismatch: " + std::to_string(detections.size()) + " detection files vs " +
                          std::to_string(ground_truth.size()) + " gt files");
  }
  std::vector<SceneResult> scenes;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (scene_stem(detections[i]) != scene_stem(ground_truth[i])) {
      throw ValidationError("det/gt scene mismatch: " + detections[i].string() + " vs " + ground_truth[i].string());
    }
    scenes.push_back({parse_detections(io::read_file(detections[i]), detections[i].string()),
                      parse_boxes(io::read_file(ground_truth[i]), ground_truth[i].string())});
  }
  const MetricsReport report = evaluate(scenes, cfg.eval);
  log << report.to_table();
  if (!json_out.empty()) io::write_file_atomic(json_out, report.to_json());
  return report;
}

bool cmd_verify(const PipelineConfig& cfg, int jobs, bool corrupt_kernel, std::ostream& log) {
  VerifyOptions opts;
  opts.seed = cfg.seed;
  opts.jobs = jobs;
  opts.corrupt_kernel = corrupt_kernel;
  opts.grid = cfg.grid;
  opts.rpn = cfg.rpn;
  opts.grid_size = cfg.rcnn.grid_size;
  const auto reports = run_verify_suites(opts);
  log << format_verify_report(reports);
  bool ok = true;
  for (const auto& r : reports) ok = ok && r.passed();
  log << (ok ? "verify: all suites passed\n" : "verify: FAILED\n");
  return ok;
}

}  // namespace pillar_rcnn
