#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pillar_rcnn/commands.hpp"

namespace fs = std::filesystem;
using namespace pillar_rcnn;

namespace {

// Exit codes are a stable contract.
constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON pipeline config (defaults used when omitted)");
  cmd->add_option("--seed", c.seed, "Master seed; overrides the config");
  cmd->add_option("--jobs", c.jobs, "Worker threads for scene-level parallelism")->check(CLI::PositiveNumber);
}

PipelineConfig resolve_config(const Common& c) {
  PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : PipelineConfig::load(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.scene.seed = *c.seed;
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage pillar detector: synthetic scenes, detection, evaluation and self-verification"};
  app.require_subcommand(0, 1);

  Common synth_opts, detect_opts, eval_opts, verify_opts;

  auto* synth = app.add_subcommand("synth", "Generate synthetic scene archives");
  add_common(synth, synth_opts);
  int n_scenes = 1;
  std::string synth_out = "scenes";
  synth->add_option("-n,--scenes", n_scenes, "Number of scenes")->check(CLI::NonNegativeNumber);
  synth->add_option("--out", synth_out, "Output directory");

  auto* detect = app.add_subcommand("detect", "Run the detector on scene point clouds");
  add_common(detect, detect_opts);
  std::vector<std::string> scene_paths;
  std::string detect_out = "detections";
  detect->add_option("scenes", scene_paths, "Point-cloud files (.pbk)");
  detect->add_option("--out", detect_out, "Output directory for .det.txt files");

  auto* eval = app.add_subcommand("eval", "Compute AP/APH for detection files against ground truth");
  add_common(eval, eval_opts);
  std::vector<std::string> det_files, gt_files;
  std::string eval_out;
  eval->add_option("--det", det_files, "Detection files, one per scene")->required();
  eval->add_option("--gt", gt_files, "Ground-truth files, same scene order")->required();
  eval->add_option("--out", eval_out, "Write the JSON metrics report here");

  auto* verify = app.add_subcommand("verify", "Run the oracle verification suites");
  add_common(verify, verify_opts);
  bool corrupt_kernel = false;
  verify->add_flag("--test-corrupt-kernel", corrupt_kernel, "Negative control: perturb one sparse-conv weight")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*synth) {
      cmd_synth(resolve_config(synth_opts), n_scenes, synth_out, synth_opts.jobs, std::cout);
    } else if (*detect) {
      std::vector<fs::path> paths(scene_paths.begin(), scene_paths.end());
      cmd_detect(resolve_config(detect_opts), paths, detect_out, detect_opts.jobs, std::cout);
    } else if (*eval) {
      std::vector<fs::path> dets(det_files.begin(), det_files.end()), gts(gt_files.begin(), gt_files.end());
      const auto report = cmd_eval(resolve_config(eval_opts), dets, gts, eval_out, std::cout);
      if (eval_out.empty()) std::cout << report.to_json();
    } else if (*verify) {
      if (!cmd_verify(resolve_config(verify_opts), verify_opts.jobs, corrupt_kernel, std::cout)) {
        return kExitValidation;
      }
    } else {
      std::cout << app.help();
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitOk;
}
