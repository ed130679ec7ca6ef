// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "pillar_rcnn/commands.hpp"
#include "pillar_rcnn/io.hpp"
#include "pillar_rcnn/oracles.hpp"
#include "pillar_rcnn/parallel.hpp"
#include "pillar_rcnn/rng.hpp"
#include "pillar_rcnn/verify.hpp"

using namespace pillar_rcnn;
namespace fs = std::filesystem;
using std::numbers::pi;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

Outcome from_suite(const SuiteReport& r, double time_limit = 0) {
  Outcome o;
  o.pass = r.passed() && (time_limit <= 0 || r.seconds < time_limit);
  std::ostringstream s;
  s << r.cases << " cases, " << r.violations << " violations";
  for (const auto& m : r.measures) s << ", " << m.name << " " << fmt("%.2e", m.max_error) << "/" << fmt("%.0e", m.tolerance);
  s << ", " << fmt("%.1f", r.seconds) << "s";
  if (time_limit > 0) s << " (limit " << time_limit << "s)";
  for (const auto& f : r.failures) s << "\n      " << f;
  o.detail = s.str();
  return o;
}

VerifyOptions verify_options(std::uint64_t seed, int jobs) {
  VerifyOptions opts;
  opts.seed = seed;
  opts.jobs = jobs;
  return opts;
}

Outcome shape_contract(const PipelineConfig& cfg) {
  SceneSpec spec = cfg.scene;
  spec.seed = derive_seed(cfg.seed, 0);
  const Scene scene = generate_scene(spec, cfg.grid);
  const Model model = Model::from_store(load_or_init_weights(cfg), cfg);
  const DetectionRun run = run_detection(scene.cloud, model, cfg);
  const std::vector<std::pair<std::string, int>> want{{"C3", 376}, {"C4", 188}, {"C5", 94},
                                                      {"P3", 376}, {"P4", 188}, {"pool", 376}};
  Outcome o{true, ""};
  for (const auto& [name, side] : want) {
    auto it = std::find_if(run.dims.begin(), run.dims.end(), [&](const StageDims& d) { return d.name == name; });
    const bool ok = it != run.dims.end() && it->height == side && it->width == side;
    o.pass = o.pass && ok;
    o.detail += name + "=" + (it == run.dims.end() ? "missing" : std::to_string(it->height) + "x" + std::to_string(it->width)) + " ";
  }
  auto pool = std::find_if(run.dims.begin(), run.dims.end(), [](const StageDims& d) { return d.name == "pool"; });
  const double pool_cell = pool == run.dims.end() ? 0 : pool->stride * cfg.grid.pillar_size;
  o.pass = o.pass && std::abs(pool_cell - 0.4) < 1e-12;
  o.detail += "pool cell " + fmt("%.2f", pool_cell) + " m";
  return o;
}

Outcome rectification(std::uint64_t seed) {
  Outcome o{true, ""};
  double worst = 0;
  worst = std::max(worst, std::abs(rectify(0.37, 0.81, 0.0) - 0.37));
  worst = std::max(worst, std::abs(rectify(0.37, 0.81, 1.0) - 0.81));
  worst = std::max(worst, std::abs(rectify(0.64, 0.25, 0.5) - 0.4));
  worst = std::max(worst, std::abs(rectify(0.3, 0.7, 0.5) - std::sqrt(0.3 * 0.7)));
  o.pass = worst <= 1e-12;

  int broken = 0;
  for (int set = 0; set < 100; ++set) {
    Rng rng(derive_seed(derive_seed(seed, fnv1a("rectify")), static_cast<std::uint64_t>(set)));
    const double beta = rng.uniform();
    const int n = rng.uniform_int(2, 60);
    std::vector<double> s(static_cast<std::size_t>(n)), w(s.size());
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = rng.uniform(0.01, 1);
      w[static_cast<std::size_t>(i)] = rng.uniform(0.01, 1);
    }
    auto argmax = [&](double cs, double cw) {
      std::size_t best = 0;
      double best_v = -1;
      for (std::size_t i = 0; i < s.size(); ++i) {
        const double v = rectify(cs * s[i], cw * w[i], beta);
        if (v > best_v) {
          best_v = v;
          best = i;
        }
      }
      return best;
    };
    // Scaling every S (or every W) by one positive factor scales all rectified scores alike.
    const std::size_t base = argmax(1, 1);
    if (argmax(rng.uniform(0.05, 1), 1) != base || argmax(1, rng.uniform(0.05, 1)) != base ||
        argmax(rng.uniform(0.05, 1), rng.uniform(0.05, 1)) != base) {
      ++broken;
    }
  }
  o.pass = o.pass && broken == 0;
  o.detail = "identity/swap/geomean max err " + fmt("%.1e", worst) + ", argmax changed in " + std::to_string(broken) +
             "/100 sets";
  return o;
}

Outcome metric_sanity(const PipelineConfig& cfg) {
  Outcome o{true, ""};
  SceneSpec spec = cfg.scene;
  spec.seed = derive_seed(cfg.seed, fnv1a("metric"));
  spec.min_points = 20;
  std::vector<SceneResult> exact, flipped;
  for (int i = 0; i < 3; ++i) {
    spec.seed = derive_seed(spec.seed, static_cast<std::uint64_t>(i));
    const Scene sc = generate_scene(spec, cfg.grid);
    exact.push_back({jitter_detections(sc.boxes, JitterSpec{}, cfg.grid), sc.boxes});
    JitterSpec flip;
    flip.yaw_offset = pi;
    flipped.push_back({jitter_detections(sc.boxes, flip, cfg.grid), sc.boxes});
  }
  const MetricsReport a = evaluate(exact, cfg.eval), b = evaluate(flipped, cfg.eval);
  double zero_noise_gap = 0, flip_ap_gap = 0, flip_aph = 0;
  for (const auto* lv : {&a.level1, &a.level2}) {
    for (const auto& m : *lv) zero_noise_gap = std::max({zero_noise_gap, std::abs(m.ap - 1), std::abs(m.aph - 1)});
  }
  for (const auto* lv : {&b.level1, &b.level2}) {
    for (const auto& m : *lv) {
      flip_ap_gap = std::max(flip_ap_gap, std::abs(m.ap - 1));
      flip_aph = std::max(flip_aph, m.aph);
    }
  }

  // One FP (score 0.9) ahead of one TP (0.8): PR points (0, 0) and (0.5, 1), so 101 samples of 0.5.
  const Box3D gt(0, 0, 0.85, 4.5, 2.0, 1.7, 0.3, 0, 50);
  Detection tp, fp;
  tp.box = gt;
  tp.score = tp.iou_score = tp.rectified_score = 0.8;
  fp.box = Box3D(30, 30, 0.85, 4.5, 2.0, 1.7, 0.3, 0);
  fp.score = fp.iou_score = fp.rectified_score = 0.9;
  const auto m = compute_ap_aph({{{fp, tp}, {gt}}}, cfg.eval, Difficulty::kLevel1)[0];
  double hand = 0;
  for (int k = 0; k < 101; ++k) hand += 0.5;
  hand /= 101;
  const bool pr_ok = m.ap == hand && m.aph == hand && m.num_tp == 1 && m.num_fp == 1;

  // A pi offset lands one ulp short of pi after yaw normalization, hence the 1e-12 slack.
  o.pass = zero_noise_gap <= 1e-12 && flip_ap_gap <= 1e-12 && flip_aph <= 1e-12 && pr_ok;
  o.detail = "zero-noise |AP-1|,|APH-1| " + fmt("%.1e", zero_noise_gap) + ", flip |AP-1| " + fmt("%.1e", flip_ap_gap) +
             " APH " + fmt("%.1e", flip_aph) + ", 1TP/1FP AP " + fmt("%.6f", m.ap) + " vs " + fmt("%.6f", hand);
  return o;
}

Outcome loss_aggregation(std::uint64_t seed) {
  GridSpec grid;
  grid.x_min = grid.y_min = -25.6;
  grid.x_max = grid.y_max = 25.6;
  SceneSpec spec;
  spec.counts = {4, 3, 3};
  spec.max_points = 0;
  int sum_breaks = 0;
  double worst_term = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::uint64_t s = derive_seed(derive_seed(seed, fnv1a("loss")), static_cast<std::uint64_t>(trial));
    spec.seed = s;
    const Scene sc = generate_scene(spec, grid);
    Rng rng(s);

    // Random predictions: sum identity.
    std::vector<RpnTargets> targets;
    std::vector<HeadOutput> random_preds, perfect_preds;
    for (int stride : kRpnStrides) {
      targets.push_back(encode_targets(sc.boxes, stride, grid));
      HeadOutput p = oracle::paint_head_output(targets.back());
      perfect_preds.push_back(p);
      for (Eigen::Index i = 0; i < p.heatmap.data.size(); ++i) p.heatmap.data.data()[i] = static_cast<float>(rng.uniform());
      for (Eigen::Index i = 0; i < p.regression.data.size(); ++i) {
        p.regression.data.data()[i] += static_cast<float>(rng.uniform(-0.5, 0.5));
      }
      for (Eigen::Index i = 0; i < p.iou.data.size(); ++i) p.iou.data.data()[i] = static_cast<float>(rng.uniform());
      random_preds.push_back(p);
    }

    std::vector<Box3D> proposals;
    for (const auto& g : sc.boxes) {
      for (int k = 0; k < 8; ++k) {
        proposals.emplace_back(g.cx + rng.uniform(-0.3, 0.3) * g.length, g.cy + rng.uniform(-0.3, 0.3) * g.width, g.cz,
                               g.length * rng.uniform(0.8, 1.2), g.width * rng.uniform(0.8, 1.2), g.height,
                               g.yaw + rng.uniform(-0.3, 0.3), g.class_id);
      }
    }
    const auto batch = sample_proposals(proposals, sc.boxes, s);
    std::vector<RcnnPrediction> random_rcnn(batch.size()), perfect_rcnn(batch.size());
    std::vector<std::vector<std::uint8_t>> labels(batch.size());
    std::vector<SampledRoi> binary_batch = batch;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      labels[i] = aux_seg_labels(batch[i].roi, sc.boxes, 7);
      random_rcnn[i].confidence_logit = rng.uniform(-3, 3);
      for (auto& r : random_rcnn[i].residuals) r = rng.uniform(-1, 1);
      for (auto l : labels[i]) {
        random_rcnn[i].seg_logits.push_back(rng.uniform(-3, 3));
        perfect_rcnn[i].seg_logits.push_back(l ? 40.0 : -40.0);
      }
      // Perfect prediction is defined against binary confidence targets.
      binary_batch[i].confidence_target = binary_batch[i].positive ? 1.0 : 0.0;
      perfect_rcnn[i].confidence_logit = binary_batch[i].positive ? 40.0 : -40.0;
      perfect_rcnn[i].residuals = batch[i].residual_target;
    }

    const LossReport rep = make_loss_report(rpn_loss(random_preds, targets, grid), rcnn_loss(batch, random_rcnn, labels));
    double rpn_sum = 0;
    for (double v : rep.rpn) rpn_sum += v;
    if (rep.total != rpn_sum + (rep.rcnn_confidence + rep.rcnn_regression) + rep.seg ||
        rep.rcnn != rep.rcnn_confidence + rep.rcnn_regression) {
      ++sum_breaks;
    }

    // Perfect predictions: the heatmap minimizer puts 1 at the peaks and 0 elsewhere.
    for (auto& p : perfect_preds) p.heatmap.data = (p.heatmap.data.array() == 1.0f).cast<float>();
    const RpnLoss rl = rpn_loss(perfect_preds, targets, grid);
    const RcnnLoss cl = rcnn_loss(binary_batch, perfect_rcnn, labels);
    for (const auto& lv : rl.levels) worst_term = std::max({worst_term, lv.heatmap, lv.regression, lv.iou});
    worst_term = std::max({worst_term, cl.confidence, cl.regression, cl.segmentation});
  }
  Outcome o;
  o.pass = sum_breaks == 0 && worst_term < 1e-3;
  o.detail = "sum mismatches " + std::to_string(sum_breaks) + "/20, worst perfect-prediction term " + fmt("%.2e", worst_term);
  return o;
}

Outcome sampling_protocol(std::uint64_t seed, int jobs) {
  constexpr int kTrials = 10000;
  const RcnnConfig cfg;
  std::vector<int> violations(kTrials, 0);
  std::atomic<int> balanced{0};
  parallel_for(kTrials, jobs, [&](std::size_t t) {
    const std::uint64_t s = derive_seed(derive_seed(seed, fnv1a("sampling")), t);
    Rng rng(s);
    std::vector<Box3D> gt;
    const int n_gt = rng.uniform_int(0, 6);
    for (int i = 0; i < n_gt; ++i) {
      gt.emplace_back(rng.uniform(-30, 30), rng.uniform(-30, 30), 0.85, rng.uniform(3.5, 5), rng.uniform(1.7, 2.2), 1.7,
                      rng.uniform(-pi, pi), rng.uniform_int(0, 2));
    }
    std::vector<Box3D> props;
    const int n_prop = rng.uniform_int(0, 320);
    for (int i = 0; i < n_prop; ++i) {
      if (!gt.empty() && rng.uniform() < 0.5) {
        const Box3D& g = gt[static_cast<std::size_t>(rng.uniform_int(0, n_gt - 1))];
        props.emplace_back(g.cx + rng.uniform(-0.6, 0.6), g.cy + rng.uniform(-0.6, 0.6), g.cz + rng.uniform(-0.2, 0.2),
                           g.length * rng.uniform(0.85, 1.15), g.width * rng.uniform(0.85, 1.15), g.height,
                           g.yaw + rng.uniform(-0.3, 0.3), rng.uniform() < 0.9 ? g.class_id : rng.uniform_int(0, 2));
      } else {
        props.emplace_back(rng.uniform(-30, 30), rng.uniform(-30, 30), 0.85, rng.uniform(0.8, 5), rng.uniform(0.8, 2.2),
                           1.7, rng.uniform(-pi, pi), rng.uniform_int(0, 2));
      }
    }
    int pos_pool = 0;
    for (const auto& p : props) {
      double best = 0;
      for (const auto& g : gt) {
        if (g.class_id == p.class_id) best = std::max(best, iou_3d(p, g));
      }
      pos_pool += best >= 0.55;
    }
    const int neg_pool = n_prop - pos_pool;
    const auto batch = sample_proposals(props, gt, s, cfg);
    int bad = 0, pos = 0;
    if (batch.size() > 128) ++bad;
    if (batch.size() != static_cast<std::size_t>(std::min(128, n_prop))) ++bad;
    for (const auto& b : batch) {
      double best = 0;
      for (const auto& g : gt) {
        if (g.class_id == b.roi.class_id) best = std::max(best, iou_3d(b.roi, g));
      }
      if (b.positive != (best >= 0.55)) ++bad;
      pos += b.positive;
    }
    if (pos_pool >= 64 && neg_pool >= 64) {
      ++balanced;
      if (pos != 64) ++bad;
    }
    violations[t] = bad;
  });
  int total = 0;
  for (int v : violations) total += v;
  Outcome o;
  o.pass = total == 0;
  o.detail = std::to_string(kTrials) + " trials (" + std::to_string(balanced.load()) + " with both pools >= 64), " +
             std::to_string(total) + " violations";
  return o;
}

Outcome determinism(const PipelineConfig& cfg, int jobs, double verify_seconds, bool verify_ok) {
  const fs::path root = fs::temp_directory_path() / "pillar_rcnn_acceptance";
  fs::remove_all(root);
  std::ostringstream sink;
  const auto scenes = cmd_synth(cfg, 10, root / "scenes", jobs, sink);
  const auto t0 = std::chrono::steady_clock::now();
  const auto a = cmd_detect(cfg, scenes, root / "run_a", jobs, sink);
  const auto b = cmd_detect(cfg, scenes, root / "run_b", jobs, sink);
  const double detect_seconds = elapsed(t0);
  int differing = 0;
  std::size_t lines = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::string x = io::read_file(a[i]), y = io::read_file(b[i]);
    differing += x != y;
    lines += static_cast<std::size_t>(std::count(x.begin(), x.end(), '\n'));
  }
  fs::remove_all(root);
  Outcome o;
  o.pass = a.size() == 10 && differing == 0 && verify_ok && verify_seconds < 300;
  o.detail = std::to_string(a.size()) + " scenes, " + std::to_string(differing) + " differing files, " +
             std::to_string(lines) + " detections, detect x2 " + fmt("%.1f", detect_seconds) + "s; full verify " +
             (verify_ok ? "passed" : "FAILED") + " in " + fmt("%.1f", verify_seconds) + "s (limit 300s)";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::uint64_t seed = 0;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--seed", seed, "Master seed");
  app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  PipelineConfig cfg;
  cfg.seed = seed;
  cfg.scene.seed = seed;

  const auto verify_start = std::chrono::steady_clock::now();
  const auto reports = run_verify_suites(verify_options(seed, jobs));
  const double verify_seconds = elapsed(verify_start);
  bool verify_ok = true;
  for (const auto& r : reports) verify_ok = verify_ok && r.passed();
  auto suite = [&](const std::string& name) -> const SuiteReport& {
    return *std::find_if(reports.begin(), reports.end(), [&](const SuiteReport& r) { return r.name == name; });
  };

  struct Criterion {
    const char* title;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria{
      {"geometry oracle", [&] { return from_suite(suite("geometry_iou"), 60); }},
      {"sparse/dense equivalence", [&] { return from_suite(suite("sparse_dense")); }},
      {"bilinear gradient check", [&] { return from_suite(suite("bilinear_gradient")); }},
      {"nms oracle identity", [&] { return from_suite(suite("nms_oracle")); }},
      {"shape contract", [&] { return shape_contract(cfg); }},
      {"paint-decode round trip", [&] { return from_suite(suite("paint_decode")); }},
      {"score rectification", [&] { return rectification(seed); }},
      {"metric sanity", [&] { return metric_sanity(cfg); }},
      {"loss aggregation", [&] { return loss_aggregation(seed); }},
      {"proposal sampling protocol", [&] { return sampling_protocol(seed, jobs); }},
      {"end-to-end determinism", [&] { return determinism(cfg, jobs, verify_seconds, verify_ok); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %2zu %-28s %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].title, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%s: %zu/%zu criteria passed\n", failed == 0 ? "ACCEPTED" : "REJECTED", criteria.size() - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
