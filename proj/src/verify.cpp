#include "pillar_rcnn/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "pillar_rcnn/oracles.hpp"
#include "pillar_rcnn/parallel.hpp"
#include "pillar_rcnn/rcnn.hpp"
#include "pillar_rcnn/rng.hpp"
#include "pillar_rcnn/scene.hpp"

namespace pillar_rcnn {

bool SuiteReport::passed() const {
  if (violations != 0) return false;
  for (const auto& m : measures) {
    if (!m.ok()) return false;
  }
  return true;
}

namespace {

// Stream identifiers keep suites independent of each other's draw counts.
enum Stream : std::uint64_t { kIou = 1, kSparse, kBilinear, kNms, kAux, kPaint };

std::uint64_t case_seed(const VerifyOptions& o, Stream s, std::size_t i) {
  return derive_seed(derive_seed(o.seed, s), i);
}

// Per-case record reduced serially so the report does not depend on thread interleaving.
struct CaseResult {
  std::vector<double> errors;  // one per measure
  std::size_t violations = 0;
  std::string failure;
};

SuiteReport summarize(std::string name, std::vector<Measure> measures, const std::vector<CaseResult>& cases,
                   std::chrono::steady_clock::time_point start) {
  SuiteReport r;
  r.name = std::move(name);
  r.measures = std::move(measures);
  r.cases = cases.size();
  for (const auto& c : cases) {
    for (std::size_t m = 0; m < r.measures.size() && m < c.errors.size(); ++m) {
      r.measures[m].max_error = std::max(r.measures[m].max_error, c.errors[m]);
    }
    r.violations += c.violations;
    if (!c.failure.empty() && r.failures.size() < 10) r.failures.push_back(c.failure);
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

RotatedRect2D random_rect(Rng& rng, double spread) {
  return {rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(0.3, 6.0), rng.uniform(0.3, 3.0),
          rng.uniform(-std::numbers::pi, std::numbers::pi)};
}

RotatedRect2D rigid(const RotatedRect2D& r, double theta, double tx, double ty) {
  const double c = std::cos(theta), s = std::sin(theta);
  return {c * r.cx - s * r.cy + tx, s * r.cx + c * r.cy + ty, r.length, r.width, r.yaw + theta};
}

}  // namespace

SuiteReport verify_iou(const VerifyOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<CaseResult> cases(static_cast<std::size_t>(opts.budget.iou_pairs));
  parallel_for(cases.size(), opts.jobs, [&](std::size_t i) {
    Rng rng(case_seed(opts, kIou, i));
    const RotatedRect2D a = random_rect(rng, 1.5);
    RotatedRect2D b = random_rect(rng, 1.5);
    if (i % 50 == 0) b = a;  // identical pairs exercise the degenerate clip path
    const double iou = rotated_iou_bev(a, b);
    const double mc = oracle::mc_rotated_iou(a, b, opts.budget.mc_samples, rng.next_u64());
    const double sym = std::abs(iou - rotated_iou_bev(b, a));
    const double theta = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double tx = rng.uniform(-50, 50), ty = rng.uniform(-50, 50);
    const double inv = std::abs(iou - rotated_iou_bev(rigid(a, theta, tx, ty), rigid(b, theta, tx, ty)));
    CaseResult& c = cases[i];
    c.errors = {std::abs(iou - mc), sym, inv};
    if (c.errors[0] > 3e-3 || sym > 1e-9 || inv > 1e-9) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "pair %zu: iou %.6f mc %.6f sym %.2e rigid %.2e", i, iou, mc, sym, inv);
      c.failure = buf;
    }
  });
  return summarize("geometry_iou", {{"mc_abs_error", 0, 3e-3}, {"symmetry", 0, 1e-9}, {"rigid_invariance", 0, 1e-9}},
                cases, start);
}

SuiteReport verify_sparse_dense(const VerifyOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  struct Layer {
    const char* name;
    int stride;
    bool submanifold;
  };
  static constexpr Layer kLayers[] = {{"submanifold", 1, true}, {"regular_s1", 1, false}, {"regular_s2", 2, false}};
  const std::size_t per = static_cast<std::size_t>(opts.budget.sparse_volumes);
  std::vector<CaseResult> cases(3 * per);
  parallel_for(cases.size(), opts.jobs, [&](std::size_t i) {
    const Layer& layer = kLayers[i / per];
    Rng rng(case_seed(opts, kSparse, i));
    const int nx = rng.uniform_int(3, 20), ny = rng.uniform_int(3, 20);
    const int cin = rng.uniform_int(1, 8), cout = rng.uniform_int(1, 8);
    const double density = rng.uniform(0.02, 0.5);

    SparseVolume<double> in_d = SparseVolume<double>::empty(1, nx, ny, cin);
    std::vector<RowVector<double>> rows;
    for (int ix = 0; ix < nx; ++ix) {
      for (int iy = 0; iy < ny; ++iy) {
        if (rng.uniform() >= density) continue;
        in_d.coords.push_back({ix, iy});
        RowVector<double> f(cin);
        for (int c = 0; c < cin; ++c) f(c) = rng.uniform(-1, 1);
        rows.push_back(f);
      }
    }
    in_d.features.resize(static_cast<Eigen::Index>(rows.size()), cin);
    for (std::size_t r = 0; r < rows.size(); ++r) in_d.features.row(static_cast<Eigen::Index>(r)) = rows[r];

    Conv2d<double> conv_d = Conv2d<double>::zeros(3, cin, cout);
    for (auto& t : conv_d.taps) {
      for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = rng.uniform(-1, 1);
    }
    for (int c = 0; c < cout; ++c) conv_d.bias(c) = rng.uniform(-1, 1);

    // Float path under test, double oracle.
    SparseVolume<float> in_f{in_d.stride, in_d.nx, in_d.ny, in_d.coords, in_d.features.cast<float>()};
    Conv2d<float> conv_f{conv_d.kernel, {}, conv_d.bias.cast<float>()};
    for (const auto& t : conv_d.taps) conv_f.taps.push_back(t.cast<float>());
    if (opts.corrupt_kernel) conv_f.taps[4](0, 0) += 0.5f;

    const SparseVolume<float> out = sparse_conv2d(in_f, conv_f, layer.stride, layer.submanifold);
    const FeatureMap<double> ref = oracle::dense_conv_reference(densify(in_d), conv_d, layer.stride);

    int oh = 0, ow = 0;
    std::vector<std::uint8_t> mask;
    if (layer.submanifold) {
      oh = ny;
      ow = nx;
      mask.assign(static_cast<std::size_t>(nx) * ny, 0);
      for (const Cell& c : in_d.coords) mask[static_cast<std::size_t>(c.iy) * nx + c.ix] = 1;
    } else {
      mask = oracle::reachable_mask(in_d, layer.stride, oh, ow);
    }

    CaseResult& res = cases[i];
    std::vector<std::uint8_t> got(mask.size(), 0);
    for (const Cell& c : out.coords) {
      if (c.ix < 0 || c.ix >= ow || c.iy < 0 || c.iy >= oh) {
        ++res.violations;
        continue;
      }
      got[static_cast<std::size_t>(c.iy) * ow + c.ix] = 1;
    }
    if (got != mask || out.nx != ow || out.ny != oh) {
      ++res.violations;
      res.failure = std::string(layer.name) + " volume " + std::to_string(i % per) + ": active site set differs";
    }
    const FeatureMap<float> dense = densify(out);
    double err = 0;
    for (int y = 0; y < oh && dense.height == oh && dense.width == ow; ++y) {
      for (int x = 0; x < ow; ++x) {
        const bool on = mask[static_cast<std::size_t>(y) * ow + x] != 0;
        for (int c = 0; c < cout; ++c) {
          const double want = on ? ref.at(y, x)(c) : 0.0;
          err = std::max(err, std::abs(static_cast<double>(dense.at(y, x)(c)) - want));
        }
      }
    }
    res.errors = {err};
    if (err > 1e-5 && res.failure.empty()) {
      res.failure = std::string(layer.name) + " volume " + std::to_string(i % per) + ": max abs diff " +
                    std::to_string(err);
    }
  });
  return summarize("sparse_dense", {{"max_abs_diff", 0, 1e-5}}, cases, start);
}

SuiteReport verify_bilinear_gradient(const VerifyOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  const GridSpec& spec = opts.grid;
  std::vector<CaseResult> cases(static_cast<std::size_t>(opts.budget.bilinear_samples));
  parallel_for(cases.size(), opts.jobs, [&](std::size_t i) {
    Rng rng(case_seed(opts, kBilinear, i));
    const int h = rng.uniform_int(1, 6), w = rng.uniform_int(1, 6), channels = rng.uniform_int(1, 4);
    const int stride = 1 << rng.uniform_int(0, 3);
    FeatureMap<double> map = FeatureMap<double>::zeros(stride, h, w, channels);
    for (Eigen::Index k = 0; k < map.data.size(); ++k) map.data.data()[k] = rng.uniform(-2, 2);
    const double cell = stride * spec.pillar_size;
    const Vector2d p(spec.x_min + rng.uniform(-1.0, w + 1.0) * cell, spec.y_min + rng.uniform(-1.0, h + 1.0) * cell);
    const int channel = rng.uniform_int(0, channels - 1);

    const auto sample = bilinear_sample(map, p, spec);
    std::vector<double> analytic(static_cast<std::size_t>(map.data.size()), 0.0);
    for (const auto& s : sample.support) {
      if (s.valid) analytic[static_cast<std::size_t>(map.index(s.iy, s.ix) * channels + channel)] += s.weight;
    }
    std::vector<double> x(map.data.data(), map.data.data() + map.data.size());
    auto f = [&](const std::vector<double>& v) {
      FeatureMap<double> m = map;
      std::copy(v.begin(), v.end(), m.data.data());
      return bilinear_sample(m, p, spec).value(channel);
    };
    const auto numeric = oracle::finite_difference_grad(f, x, 1e-3);
    double worst = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      // Relative error with a 1e-6 floor, so vanishing weights are compared absolutely.
      const double denom = std::max({std::abs(analytic[k]), std::abs(numeric[k]), 1e-6});
      worst = std::max(worst, std::abs(analytic[k] - numeric[k]) / denom);
    }
    cases[i].errors = {worst};
    if (worst >= 1e-4) cases[i].failure = "sample " + std::to_string(i) + ": relative error " + std::to_string(worst);
  });
  return summarize("bilinear_gradient", {{"max_relative_error", 0, 1e-4}}, cases, start);
}

namespace {

std::vector<Detection> random_cluttered_boxes(Rng& rng, int n) {
  const SceneSpec sizes;
  std::vector<std::array<double, 3>> clusters(static_cast<std::size_t>(std::max(1, n / 10)));
  for (auto& c : clusters) c = {rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-std::numbers::pi, std::numbers::pi)};
  std::vector<Detection> dets;
  for (int k = 0; k < n; ++k) {
    const auto& c = clusters[static_cast<std::size_t>(rng.below(clusters.size()))];
    const int cls = rng.uniform_int(0, kNumClasses - 1);
    const auto& m = sizes.mean_size[static_cast<std::size_t>(cls)];
    const double l = m[0] * rng.uniform(0.8, 1.2), w = m[1] * rng.uniform(0.8, 1.2), h = m[2] * rng.uniform(0.8, 1.2);
    Detection d;
    d.box = Box3D(c[0] + 0.3 * rng.normal(), c[1] + 0.3 * rng.normal(), h / 2 + 0.1 * rng.normal(), l, w, h,
                  c[2] + 0.2 * rng.normal(), cls);
    d.score = rng.uniform();
    d.iou_score = rng.uniform();
    d.rectified_score = rng.uniform();
    dets.push_back(d);
  }
  return dets;
}

}  // namespace

SuiteReport verify_nms(const VerifyOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  const std::array<std::array<double, kNumClasses>, 3> configs = {
      opts.rpn.nms_iou, std::array<double, kNumClasses>{0.8, 0.8, 0.8}, std::array<double, kNumClasses>{0.55, 0.55, 0.55}};
  std::vector<CaseResult> cases(static_cast<std::size_t>(opts.budget.nms_scenes));
  std::vector<std::size_t> suppressed(cases.size(), 0);
  parallel_for(cases.size(), opts.jobs, [&](std::size_t i) {
    Rng rng(case_seed(opts, kNms, i));
    const auto dets = random_cluttered_boxes(rng, opts.budget.nms_boxes);
    for (std::size_t k = 0; k < configs.size(); ++k) {
      const auto got = nms_3d_indices(dets, configs[k]);
      const auto want = oracle::exhaustive_nms(dets, configs[k]);
      suppressed[i] += dets.size() - want.size();
      if (got != want) {
        ++cases[i].violations;
        if (cases[i].failure.empty()) {
          cases[i].failure = "scene " + std::to_string(i) + " thresholds #" + std::to_string(k) + ": kept " +
                             std::to_string(got.size()) + " vs oracle " + std::to_string(want.size());
        }
      }
    }
  });
  auto report = summarize("nms_oracle", {}, cases, start);
  std::size_t total = 0;
  for (auto s : suppressed) total += s;
  report.notes.push_back("oracle suppressed " + std::to_string(total) + " boxes in total");
  return report;
}

SuiteReport verify_aux_labels(const VerifyOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<CaseResult> cases(static_cast<std::size_t>(opts.budget.aux_rois));
  std::vector<std::size_t> positives(cases.size(), 0);
  parallel_for(cases.size(), opts.jobs, [&](std::size_t i) {
    Rng rng(case_seed(opts, kAux, i));
    std::vector<Box3D> gt;
    const int n = rng.uniform_int(1, 5);
    for (int k = 0; k < n; ++k) {
      gt.emplace_back(rng.uniform(-6, 6), rng.uniform(-6, 6), 0.8, rng.uniform(0.5, 5), rng.uniform(0.5, 2.5), 1.6,
                      rng.uniform(-std::numbers::pi, std::numbers::pi), 0);
    }
    const Box3D& src = gt[static_cast<std::size_t>(rng.below(gt.size()))];
    const Box3D roi(src.cx + rng.normal(), src.cy + rng.normal(), src.cz, src.length * rng.uniform(0.6, 1.6),
                    src.width * rng.uniform(0.6, 1.6), src.height, src.yaw + 0.5 * rng.normal(), 0);
    const auto got = aux_seg_labels(roi, gt, opts.grid_size);
    const auto want = oracle::aux_labels_reference(roi, gt, opts.grid_size);
    for (auto v : want) positives[i] += v;
    if (got != want) {
      cases[i].violations = 1;
      cases[i].failure = "roi " + std::to_string(i) + ": label grid differs";
    }
  });
  auto report = summarize("aux_labels", {}, cases, start);
  std::size_t total = 0;
  for (auto p : positives) total += p;
  report.notes.push_back(std::to_string(total) + " grid points labelled inside");
  return report;
}

SuiteReport verify_paint_decode(const VerifyOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<CaseResult> cases(static_cast<std::size_t>(opts.budget.paint_sets));
  parallel_for(cases.size(), opts.jobs, [&](std::size_t i) {
    SceneSpec spec;
    spec.seed = case_seed(opts, kPaint, i);
    spec.min_points = spec.max_points = 0;
    spec.clutter_density = 0;
    const auto gt = generate_scene(spec, opts.grid).boxes;

    std::vector<Detection> decoded;
    for (int stride : kRpnStrides) {
      const HeadOutput head = oracle::paint_head_output(encode_targets(gt, stride, opts.grid, opts.rpn));
      const auto d = decode_proposals(head, opts.grid, opts.rpn);
      decoded.insert(decoded.end(), d.begin(), d.end());
    }
    CaseResult& c = cases[i];
    double pos = 0, ang = 0;
    if (decoded.size() != gt.size()) {
      ++c.violations;
      c.failure = "set " + std::to_string(i) + ": decoded " + std::to_string(decoded.size()) + " boxes for " +
                  std::to_string(gt.size()) + " gt";
    }
    for (const Box3D& g : gt) {
      const Detection* best = nullptr;
      double best_d = 0;
      for (const auto& d : decoded) {
        const double dist = std::hypot(d.box.cx - g.cx, d.box.cy - g.cy);
        if (d.class_id() == g.class_id && (!best || dist < best_d)) {
          best = &d;
          best_d = dist;
        }
      }
      if (!best) {
        ++c.violations;
        continue;
      }
      const Box3D& b = best->box;
      for (double e : {b.cx - g.cx, b.cy - g.cy, b.cz - g.cz, b.length - g.length, b.width - g.width,
                       b.height - g.height}) {
        pos = std::max(pos, std::abs(e));
      }
      ang = std::max(ang, heading_error(b.yaw, g.yaw));
    }
    c.errors = {pos, ang};
  });
  return summarize("paint_decode", {{"max_metric_error_m", 0, 1e-5}, {"max_heading_error_rad", 0, 1e-6}}, cases, start);
}

std::vector<SuiteReport> run_verify_suites(const VerifyOptions& opts) {
  return {verify_iou(opts),        verify_sparse_dense(opts), verify_bilinear_gradient(opts),
          verify_nms(opts),        verify_aux_labels(opts),   verify_paint_decode(opts)};
}

std::string format_verify_report(const std::vector<SuiteReport>& reports) {
  std::string out;
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof(buf), "%-18s %s  cases=%zu violations=%zu time=%.2fs\n", r.name.c_str(),
                  r.passed() ? "PASS" : "FAIL", r.cases, r.violations, r.seconds);
    out += buf;
    for (const auto& m : r.measures) {
      std::snprintf(buf, sizeof(buf), "    %-22s max=%.3e tol=%.1e%s\n", m.name.c_str(), m.max_error, m.tolerance,
                    m.ok() ? "" : "  <-- exceeded");
      out += buf;
    }
    for (const auto& n : r.notes) out += "    " + n + "\n";
    for (const auto& f : r.failures) out += "    breach: " + f + "\n";
  }
  return out;
}

}  // namespace pillar_rcnn
