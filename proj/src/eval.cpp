#include "pillar_rcnn/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <numbers>
#include <numeric>

#include <json.hpp>

namespace pillar_rcnn {

void EvalConfig::validate() const {
  for (int c = 0; c < kNumClasses; ++c) {
    if (!(iou_thresholds[c] > 0 && iou_thresholds[c] <= 1)) {
      throw ValidationError(std::string("eval.iou_thresholds.") + kClassNames[c] + " must lie in (0, 1]");
    }
  }
  if (interpolation_points < 2) throw ValidationError("eval.interpolation_points must be at least 2");
}

bool in_difficulty(const Box3D& gt, Difficulty level) {
  return level == Difficulty::kLevel1 ? gt.num_points > 5 : gt.num_points >= 1;
}

std::vector<Box3D> split_difficulty(const std::vector<Box3D>& gt, Difficulty level) {
  std::vector<Box3D> out;
  std::copy_if(gt.begin(), gt.end(), std::back_inserter(out), [&](const Box3D& b) { return in_difficulty(b, level); });
  return out;
}

namespace {

std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].rectified_score > dets[b].rectified_score;
  });
  return order;
}

}  // namespace

std::vector<MatchResult> match_detections(const std::vector<Detection>& dets, const std::vector<Box3D>& gt,
                                          const EvalConfig& cfg, Difficulty level) {
  std::vector<MatchResult> out(dets.size());
  std::vector<char> taken(gt.size(), 0);
  for (std::size_t i : score_order(dets)) {
    const Detection& d = dets[i];
    const double thr = cfg.iou_thresholds.at(static_cast<std::size_t>(d.class_id()));
    int best = -1;
    double best_iou = 0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (taken[g] || gt[g].class_id != d.class_id()) continue;
      const double iou = iou_3d(d.box, gt[g]);
      if (iou >= thr && iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    if (best < 0) continue;
    taken[static_cast<std::size_t>(best)] = 1;
    out[i].gt_index = best;
    out[i].ignored = !in_difficulty(gt[static_cast<std::size_t>(best)], level);
    out[i].heading_error = heading_error(d.box.yaw, gt[static_cast<std::size_t>(best)].yaw);
  }
  return out;
}

double interpolated_ap(const std::vector<double>& precision, const std::vector<double>& recall, int points) {
  if (precision.empty()) return 0;
  // Suffix maximum: best precision at any recall at or beyond each point.
  std::vector<double> best(precision.size());
  double running = 0;
  for (std::size_t k = precision.size(); k-- > 0;) {
    running = std::max(running, precision[k]);
    best[k] = running;
  }
  double sum = 0;
  std::size_t k = 0;
  for (int i = 0; i < points; ++i) {
    const double r = static_cast<double>(i) / (points - 1);
    while (k < recall.size() && recall[k] < r - 1e-12) ++k;
    if (k == recall.size()) break;
    sum += best[k];
  }
  return sum / points;
}

std::array<ClassMetrics, kNumClasses> compute_ap_aph(const std::vector<SceneResult>& scenes, const EvalConfig& cfg,
                                                     Difficulty level) {
  struct Scored {
    double score;
    bool tp;
    double heading_weight;
  };
  std::array<std::vector<Scored>, kNumClasses> per_class;
  std::array<ClassMetrics, kNumClasses> metrics{};

  for (const auto& scene : scenes) {
    for (const auto& g : scene.ground_truth) {
      if (in_difficulty(g, level)) ++metrics.at(static_cast<std::size_t>(g.class_id)).num_gt;
    }
    const auto matches = match_detections(scene.detections, scene.ground_truth, cfg, level);
    for (std::size_t i : score_order(scene.detections)) {
      const auto& m = matches[i];
      if (m.ignored) continue;
      const bool tp = m.gt_index >= 0;
      const double w = tp ? 1.0 - m.heading_error / std::numbers::pi : 0.0;
      per_class.at(static_cast<std::size_t>(scene.detections[i].class_id()))
          .push_back({scene.detections[i].rectified_score, tp, w});
    }
  }

  for (int c = 0; c < kNumClasses; ++c) {
    auto& m = metrics[c];
    m.has_gt = m.num_gt > 0;
    auto& list = per_class[c];
    std::stable_sort(list.begin(), list.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
    std::vector<double> prec, prec_h, rec;
    double tp = 0, tp_h = 0, fp = 0;
    for (const auto& s : list) {
      if (s.tp) {
        tp += 1;
        tp_h += s.heading_weight;
      } else {
        fp += 1;
      }
      prec.push_back(tp / (tp + fp));
      prec_h.push_back(tp_h / (tp + fp));
      rec.push_back(m.has_gt ? tp / m.num_gt : 0.0);
    }
    m.num_tp = static_cast<int>(tp);
    m.num_fp = static_cast<int>(fp);
    if (m.has_gt) {
      m.ap = interpolated_ap(prec, rec, cfg.interpolation_points);
      m.aph = interpolated_ap(prec_h, rec, cfg.interpolation_points);
    }
  }
  return metrics;
}

MetricsReport evaluate(const std::vector<SceneResult>& scenes, const EvalConfig& cfg) {
  return {compute_ap_aph(scenes, cfg, Difficulty::kLevel1), compute_ap_aph(scenes, cfg, Difficulty::kLevel2)};
}

namespace {

std::pair<double, double> mean_over_classes(const std::array<ClassMetrics, kNumClasses>& m) {
  double ap = 0, aph = 0;
  int n = 0;
  for (const auto& c : m) {
    if (!c.has_gt) continue;
    ap += c.ap;
    aph += c.aph;
    ++n;
  }
  return n ? std::make_pair(ap / n, aph / n) : std::make_pair(0.0, 0.0);
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  auto level_json = [](const std::array<ClassMetrics, kNumClasses>& m) {
    nlohmann::ordered_json lj;
    const auto [ap, aph] = mean_over_classes(m);
    lj["all"] = {{"ap", ap}, {"aph", aph}};
    for (int c = 0; c < kNumClasses; ++c) {
      lj[kClassNames[c]] = {{"ap", m[c].ap},         {"aph", m[c].aph},         {"has_gt", m[c].has_gt},
                            {"num_gt", m[c].num_gt}, {"num_tp", m[c].num_tp}, {"num_fp", m[c].num_fp}};
    }
    return lj;
  };
  j["LEVEL_1"] = level_json(level1);
  j["LEVEL_2"] = level_json(level2);
  return j.dump(2) + "\n";
}

std::string MetricsReport::to_table() const {
  std::string out = "level    ALL (AP/APH)     Veh. (AP/APH)    Ped. (AP/APH)    Cyc. (AP/APH)\n";
  char buf[128];
  auto row = [&](const char* name, const std::array<ClassMetrics, kNumClasses>& m) {
    const auto [ap, aph] = mean_over_classes(m);
    std::snprintf(buf, sizeof(buf), "%-8s %6.2f/%-6.2f   ", name, 100 * ap, 100 * aph);
    out += buf;
    for (const auto& c : m) {
      if (c.has_gt) {
        std::snprintf(buf, sizeof(buf), " %6.2f/%-6.2f  ", 100 * c.ap, 100 * c.aph);
      } else {
        std::snprintf(buf, sizeof(buf), " %13s  ", "-");
      }
      out += buf;
    }
    out += "\n";
  };
  row("LEVEL_1", level1);
  row("LEVEL_2", level2);
  return out;
}

}  // namespace pillar_rcnn
