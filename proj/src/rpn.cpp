#include "pillar_rcnn/rpn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace pillar_rcnn {

void RpnConfig::validate() const {
  for (int c = 0; c < kNumClasses; ++c) {
    const std::string cls = kClassNames[c];
    if (!(beta[c] >= 0 && beta[c] <= 1)) throw ValidationError("rpn.beta." + cls + " must lie in [0, 1]");
    if (!(nms_iou[c] > 0 && nms_iou[c] <= 1)) throw ValidationError("rpn.nms_iou." + cls + " must lie in (0, 1]");
    if (top_k[c] < 0) throw ValidationError("rpn.top_k." + cls + " must be non-negative");
  }
  if (!(score_threshold >= 0 && score_threshold < 1)) throw ValidationError("rpn.score_threshold must lie in [0, 1)");
  if (!(gaussian_overlap > 0 && gaussian_overlap < 1)) throw ValidationError("rpn.gaussian_overlap must lie in (0, 1)");
  if (min_radius < 0) throw ValidationError("rpn.min_radius must be non-negative");
}

int class_stride(int class_id) { return class_id == static_cast<int>(ObjectClass::kVehicle) ? 8 : 4; }

std::vector<int> classes_at_stride(int stride) {
  std::vector<int> out;
  for (int c = 0; c < kNumClasses; ++c) {
    if (class_stride(c) == stride) out.push_back(c);
  }
  return out;
}

std::string RpnHeadWeights::prefix(int stride) { return stride == 8 ? "rpn.p4" : "rpn.p3"; }

std::vector<WeightSpec> RpnHeadWeights::specs(int stride, int in_channels) {
  const std::string p = prefix(stride);
  const int ncls = static_cast<int>(classes_at_stride(stride).size());
  std::vector<WeightSpec> out;
  auto append = [&](std::vector<WeightSpec> more) { out.insert(out.end(), more.begin(), more.end()); };
  append(Conv2d<float>::specs(p + ".heatmap", 1, in_channels, ncls));
  append(Conv2d<float>::specs(p + ".offset", 1, in_channels, 2));
  append(Conv2d<float>::specs(p + ".z", 1, in_channels, 1));
  append(Conv2d<float>::specs(p + ".size", 1, in_channels, 3));
  append(Conv2d<float>::specs(p + ".heading", 1, in_channels, 2));
  append(Conv2d<float>::specs(p + ".iou", 1, in_channels, 1));
  return out;
}

RpnHeadWeights RpnHeadWeights::from_store(const WeightStore& store, int stride, int in_channels) {
  const std::string p = prefix(stride);
  const int ncls = static_cast<int>(classes_at_stride(stride).size());
  RpnHeadWeights w;
  w.stride = stride;
  w.heatmap = Conv2d<float>::from_store(store, p + ".heatmap", 1, in_channels, ncls);
  w.offset = Conv2d<float>::from_store(store, p + ".offset", 1, in_channels, 2);
  w.z = Conv2d<float>::from_store(store, p + ".z", 1, in_channels, 1);
  w.size = Conv2d<float>::from_store(store, p + ".size", 1, in_channels, 3);
  w.heading = Conv2d<float>::from_store(store, p + ".heading", 1, in_channels, 2);
  w.iou = Conv2d<float>::from_store(store, p + ".iou", 1, in_channels, 1);
  return w;
}

namespace {

RowMatrixf pointwise(const FeatureMapf& map, const Conv2d<float>& conv) {
  RowMatrixf y = map.data * conv.taps.front();
  y.rowwise() += conv.bias;
  return y;
}

FeatureMapf with_data(const FeatureMapf& like, RowMatrixf data) {
  FeatureMapf m;
  m.stride = like.stride;
  m.height = like.height;
  m.width = like.width;
  m.data = std::move(data);
  return m;
}

RowMatrixf sigmoid(const RowMatrixf& x) {
  return (1.0f + (-x.array()).exp()).inverse().matrix();
}

}  // namespace

HeadOutput rpn_head_forward(const FeatureMapf& level, const RpnHeadWeights& weights) {
  if (level.stride != weights.stride) {
    throw ValidationError("rpn_head_forward: map stride " + std::to_string(level.stride) +
                          " does not match head stride " + std::to_string(weights.stride));
  }
  HeadOutput out;
  out.stride = level.stride;
  out.class_ids = classes_at_stride(level.stride);
  out.heatmap = with_data(level, sigmoid(pointwise(level, weights.heatmap)));
  RowMatrixf reg(level.data.rows(), kRegressionChannels);
  reg.leftCols(2) = pointwise(level, weights.offset);
  reg.col(kZ) = pointwise(level, weights.z);
  reg.middleCols(kLogLength, 3) = pointwise(level, weights.size);
  reg.middleCols(kSinYaw, 2) = pointwise(level, weights.heading);
  out.regression = with_data(level, std::move(reg));
  out.iou = with_data(level, sigmoid(pointwise(level, weights.iou)));
  return out;
}

double gaussian_radius(double length_cells, double width_cells, double min_overlap) {
  const double h = length_cells, w = width_cells, o = min_overlap;
  const double b1 = h + w;
  const double c1 = w * h * (1 - o) / (1 + o);
  const double r1 = (b1 + std::sqrt(b1 * b1 - 4 * c1)) / 2;
  const double b2 = 2 * (h + w);
  const double c2 = (1 - o) * w * h;
  const double r2 = (b2 + std::sqrt(b2 * b2 - 16 * c2)) / 2;
  const double a3 = 4 * o;
  const double b3 = -2 * o * (h + w);
  const double c3 = (o - 1) * w * h;
  const double r3 = (b3 + std::sqrt(b3 * b3 - 4 * a3 * c3)) / 2;
  return std::min({r1, r2, r3});
}

RpnTargets encode_targets(const std::vector<Box3D>& gt, int level_stride, const GridSpec& spec,
                          const RpnConfig& cfg) {
  RpnTargets t;
  t.stride = level_stride;
  t.class_ids = classes_at_stride(level_stride);
  const int w = spec.nx() / level_stride, h = spec.ny() / level_stride;
  t.heatmap = FeatureMapf::zeros(level_stride, h, w, static_cast<Eigen::Index>(t.class_ids.size()));
  const double cell = level_stride * spec.pillar_size;

  for (const Box3D& box : gt) {
    const auto it = std::find(t.class_ids.begin(), t.class_ids.end(), box.class_id);
    if (it == t.class_ids.end()) continue;
    const int channel = static_cast<int>(it - t.class_ids.begin());
    const double u = (box.cx - spec.x_min) / cell, v = (box.cy - spec.y_min) / cell;
    const int ix = static_cast<int>(std::floor(u)), iy = static_cast<int>(std::floor(v));
    if (ix < 0 || ix >= w || iy < 0 || iy >= h) continue;

    const int radius = std::max(cfg.min_radius, static_cast<int>(gaussian_radius(box.length / cell, box.width / cell,
                                                                                 cfg.gaussian_overlap)));
    const double sigma = (2.0 * radius + 1) / 6.0;
    for (int dy = -radius; dy <= radius; ++dy) {
      const int y = iy + dy;
      if (y < 0 || y >= h) continue;
      for (int dx = -radius; dx <= radius; ++dx) {
        const int x = ix + dx;
        if (x < 0 || x >= w) continue;
        const float g = static_cast<float>(std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)));
        float& cellv = t.heatmap.data(t.heatmap.index(y, x), channel);
        cellv = std::max(cellv, g);
      }
    }

    RpnPositive pos;
    pos.ix = ix;
    pos.iy = iy;
    pos.channel = channel;
    pos.box = box;
    pos.regression = {u - ix, v - iy, box.cz, std::log(box.length), std::log(box.width), std::log(box.height),
                      std::sin(box.yaw), std::cos(box.yaw)};
    auto same_cell = [&](const RpnPositive& p) { return p.ix == ix && p.iy == iy && p.channel == channel; };
    auto existing = std::find_if(t.positives.begin(), t.positives.end(), same_cell);
    if (existing != t.positives.end()) {
      *existing = pos;
    } else {
      t.positives.push_back(pos);
    }
  }
  return t;
}

Box3D decode_box(int ix, int iy, const double* r, int level_stride, const GridSpec& spec, int class_id) {
  const double cell = level_stride * spec.pillar_size;
  return Box3D((ix + r[kOffsetX]) * cell + spec.x_min, (iy + r[kOffsetY]) * cell + spec.y_min, r[kZ],
               std::exp(r[kLogLength]), std::exp(r[kLogWidth]), std::exp(r[kLogHeight]),
               std::atan2(r[kSinYaw], r[kCosYaw]), class_id);
}

double RpnLoss::total() const {
  double sum = 0;
  for (const auto& l : levels) sum += l.total();
  return sum;
}

namespace {

void check_same_shape(const FeatureMapf& a, const FeatureMapf& b, const std::string& what) {
  if (a.height != b.height || a.width != b.width || a.channels() != b.channels()) {
    throw ValidationError("rpn_loss: " + what + " shape mismatch");
  }
}

std::array<double, kRegressionChannels> regression_at(const HeadOutput& head, int iy, int ix) {
  std::array<double, kRegressionChannels> r{};
  const auto row = head.regression.at(iy, ix);
  for (int c = 0; c < kRegressionChannels; ++c) r[c] = row(c);
  return r;
}

}  // namespace

RpnLoss rpn_loss(const std::vector<HeadOutput>& predictions, const std::vector<RpnTargets>& targets,
                 const GridSpec& spec) {
  if (predictions.size() != targets.size()) throw ValidationError("rpn_loss: level count mismatch");
  RpnLoss loss;
  for (std::size_t l = 0; l < predictions.size(); ++l) {
    const HeadOutput& pred = predictions[l];
    const RpnTargets& tgt = targets[l];
    if (pred.stride != tgt.stride) throw ValidationError("rpn_loss: level stride mismatch");
    check_same_shape(pred.heatmap, tgt.heatmap, "heatmap");
    if (pred.regression.height != tgt.heatmap.height || pred.regression.width != tgt.heatmap.width ||
        pred.regression.channels() != kRegressionChannels) {
      throw ValidationError("rpn_loss: regression shape mismatch");
    }

    RpnLevelLoss level;
    level.stride = pred.stride;
    level.num_positives = static_cast<int>(tgt.positives.size());
    const double norm = std::max(1, level.num_positives);

    double focal = 0;
    const float* p_ptr = pred.heatmap.data.data();
    const float* t_ptr = tgt.heatmap.data.data();
    for (Eigen::Index i = 0; i < pred.heatmap.data.size(); ++i) {
      const double p = std::clamp(static_cast<double>(p_ptr[i]), 1e-4, 1 - 1e-4);
      const double t = t_ptr[i];
      if (t == 1.0) {
        focal -= (1 - p) * (1 - p) * std::log(p);
      } else {
        focal -= std::pow(1 - t, 4) * p * p * std::log(1 - p);
      }
    }
    level.heatmap = focal / norm;

    double reg = 0, iou = 0;
    for (const RpnPositive& pos : tgt.positives) {
      const auto r = regression_at(pred, pos.iy, pos.ix);
      for (int c = 0; c < kRegressionChannels; ++c) reg += std::abs(r[c] - pos.regression[c]);
      double iou_target = 0;
      if (std::isfinite(r[kLogLength]) && std::isfinite(r[kLogWidth]) && std::isfinite(r[kLogHeight])) {
        iou_target = iou_3d(decode_box(pos.ix, pos.iy, r.data(), pred.stride, spec, pos.box.class_id), pos.box);
      }
      iou += std::abs(static_cast<double>(pred.iou.at(pos.iy, pos.ix)(0)) - iou_target);
    }
    level.regression = reg / norm;
    level.iou = iou / norm;
    loss.levels.push_back(level);
  }
  return loss;
}

std::vector<Detection> decode_proposals(const HeadOutput& head, const GridSpec& spec, const RpnConfig& cfg) {
  std::vector<Detection> out;
  const int h = head.heatmap.height, w = head.heatmap.width;
  for (std::size_t ch = 0; ch < head.class_ids.size(); ++ch) {
    const int class_id = head.class_ids[ch];
    const auto c = static_cast<Eigen::Index>(ch);
    auto value = [&](int y, int x) { return head.heatmap.data(head.heatmap.index(y, x), c); };

    std::vector<Eigen::Index> peaks;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const float v = value(y, x);
        if (!(v > cfg.score_threshold)) continue;
        bool is_max = true;
        for (int dy = -1; dy <= 1 && is_max; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            if (value(yy, xx) > v) {
              is_max = false;
              break;
            }
          }
        }
        if (is_max) peaks.push_back(head.heatmap.index(y, x));
      }
    }
    std::stable_sort(peaks.begin(), peaks.end(), [&](Eigen::Index a, Eigen::Index b) {
      return head.heatmap.data(a, c) > head.heatmap.data(b, c);
    });
    const std::size_t k = std::min(peaks.size(), static_cast<std::size_t>(cfg.top_k[class_id]));
    for (std::size_t i = 0; i < k; ++i) {
      const auto idx = peaks[i];
      const int iy = static_cast<int>(idx / w), ix = static_cast<int>(idx % w);
      std::array<double, kRegressionChannels> r{};
      for (int q = 0; q < kRegressionChannels; ++q) r[q] = head.regression.data(idx, q);
      Detection det;
      det.box = decode_box(ix, iy, r.data(), head.stride, spec, class_id);
      det.score = head.heatmap.data(idx, c);
      det.iou_score = std::clamp(static_cast<double>(head.iou.data(idx, 0)), 0.0, 1.0);
      det.rectified_score = det.score;
      out.push_back(det);
    }
  }
  return out;
}

double rectify(double score, double iou_score, double beta) {
  return std::pow(score, 1 - beta) * std::pow(iou_score, beta);
}

void rectify_detections(std::vector<Detection>& dets, const std::array<double, kNumClasses>& beta) {
  for (auto& d : dets) d.rectified_score = rectify(d.score, d.iou_score, beta.at(static_cast<std::size_t>(d.class_id())));
}

std::vector<std::size_t> nms_3d_indices(const std::vector<Detection>& dets,
                                        const std::array<double, kNumClasses>& iou_thresholds) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].rectified_score > dets[b].rectified_score;
  });
  std::vector<char> suppressed(dets.size(), 0);
  std::vector<std::size_t> keep;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    keep.push_back(i);
    const int cls = dets[i].class_id();
    const double thr = iou_thresholds.at(static_cast<std::size_t>(cls));
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (suppressed[j] || dets[j].class_id() != cls) continue;
      if (iou_3d(dets[i].box, dets[j].box) > thr) suppressed[j] = 1;
    }
  }
  return keep;
}

std::vector<Detection> nms_3d(const std::vector<Detection>& dets,
                              const std::array<double, kNumClasses>& iou_thresholds) {
  std::vector<Detection> out;
  for (auto i : nms_3d_indices(dets, iou_thresholds)) out.push_back(dets[i]);
  return out;
}

std::string format_detections(const std::vector<Detection>& dets) {
  std::string out;
  char line[512];
  for (const auto& d : dets) {
    const auto& b = d.box;
    std::snprintf(line, sizeof(line), "%d %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f\n", b.class_id, b.cx,
                  b.cy, b.cz, b.length, b.width, b.height, b.yaw, d.score, d.iou_score, d.rectified_score);
    out += line;
  }
  return out;
}

std::vector<Detection> parse_detections(const std::string& text, const std::string& source) {
  std::vector<Detection> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    int cls;
    double cx, cy, cz, l, w, h, yaw, s, wi, sh;
    if (!(ls >> cls >> cx >> cy >> cz >> l >> w >> h >> yaw >> s >> wi >> sh) || cls < 0 || cls >= kNumClasses) {
      throw IoError(source + ":" + std::to_string(lineno) + ": malformed detection record");
    }
    Detection d;
    try {
      d.box = Box3D(cx, cy, cz, l, w, h, yaw, cls);
    } catch (const ValidationError& e) {
      throw IoError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
    d.score = s;
    d.iou_score = wi;
    d.rectified_score = sh;
    out.push_back(d);
  }
  return out;
}

}  // namespace pillar_rcnn
