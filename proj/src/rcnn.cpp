#include "pillar_rcnn/rcnn.hpp"

#include <algorithm>
#include <cmath>

#include "pillar_rcnn/rng.hpp"

namespace pillar_rcnn {

void RcnnConfig::validate() const {
  if (grid_size < 1) throw ValidationError("rcnn.grid_size must be at least 1");
  if (hidden[0] <= 0 || hidden[1] <= 0) throw ValidationError("rcnn.hidden widths must be positive");
  if (seg_hidden <= 0) throw ValidationError("rcnn.seg_hidden must be positive");
  if (num_samples < 0) throw ValidationError("rcnn.num_samples must be non-negative");
  if (!(positive_fraction >= 0 && positive_fraction <= 1)) {
    throw ValidationError("rcnn.positive_fraction must lie in [0, 1]");
  }
  if (!(positive_iou > 0 && positive_iou <= 1)) throw ValidationError("rcnn.positive_iou must lie in (0, 1]");
}

template <typename Scalar>
std::vector<WeightSpec> RcnnWeights<Scalar>::specs(const RcnnConfig& cfg, int pool_channels) {
  const int flat = cfg.grid_size * cfg.grid_size * pool_channels;
  std::vector<WeightSpec> out;
  auto append = [&](std::vector<WeightSpec> more) { out.insert(out.end(), more.begin(), more.end()); };
  append(Linear<Scalar>::specs("rcnn.fc1", flat, cfg.hidden[0]));
  append(Linear<Scalar>::specs("rcnn.fc2", cfg.hidden[0], cfg.hidden[1]));
  append(Linear<Scalar>::specs("rcnn.cls", cfg.hidden[1], 1));
  append(Linear<Scalar>::specs("rcnn.reg", cfg.hidden[1], kResidualDims));
  append(Linear<Scalar>::specs("rcnn.seg.fc1", pool_channels, cfg.seg_hidden));
  append(Linear<Scalar>::specs("rcnn.seg.fc2", cfg.seg_hidden, 1));
  return out;
}

template <typename Scalar>
RcnnWeights<Scalar> RcnnWeights<Scalar>::from_store(const WeightStore& store, const RcnnConfig& cfg,
                                                    int pool_channels) {
  const int flat = cfg.grid_size * cfg.grid_size * pool_channels;
  RcnnWeights w;
  w.fc1 = Linear<Scalar>::from_store(store, "rcnn.fc1", flat, cfg.hidden[0]);
  w.fc2 = Linear<Scalar>::from_store(store, "rcnn.fc2", cfg.hidden[0], cfg.hidden[1]);
  w.cls = Linear<Scalar>::from_store(store, "rcnn.cls", cfg.hidden[1], 1);
  w.reg = Linear<Scalar>::from_store(store, "rcnn.reg", cfg.hidden[1], kResidualDims);
  w.seg1 = Linear<Scalar>::from_store(store, "rcnn.seg.fc1", pool_channels, cfg.seg_hidden);
  w.seg2 = Linear<Scalar>::from_store(store, "rcnn.seg.fc2", cfg.seg_hidden, 1);
  return w;
}

std::vector<Vector2d> roi_grid_points(const Box3D& roi, int grid_size) {
  const RotatedRect2D rect = project_to_bev(roi);
  std::vector<Vector2d> pts;
  pts.reserve(static_cast<std::size_t>(grid_size * grid_size));
  for (int i = 0; i < grid_size; ++i) {
    const double lx = -roi.length / 2 + (i + 0.5) * roi.length / grid_size;
    for (int j = 0; j < grid_size; ++j) {
      const double ly = -roi.width / 2 + (j + 0.5) * roi.width / grid_size;
      pts.push_back(rect.to_world(Vector2d(lx, ly)));
    }
  }
  return pts;
}

template <typename Scalar>
BilinearSample<Scalar> bilinear_sample(const FeatureMap<Scalar>& map, const Vector2d& p, const GridSpec& spec) {
  const double cell = map.stride * spec.pillar_size;
  const double u = (p.x() - spec.x_min) / cell - 0.5;
  const double v = (p.y() - spec.y_min) / cell - 0.5;
  const double x0 = std::floor(u), y0 = std::floor(v);
  const double fx = u - x0, fy = v - y0;

  BilinearSample<Scalar> s;
  s.value = RowVector<Scalar>::Zero(map.channels());
  const std::array<std::array<double, 3>, 4> corners = {{{x0, y0, (1 - fx) * (1 - fy)},
                                                         {x0 + 1, y0, fx * (1 - fy)},
                                                         {x0, y0 + 1, (1 - fx) * fy},
                                                         {x0 + 1, y0 + 1, fx * fy}}};
  for (int k = 0; k < 4; ++k) {
    auto& sup = s.support[k];
    const double cx = corners[k][0], cy = corners[k][1];
    sup.valid = cx >= 0 && cx < map.width && cy >= 0 && cy < map.height;
    if (!sup.valid) continue;
    sup.ix = static_cast<int>(cx);
    sup.iy = static_cast<int>(cy);
    sup.weight = static_cast<Scalar>(corners[k][2]);
    s.value.noalias() += sup.weight * map.at(sup.iy, sup.ix);
  }
  return s;
}

template <typename Scalar>
RowMatrix<Scalar> pool_roi(const FeatureMap<Scalar>& map, const Box3D& roi, int grid_size, const GridSpec& spec) {
  const auto pts = roi_grid_points(roi, grid_size);
  RowMatrix<Scalar> pooled(static_cast<Eigen::Index>(pts.size()), map.channels());
  for (std::size_t k = 0; k < pts.size(); ++k) {
    pooled.row(static_cast<Eigen::Index>(k)) = bilinear_sample(map, pts[k], spec).value;
  }
  return pooled;
}

Residuals encode_residuals(const Box3D& roi, const Box3D& target) {
  const double d = std::hypot(roi.length, roi.width);
  return {(target.cx - roi.cx) / d,
          (target.cy - roi.cy) / d,
          (target.cz - roi.cz) / roi.height,
          std::log(target.length / roi.length),
          std::log(target.width / roi.width),
          std::log(target.height / roi.height),
          normalize_yaw(target.yaw - roi.yaw)};
}

Box3D decode_residuals(const Box3D& roi, const Residuals& r) {
  const double d = std::hypot(roi.length, roi.width);
  return Box3D(roi.cx + r[0] * d, roi.cy + r[1] * d, roi.cz + r[2] * roi.height, roi.length * std::exp(r[3]),
               roi.width * std::exp(r[4]), roi.height * std::exp(r[5]), roi.yaw + r[6], roi.class_id);
}

template <typename Scalar>
std::vector<RcnnPrediction> rcnn_forward(const std::vector<Box3D>& rois, const FeatureMap<Scalar>& map,
                                         const RcnnWeights<Scalar>& weights, const RcnnConfig& cfg,
                                         const GridSpec& spec, bool with_segmentation) {
  const int g2 = cfg.grid_size * cfg.grid_size;
  const Eigen::Index flat = g2 * map.channels();
  if (weights.fc1.in_features() != flat) {
    throw ValidationError("rcnn_forward: rcnn.fc1 expects " + std::to_string(weights.fc1.in_features()) +
                          " inputs, pooled RoI has " + std::to_string(flat));
  }
  std::vector<RcnnPrediction> out(rois.size());
  if (rois.empty()) return out;

  const auto n = static_cast<Eigen::Index>(rois.size());
  RowMatrix<Scalar> flattened(n, flat);
  std::vector<RowMatrix<Scalar>> pooled(rois.size());
  for (std::size_t r = 0; r < rois.size(); ++r) {
    pooled[r] = pool_roi(map, rois[r], cfg.grid_size, spec);
    flattened.row(static_cast<Eigen::Index>(r)) = Eigen::Map<const RowVector<Scalar>>(pooled[r].data(), flat);
  }
  RowMatrix<Scalar> h = weights.fc1.forward(flattened);
  relu_inplace(h);
  h = weights.fc2.forward(h);
  relu_inplace(h);
  const RowMatrix<Scalar> logits = weights.cls.forward(h);
  const RowMatrix<Scalar> residuals = weights.reg.forward(h);

  for (std::size_t r = 0; r < rois.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    out[r].confidence_logit = static_cast<double>(logits(i, 0));
    for (int k = 0; k < kResidualDims; ++k) out[r].residuals[k] = static_cast<double>(residuals(i, k));
    if (with_segmentation) {
      RowMatrix<Scalar> s = weights.seg1.forward(pooled[r]);
      relu_inplace(s);
      const RowMatrix<Scalar> seg = weights.seg2.forward(s);
      out[r].seg_logits.resize(static_cast<std::size_t>(g2));
      for (int k = 0; k < g2; ++k) out[r].seg_logits[k] = static_cast<double>(seg(k, 0));
    }
  }
  return out;
}

double confidence_target(double iou) { return std::clamp(2 * iou - 0.5, 0.0, 1.0); }

std::vector<SampledRoi> sample_proposals(const std::vector<Box3D>& proposals, const std::vector<Box3D>& gt,
                                         std::uint64_t seed, const RcnnConfig& cfg) {
  std::vector<SampledRoi> pos_pool, neg_pool;
  for (const Box3D& p : proposals) {
    SampledRoi s;
    s.roi = p;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (gt[g].class_id != p.class_id) continue;
      const double iou = iou_3d(p, gt[g]);
      if (iou > s.iou) {
        s.iou = iou;
        s.gt_index = static_cast<int>(g);
      }
    }
    s.positive = s.iou >= cfg.positive_iou;
    s.confidence_target = confidence_target(s.iou);
    if (s.positive) {
      s.residual_target = encode_residuals(p, gt[static_cast<std::size_t>(s.gt_index)]);
      pos_pool.push_back(s);
    } else {
      neg_pool.push_back(s);
    }
  }

  const auto total = static_cast<std::size_t>(cfg.num_samples);
  const auto want_pos = static_cast<std::size_t>(std::lround(cfg.num_samples * cfg.positive_fraction));
  std::size_t n_pos = std::min(pos_pool.size(), want_pos);
  std::size_t n_neg = std::min(neg_pool.size(), total - want_pos);
  if (n_pos < want_pos) n_neg = std::min(neg_pool.size(), total - n_pos);
  if (n_neg < total - want_pos) n_pos = std::min(pos_pool.size(), total - n_neg);

  Rng rng(seed);
  rng.shuffle(pos_pool);
  rng.shuffle(neg_pool);
  std::vector<SampledRoi> out(pos_pool.begin(), pos_pool.begin() + static_cast<std::ptrdiff_t>(n_pos));
  out.insert(out.end(), neg_pool.begin(), neg_pool.begin() + static_cast<std::ptrdiff_t>(n_neg));
  return out;
}

std::vector<std::uint8_t> aux_seg_labels(const Box3D& roi, const std::vector<Box3D>& gt, int grid_size) {
  const auto pts = roi_grid_points(roi, grid_size);
  std::vector<RotatedRect2D> rects;
  rects.reserve(gt.size());
  for (const auto& g : gt) rects.push_back(project_to_bev(g));
  std::vector<std::uint8_t> labels(pts.size(), 0);
  for (std::size_t k = 0; k < pts.size(); ++k) {
    labels[k] = std::any_of(rects.begin(), rects.end(), [&](const RotatedRect2D& r) { return point_in_rect(pts[k], r); });
  }
  return labels;
}

double smooth_l1(double x, double transition) {
  const double a = std::abs(x);
  return a < transition ? 0.5 * a * a / transition : a - 0.5 * transition;
}

double bce_with_logit(double logit, double target) {
  return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

RcnnLoss rcnn_loss(const std::vector<SampledRoi>& batch, const std::vector<RcnnPrediction>& predictions,
                   const std::vector<std::vector<std::uint8_t>>& seg_labels) {
  if (predictions.size() != batch.size() || seg_labels.size() != batch.size()) {
    throw ValidationError("rcnn_loss: batch, prediction and label counts differ");
  }
  RcnnLoss loss;
  if (batch.empty()) return loss;
  int num_pos = 0;
  std::size_t num_points = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    const auto& p = predictions[i];
    loss.confidence += bce_with_logit(p.confidence_logit, s.confidence_target);
    if (s.positive) {
      ++num_pos;
      for (int k = 0; k < kResidualDims; ++k) loss.regression += smooth_l1(p.residuals[k] - s.residual_target[k]);
    }
    if (p.seg_logits.size() != seg_labels[i].size()) {
      throw ValidationError("rcnn_loss: segmentation logits and labels differ in size");
    }
    for (std::size_t k = 0; k < seg_labels[i].size(); ++k) {
      loss.segmentation += bce_with_logit(p.seg_logits[k], seg_labels[i][k]);
    }
    num_points += seg_labels[i].size();
  }
  loss.confidence /= static_cast<double>(batch.size());
  loss.regression = num_pos > 0 ? loss.regression / num_pos : 0.0;
  loss.segmentation = num_points > 0 ? loss.segmentation / static_cast<double>(num_points) : 0.0;
  return loss;
}

LossReport make_loss_report(const RpnLoss& rpn, const RcnnLoss& rcnn) {
  LossReport r;
  double rpn_sum = 0;
  for (const auto& level : rpn.levels) {
    r.rpn.push_back(level.total());
    rpn_sum += r.rpn.back();
  }
  r.rcnn_confidence = rcnn.confidence;
  r.rcnn_regression = rcnn.regression;
  r.rcnn = rcnn.rcnn();
  r.seg = rcnn.segmentation;
  r.total = rpn_sum + r.rcnn + r.seg;
  return r;
}

template <typename Scalar>
std::vector<Detection> refine(const std::vector<Detection>& proposals, const FeatureMap<Scalar>& map,
                              const RcnnWeights<Scalar>& weights, const RcnnConfig& cfg, const GridSpec& spec,
                              const std::array<double, kNumClasses>& beta) {
  std::vector<Box3D> rois;
  rois.reserve(proposals.size());
  for (const auto& p : proposals) rois.push_back(p.box);
  const auto preds = rcnn_forward(rois, map, weights, cfg, spec, false);
  std::vector<Detection> out;
  out.reserve(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    Detection d;
    d.box = decode_residuals(rois[i], preds[i].residuals);
    d.score = 1.0 / (1.0 + std::exp(-preds[i].confidence_logit));
    d.iou_score = proposals[i].iou_score;
    d.rectified_score = rectify(d.score, d.iou_score, beta.at(static_cast<std::size_t>(d.class_id())));
    out.push_back(d);
  }
  return out;
}

template struct RcnnWeights<float>;
template struct RcnnWeights<double>;

#define PILLAR_RCNN_INSTANTIATE_RCNN(S)                                                                       \
  template BilinearSample<S> bilinear_sample(const FeatureMap<S>&, const Vector2d&, const GridSpec&);         \
  template RowMatrix<S> pool_roi(const FeatureMap<S>&, const Box3D&, int, const GridSpec&);                  \
  template std::vector<RcnnPrediction> rcnn_forward(const std::vector<Box3D>&, const FeatureMap<S>&,         \
                                                    const RcnnWeights<S>&, const RcnnConfig&, const GridSpec&, \
                                                    bool);                                                    \
  template std::vector<Detection> refine(const std::vector<Detection>&, const FeatureMap<S>&,                \
                                         const RcnnWeights<S>&, const RcnnConfig&, const GridSpec&,          \
                                         const std::array<double, kNumClasses>&);

PILLAR_RCNN_INSTANTIATE_RCNN(float)
PILLAR_RCNN_INSTANTIATE_RCNN(double)

#undef PILLAR_RCNN_INSTANTIATE_RCNN

}  // namespace pillar_rcnn
