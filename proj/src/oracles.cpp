#include "pillar_rcnn/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pillar_rcnn/rng.hpp"

namespace pillar_rcnn::oracle {

double mc_rotated_iou(const RotatedRect2D& a, const RotatedRect2D& b, std::int64_t samples, std::uint64_t seed) {
  const bool a_small = a.area() <= b.area();
  const RotatedRect2D& src = a_small ? a : b;
  const RotatedRect2D& dst = a_small ? b : a;
  const double cs = std::cos(src.yaw), ss = std::sin(src.yaw);
  const double cd = std::cos(dst.yaw), sd = std::sin(dst.yaw);
  const double hl = dst.length / 2, hw = dst.width / 2;
  Rng rng(seed);
  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < samples; ++i) {
    const double u = (rng.uniform() - 0.5) * src.length, v = (rng.uniform() - 0.5) * src.width;
    const double x = src.cx + cs * u - ss * v, y = src.cy + ss * u + cs * v;
    const double dx = x - dst.cx, dy = y - dst.cy;
    const double lu = cd * dx + sd * dy, lv = -sd * dx + cd * dy;
    if (std::abs(lu) <= hl && std::abs(lv) <= hw) ++hits;
  }
  if (samples <= 0) return 0;
  const double inter = static_cast<double>(hits) / static_cast<double>(samples) * src.area();
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

bool point_in_rect_edges(const Vector2d& p, const RotatedRect2D& r) {
  const auto c = r.corners();
  for (int k = 0; k < 4; ++k) {
    const Vector2d e = c[(k + 1) % 4] - c[k];
    const Vector2d q = p - c[k];
    // CCW corners: inside means on or left of every edge.
    if (e.x() * q.y() - e.y() * q.x() < -1e-12 * e.norm()) return false;
  }
  return true;
}

FeatureMap<double> dense_conv_reference(const FeatureMap<double>& in, const Conv2d<double>& conv, int stride) {
  const int k = conv.kernel, pad = k / 2;
  const int oh = (in.height - 1) / stride + 1, ow = (in.width - 1) / stride + 1;
  const auto cin = in.channels(), cout = conv.out_channels();
  FeatureMap<double> out = FeatureMap<double>::zeros(in.stride * stride, oh, ow, cout);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (Eigen::Index co = 0; co < cout; ++co) {
        double acc = conv.bias(co);
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const int iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
            if (iy < 0 || iy >= in.height || ix < 0 || ix >= in.width) continue;
            for (Eigen::Index ci = 0; ci < cin; ++ci) acc += in.at(iy, ix)(ci) * conv.tap(ky, kx)(ci, co);
          }
        }
        out.at(oy, ox)(co) = acc;
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> reachable_mask(const SparseVolume<double>& in, int stride, int& out_h, int& out_w) {
  out_h = (in.ny - 1) / stride + 1;
  out_w = (in.nx - 1) / stride + 1;
  std::vector<std::uint8_t> active(static_cast<std::size_t>(in.nx) * in.ny, 0);
  for (const Cell& c : in.coords) active[static_cast<std::size_t>(c.iy) * in.nx + c.ix] = 1;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(out_h) * out_w, 0);
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int iy = oy * stride + dy, ix = ox * stride + dx;
          if (iy >= 0 && iy < in.ny && ix >= 0 && ix < in.nx && active[static_cast<std::size_t>(iy) * in.nx + ix]) {
            mask[static_cast<std::size_t>(oy) * out_w + ox] = 1;
          }
        }
      }
    }
  }
  return mask;
}

std::vector<std::size_t> exhaustive_nms(const std::vector<Detection>& dets,
                                        const std::array<double, kNumClasses>& iou_thresholds) {
  const std::size_t n = dets.size();
  std::vector<double> iou(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) iou[i * n + j] = iou_3d(dets[i].box, dets[j].box);
  }
  std::vector<char> alive(n, 1);
  std::vector<std::size_t> kept;
  for (;;) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (alive[i] && (best == n || dets[i].rectified_score > dets[best].rectified_score)) best = i;
    }
    if (best == n) break;
    kept.push_back(best);
    alive[best] = 0;
    const double thr = iou_thresholds.at(static_cast<std::size_t>(dets[best].class_id()));
    for (std::size_t j = 0; j < n; ++j) {
      if (alive[j] && dets[j].class_id() == dets[best].class_id() && iou[best * n + j] > thr) alive[j] = 0;
    }
  }
  return kept;
}

std::vector<double> finite_difference_grad(const std::function<double(const std::vector<double>&)>& f,
                                           const std::vector<double>& x, double h) {
  std::vector<double> grad(x.size());
  std::vector<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2 * h);
  }
  return grad;
}

HeadOutput paint_head_output(const RpnTargets& targets) {
  HeadOutput out;
  out.stride = targets.stride;
  out.class_ids = targets.class_ids;
  out.heatmap = targets.heatmap;
  const int h = targets.heatmap.height, w = targets.heatmap.width;
  out.regression = FeatureMapf::zeros(targets.stride, h, w, kRegressionChannels);
  out.iou = FeatureMapf::zeros(targets.stride, h, w, 1);
  for (const RpnPositive& p : targets.positives) {
    for (int c = 0; c < kRegressionChannels; ++c) out.regression.at(p.iy, p.ix)(c) = static_cast<float>(p.regression[c]);
    out.iou.at(p.iy, p.ix)(0) = 1.0f;
  }
  return out;
}

std::vector<std::uint8_t> aux_labels_reference(const Box3D& roi, const std::vector<Box3D>& gt, int grid_size) {
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(grid_size) * grid_size, 0);
  const double c = std::cos(roi.yaw), s = std::sin(roi.yaw);
  for (int i = 0; i < grid_size; ++i) {
    for (int j = 0; j < grid_size; ++j) {
      const double u = -roi.length / 2 + (i + 0.5) * roi.length / grid_size;
      const double v = -roi.width / 2 + (j + 0.5) * roi.width / grid_size;
      const Vector2d p(roi.cx + c * u - s * v, roi.cy + s * u + c * v);
      for (const Box3D& g : gt) {
        if (point_in_rect_edges(p, project_to_bev(g))) {
          labels[static_cast<std::size_t>(i) * grid_size + j] = 1;
          break;
        }
      }
    }
  }
  return labels;
}

}  // namespace pillar_rcnn::oracle
