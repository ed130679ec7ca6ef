#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <tuple>

#include "pillar_rcnn/types.hpp"

namespace pillar_rcnn {

/// Maps any finite angle into (-pi, pi].
template <typename Scalar>
Scalar normalize_yaw(Scalar yaw) {
  constexpr Scalar kPi = std::numbers::pi_v<Scalar>;
  Scalar a = std::fmod(yaw + kPi, 2 * kPi);
  if (a <= 0) a += 2 * kPi;
  return a - kPi;
}

/// Absolute heading difference folded into [0, pi].
template <typename Scalar>
Scalar heading_error(Scalar a, Scalar b) {
  constexpr Scalar kPi = std::numbers::pi_v<Scalar>;
  Scalar d = std::fmod(std::abs(a - b), 2 * kPi);
  return std::min(d, 2 * kPi - d);
}

template <typename Scalar>
struct RotatedRect {
  Scalar cx = 0, cy = 0;
  Scalar length = 0, width = 0;  // extent along the heading / across it
  Scalar yaw = 0;

  Scalar area() const { return length * width; }

  /// Corners in counter-clockwise order, starting at the rear-right corner.
  std::array<Vector2<Scalar>, 4> corners() const {
    const Scalar c = std::cos(yaw), s = std::sin(yaw);
    const Scalar hl = length / 2, hw = width / 2;
    const std::array<Vector2<Scalar>, 4> local = {Vector2<Scalar>(-hl, -hw), Vector2<Scalar>(hl, -hw),
                                                  Vector2<Scalar>(hl, hw), Vector2<Scalar>(-hl, hw)};
    std::array<Vector2<Scalar>, 4> out;
    for (int i = 0; i < 4; ++i) {
      out[i] = Vector2<Scalar>(cx + c * local[i].x() - s * local[i].y(),
                               cy + s * local[i].x() + c * local[i].y());
    }
    return out;
  }

  /// World point expressed in the rect frame (x along the heading).
  Vector2<Scalar> to_local(const Vector2<Scalar>& p) const {
    const Scalar c = std::cos(yaw), s = std::sin(yaw);
    const Scalar dx = p.x() - cx, dy = p.y() - cy;
    return Vector2<Scalar>(c * dx + s * dy, -s * dx + c * dy);
  }

  Vector2<Scalar> to_world(const Vector2<Scalar>& q) const {
    const Scalar c = std::cos(yaw), s = std::sin(yaw);
    return Vector2<Scalar>(cx + c * q.x() - s * q.y(), cy + s * q.x() + c * q.y());
  }
};

/// Oriented 3D box. Yaw is normalized and extents validated on construction.
template <typename Scalar>
struct Box3 {
  Scalar cx = 0, cy = 0, cz = 0;
  Scalar length = 1, width = 1, height = 1;
  Scalar yaw = 0;
  int class_id = 0;
  int num_points = 0;  // ground truth only

  Box3() = default;
  Box3(Scalar cx_, Scalar cy_, Scalar cz_, Scalar length_, Scalar width_, Scalar height_,
       Scalar yaw_, int class_id_ = 0, int num_points_ = 0)
      : cx(cx_), cy(cy_), cz(cz_), length(length_), width(width_), height(height_),
        yaw(normalize_yaw(yaw_)), class_id(class_id_), num_points(num_points_) {
    if (!(length > 0 && width > 0 && height > 0)) {
      throw ValidationError("Box3: length, width and height must be strictly positive");
    }
    if (num_points < 0) throw ValidationError("Box3: num_points must be non-negative");
  }

  Scalar bottom() const { return cz - height / 2; }
  Scalar top() const { return cz + height / 2; }
  Scalar volume() const { return length * width * height; }
};

using Box3D = Box3<double>;
using RotatedRect2D = RotatedRect<double>;

template <typename Scalar>
RotatedRect<Scalar> project_to_bev(const Box3<Scalar>& box) {
  return {box.cx, box.cy, box.length, box.width, box.yaw};
}

/// Inclusive containment test in the rect frame.
template <typename Scalar>
bool point_in_rect(const Vector2<Scalar>& p, const RotatedRect<Scalar>& rect) {
  const Vector2<Scalar> q = rect.to_local(p);
  return std::abs(q.x()) <= rect.length / 2 && std::abs(q.y()) <= rect.width / 2;
}

namespace detail {

template <typename Scalar>
struct Polygon {
  std::array<Vector2<Scalar>, 16> v;
  int n = 0;
  void push(const Vector2<Scalar>& p) {
    if (n < static_cast<int>(v.size())) v[n++] = p;
  }
};

template <typename Scalar>
Scalar cross(const Vector2<Scalar>& a, const Vector2<Scalar>& b) {
  return a.x() * b.y() - a.y() * b.x();
}

// Sutherland-Hodgman against the half-plane left of e0->e1.
template <typename Scalar>
Polygon<Scalar> clip_half_plane(const Polygon<Scalar>& in, const Vector2<Scalar>& e0,
                                const Vector2<Scalar>& e1) {
  Polygon<Scalar> out;
  if (in.n == 0) return out;
  const Vector2<Scalar> edge = e1 - e0;
  auto side = [&](const Vector2<Scalar>& p) { return cross<Scalar>(edge, p - e0); };
  for (int i = 0; i < in.n; ++i) {
    const Vector2<Scalar>& cur = in.v[i];
    const Vector2<Scalar>& nxt = in.v[(i + 1) % in.n];
    const Scalar sc = side(cur), sn = side(nxt);
    if (sc >= 0) out.push(cur);
    if ((sc >= 0) != (sn >= 0)) {
      const Scalar t = sc / (sc - sn);
      out.push(cur + t * (nxt - cur));
    }
  }
  return out;
}

template <typename Scalar>
Scalar polygon_area(const Polygon<Scalar>& poly) {
  // Drop vertices within 1e-9 of their predecessor before the shoelace sum.
  Polygon<Scalar> clean;
  for (int i = 0; i < poly.n; ++i) {
    if (clean.n > 0 && (poly.v[i] - clean.v[clean.n - 1]).norm() < Scalar(1e-9)) continue;
    clean.push(poly.v[i]);
  }
  while (clean.n > 1 && (clean.v[clean.n - 1] - clean.v[0]).norm() < Scalar(1e-9)) --clean.n;
  if (clean.n < 3) return 0;
  Scalar twice = 0;
  for (int i = 0; i < clean.n; ++i) twice += cross<Scalar>(clean.v[i], clean.v[(i + 1) % clean.n]);
  return std::abs(twice) / 2;
}

template <typename Scalar>
bool canonical_less(const RotatedRect<Scalar>& a, const RotatedRect<Scalar>& b) {
  return std::tie(a.cx, a.cy, a.length, a.width, a.yaw) < std::tie(b.cx, b.cy, b.length, b.width, b.yaw);
}

}  // namespace detail

/// Area of the intersection of two rotated rects. Argument order does not affect the result
/// bit-for-bit: the pair is put in a canonical order before clipping.
template <typename Scalar>
Scalar intersection_area(const RotatedRect<Scalar>& a_in, const RotatedRect<Scalar>& b_in) {
  const bool swap = detail::canonical_less(b_in, a_in);
  const RotatedRect<Scalar>& a = swap ? b_in : a_in;
  const RotatedRect<Scalar>& b = swap ? a_in : b_in;
  if (a.area() <= 0 || b.area() <= 0) return 0;

  // Bounding-circle rejection.
  const Scalar ra = std::hypot(a.length, a.width) / 2, rb = std::hypot(b.length, b.width) / 2;
  if (std::hypot(a.cx - b.cx, a.cy - b.cy) > ra + rb) return 0;

  detail::Polygon<Scalar> poly;
  for (const auto& c : a.corners()) poly.push(c);
  const auto bc = b.corners();
  for (int k = 0; k < 4 && poly.n > 0; ++k) poly = detail::clip_half_plane(poly, bc[k], bc[(k + 1) % 4]);
  return std::min(detail::polygon_area(poly), std::min(a.area(), b.area()));
}

template <typename Scalar>
Scalar rotated_iou_bev(const RotatedRect<Scalar>& a, const RotatedRect<Scalar>& b) {
  const Scalar inter = intersection_area(a, b);
  const Scalar uni = a.area() + b.area() - inter;
  if (uni <= 0 || inter <= 0) return 0;
  return std::clamp(inter / uni, Scalar(0), Scalar(1));
}

template <typename Scalar>
Scalar iou_3d(const Box3<Scalar>& a, const Box3<Scalar>& b) {
  const Scalar dz = std::min(a.top(), b.top()) - std::max(a.bottom(), b.bottom());
  if (dz <= 0) return 0;
  const Scalar inter = intersection_area(project_to_bev(a), project_to_bev(b)) * dz;
  const Scalar uni = a.volume() + b.volume() - inter;
  if (uni <= 0 || inter <= 0) return 0;
  return std::clamp(inter / uni, Scalar(0), Scalar(1));
}

/// Containment used for ground-truth point counts: BEV rect test plus inclusive z bounds.
template <typename Scalar>
bool point_in_box(Scalar x, Scalar y, Scalar z, const Box3<Scalar>& box) {
  return z >= box.bottom() && z <= box.top() &&
         point_in_rect(Vector2<Scalar>(x, y), project_to_bev(box));
}

}  // namespace pillar_rcnn
