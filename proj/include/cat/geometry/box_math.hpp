#pragma once

// Scalar-generic rotated-box kernels. Instantiated with double for the
// public geometry API and with Dual<7> for the differentiable box loss, so
// both paths share one implementation of the clipping arithmetic.

#include <array>
#include <cmath>
#include <numbers>

#include "cat/geometry/dual.hpp"

namespace cat::geom::kernel {

template <class T>
struct BoxT {
  T cx, cy, cz, width, length, height, yaw;
};

template <class T>
struct Vec2T {
  T x, y;
};

// Below this BEV overlap (m^2) the intersection is treated as empty.
inline constexpr double kMinOverlapArea = 1e-12;

template <class T>
T max_of(const T& a, const T& b) { return a < b ? b : a; }
template <class T>
T min_of(const T& a, const T& b) { return b < a ? b : a; }

template <class T>
T cross(const Vec2T<T>& o, const Vec2T<T>& a, const Vec2T<T>& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Footprint corners, counter-clockwise starting at local (+w/2, +l/2).
template <class T>
std::array<Vec2T<T>, 4> footprint(const BoxT<T>& b) {
  using std::cos;
  using std::sin;
  const T c = cos(b.yaw);
  const T s = sin(b.yaw);
  const T hw = b.width * T(0.5);
  const T hl = b.length * T(0.5);
  const std::array<std::array<T, 2>, 4> local{{{hw, hl}, {-hw, hl}, {-hw, -hl}, {hw, -hl}}};
  std::array<Vec2T<T>, 4> out;
  for (int i = 0; i < 4; ++i) {
    const T& a = local[i][0];
    const T& l = local[i][1];
    out[i] = {b.cx + a * c - l * s, b.cy + a * s + l * c};
  }
  return out;
}

// Fixed-capacity polygon; clipping a quad by four half-planes yields at
// most eight vertices.
template <class T>
struct PolyT {
  std::array<Vec2T<T>, 16> v;
  int n = 0;
  void push(const Vec2T<T>& p) { v[n++] = p; }
};

// Sutherland-Hodgman: clip `subject` by the half-plane left of edge a->b.
template <class T>
PolyT<T> clip_half_plane(const PolyT<T>& subject, const Vec2T<T>& a, const Vec2T<T>& b) {
  PolyT<T> out;
  if (subject.n == 0) return out;
  const double scale = std::abs(value_of(b.x - a.x)) + std::abs(value_of(b.y - a.y));
  const double tol = 1e-12 * scale;
  for (int i = 0; i < subject.n; ++i) {
    const Vec2T<T>& p = subject.v[i];
    const Vec2T<T>& q = subject.v[(i + 1) % subject.n];
    const T dp = cross(a, b, p);
    const T dq = cross(a, b, q);
    const bool p_in = value_of(dp) >= -tol;
    const bool q_in = value_of(dq) >= -tol;
    if (p_in) out.push(p);
    if (p_in != q_in) {
      const double denom = value_of(dp - dq);
      if (denom != 0.0) {
        const T t = dp / (dp - dq);
        out.push({p.x + (q.x - p.x) * t, p.y + (q.y - p.y) * t});
      }
    }
  }
  return out;
}

template <class T>
T polygon_area(const PolyT<T>& poly) {
  T twice(0.0);
  for (int i = 0; i < poly.n; ++i) {
    const Vec2T<T>& p = poly.v[i];
    const Vec2T<T>& q = poly.v[(i + 1) % poly.n];
    twice += p.x * q.y - q.x * p.y;
  }
  return twice * T(0.5);
}

template <class T>
T bev_intersection_area(const BoxT<T>& a, const BoxT<T>& b) {
  const auto fa = footprint(a);
  const auto fb = footprint(b);
  PolyT<T> poly;
  for (const auto& p : fa) poly.push(p);
  for (int i = 0; i < 4 && poly.n > 0; ++i) poly = clip_half_plane(poly, fb[i], fb[(i + 1) % 4]);
  if (poly.n < 3) return T(0.0);
  const T area = polygon_area(poly);
  if (value_of(area) < kMinOverlapArea) return T(0.0);
  return area;
}

template <class T>
T iou(const BoxT<T>& a, const BoxT<T>& b) {
  const T area = bev_intersection_area(a, b);
  if (value_of(area) <= 0.0) return T(0.0);
  const T top = min_of(a.cz + a.height * T(0.5), b.cz + b.height * T(0.5));
  const T bottom = max_of(a.cz - a.height * T(0.5), b.cz - b.height * T(0.5));
  if (!(value_of(top) > value_of(bottom))) return T(0.0);
  const T inter = area * (top - bottom);
  const T vol_a = a.width * a.length * a.height;
  const T vol_b = b.width * b.length * b.height;
  return inter / (vol_a + vol_b - inter);
}

// Yaw and yaw + pi describe the same point set; both are evaluated and the
// larger overlap kept.
template <class T>
T direction_invariant_iou(const BoxT<T>& a, const BoxT<T>& b) {
  BoxT<T> flipped = a;
  flipped.yaw = a.yaw + T(std::numbers::pi);
  return max_of(iou(a, b), iou(flipped, b));
}

// Squared center distance over the squared diagonal of the smallest
// axis-aligned box enclosing both boxes.
template <class T>
T diou_penalty(const BoxT<T>& a, const BoxT<T>& b) {
  const auto fa = footprint(a);
  const auto fb = footprint(b);
  T xmin = fa[0].x, xmax = fa[0].x, ymin = fa[0].y, ymax = fa[0].y;
  auto extend = [&](const Vec2T<T>& p) {
    xmin = min_of(xmin, p.x);
    xmax = max_of(xmax, p.x);
    ymin = min_of(ymin, p.y);
    ymax = max_of(ymax, p.y);
  };
  for (const auto& p : fa) extend(p);
  for (const auto& p : fb) extend(p);
  const T zmin = min_of(a.cz - a.height * T(0.5), b.cz - b.height * T(0.5));
  const T zmax = max_of(a.cz + a.height * T(0.5), b.cz + b.height * T(0.5));
  const T dx = xmax - xmin, dy = ymax - ymin, dz = zmax - zmin;
  const T diag2 = dx * dx + dy * dy + dz * dz;
  const T ex = a.cx - b.cx, ey = a.cy - b.cy, ez = a.cz - b.cz;
  return (ex * ex + ey * ey + ez * ez) / diag2;
}

}  // namespace cat::geom::kernel
