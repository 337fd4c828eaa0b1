#include <cmath>
#include <numbers>

#include "cat/geometry/box_math.hpp"
#include "cat/geometry/geometry.hpp"

namespace cat::geom {

namespace {

kernel::BoxT<double> to_kernel(const Box3D& b) {
  return {b.cx, b.cy, b.cz, b.width, b.length, b.height, b.yaw};
}

constexpr double kPi = std::numbers::pi;

}  // namespace

bool Box3D::valid() const {
  const bool finite = std::isfinite(cx) && std::isfinite(cy) && std::isfinite(cz) &&
                      std::isfinite(width) && std::isfinite(length) && std::isfinite(height) &&
                      std::isfinite(yaw);
  return finite && width > 0.0 && length > 0.0 && height > 0.0 && yaw >= -kPi && yaw < kPi;
}

std::array<Point3, 8> box_corners(const Box3D& b) {
  const auto fp = kernel::footprint(to_kernel(b));
  const double zb = b.cz - 0.5 * b.height;
  const double zt = b.cz + 0.5 * b.height;
  std::array<Point3, 8> out;
  for (int i = 0; i < 4; ++i) {
    out[i] = {fp[i].x, fp[i].y, zb};
    out[i + 4] = {fp[i].x, fp[i].y, zt};
  }
  return out;
}

ConvexPolygon2D bev_footprint(const Box3D& b) {
  ConvexPolygon2D poly;
  for (const auto& p : kernel::footprint(to_kernel(b))) poly.vertices.push_back({p.x, p.y});
  return poly;
}

ConvexPolygon2D clip_convex(const ConvexPolygon2D& subject, const ConvexPolygon2D& clip) {
  // Generic-size variant of the kernel clip for callers outside the IoU path.
  std::vector<Point2> poly = subject.vertices;
  const std::size_t m = clip.vertices.size();
  for (std::size_t e = 0; e < m && !poly.empty(); ++e) {
    const Point2 a = clip.vertices[e];
    const Point2 b = clip.vertices[(e + 1) % m];
    const double tol = 1e-12 * (std::abs(b.x - a.x) + std::abs(b.y - a.y));
    auto side = [&](const Point2& p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); };
    std::vector<Point2> next;
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Point2 p = poly[i];
      const Point2 q = poly[(i + 1) % poly.size()];
      const double dp = side(p);
      const double dq = side(q);
      const bool p_in = dp >= -tol;
      const bool q_in = dq >= -tol;
      if (p_in) next.push_back(p);
      if (p_in != q_in && dp != dq) {
        const double t = dp / (dp - dq);
        next.push_back({p.x + (q.x - p.x) * t, p.y + (q.y - p.y) * t});
      }
    }
    poly = std::move(next);
  }
  return {poly};
}

double polygon_area(const ConvexPolygon2D& poly) {
  const auto& v = poly.vertices;
  double twice = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& p = v[i];
    const auto& q = v[(i + 1) % v.size()];
    twice += p.x * q.y - q.x * p.y;
  }
  return 0.5 * twice;
}

double iou_3d(const Box3D& a, const Box3D& b) {
  if (a == b) return 1.0;
  return kernel::iou(to_kernel(a), to_kernel(b));
}

double iou_3d_direction_invariant(const Box3D& a, const Box3D& b) {
  if (a == b) return 1.0;
  return kernel::direction_invariant_iou(to_kernel(a), to_kernel(b));
}

double diou_penalty(const Box3D& a, const Box3D& b) {
  return kernel::diou_penalty(to_kernel(a), to_kernel(b));
}

bool box_contains_strict(const Box3D& b, const Point3& p) {
  const double dx = p.x - b.cx;
  const double dy = p.y - b.cy;
  const double c = std::cos(b.yaw);
  const double s = std::sin(b.yaw);
  const double local_x = dx * c + dy * s;   // along width
  const double local_y = -dx * s + dy * c;  // along length
  return std::abs(local_x) < 0.5 * b.width && std::abs(local_y) < 0.5 * b.length &&
         std::abs(p.z - b.cz) < 0.5 * b.height;
}

double wrap_angle(double yaw) {
  if (yaw >= -kPi && yaw < kPi) return yaw;
  double w = std::fmod(yaw + kPi, 2.0 * kPi);
  if (w < 0.0) w += 2.0 * kPi;
  w -= kPi;
  // fmod can land exactly on +pi after the shift for inputs just below -pi.
  if (w >= kPi) w -= 2.0 * kPi;
  return w;
}

double wrap_half_angle(double yaw) {
  if (yaw >= -0.5 * kPi && yaw < 0.5 * kPi) return yaw;
  double w = std::fmod(yaw + 0.5 * kPi, kPi);
  if (w < 0.0) w += kPi;
  w -= 0.5 * kPi;
  if (w >= 0.5 * kPi) w -= kPi;
  return w;
}

Direction direction_label(double yaw) {
  const double w = wrap_angle(yaw);
  return (w >= -0.5 * kPi && w < 0.5 * kPi) ? Direction::Front : Direction::Back;
}

}  // namespace cat::geom
