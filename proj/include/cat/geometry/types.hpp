#pragma once

#include <array>
#include <vector>

namespace cat::geom {

// LiDAR frame: x forward, y left, z up (meters).
struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Point3&, const Point3&) = default;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// Pixel rectangle, inclusive on all four edges.
struct Box2D {
  double u_min = 0.0;
  double v_min = 0.0;
  double u_max = 0.0;
  double v_max = 0.0;

  bool valid() const;
  bool contains(double u, double v) const {
    return u >= u_min && u <= u_max && v >= v_min && v <= v_max;
  }

  friend bool operator==(const Box2D&, const Box2D&) = default;
};

// Oriented box. In the box's local frame the width spans local x and the
// length spans local y; yaw rotates the local frame about +z.
struct Box3D {
  double cx = 0.0;
  double cy = 0.0;
  double cz = 0.0;
  double width = 1.0;
  double length = 1.0;
  double height = 1.0;
  double yaw = 0.0;

  bool valid() const;
  Point3 center() const { return {cx, cy, cz}; }

  friend bool operator==(const Box3D&, const Box3D&) = default;
};

// KITTI-style calibration: pixel = P · R0 · Tr · [x y z 1]^T.
struct ProjectionModel {
  std::array<double, 12> P{};   // 3x4, row-major
  std::array<double, 9> R0{};   // 3x3, row-major
  std::array<double, 12> Tr{};  // 3x4 LiDAR -> camera, row-major

  static ProjectionModel identity();
};

struct ConvexPolygon2D {
  std::vector<Point2> vertices;  // counter-clockwise
};

enum class Direction { Front = 0, Back = 1 };

}  // namespace cat::geom
