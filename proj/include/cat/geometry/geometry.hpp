#pragma once

#include <array>
#include <span>
#include <utility>
#include <vector>

#include "cat/geometry/types.hpp"

namespace cat::geom {

/// Maps a LiDAR point into the rectified camera frame (R0 · Tr · p).
Point3 lidar_to_camera(const Point3& p, const ProjectionModel& calib);
/// Inverse of lidar_to_camera.
Point3 camera_to_lidar(const Point3& p, const ProjectionModel& calib);

/// Perspective projection to pixels. Throws NonPositiveDepth when the
/// point is on or behind the camera plane.
Point2 project_point(const Point3& p, const ProjectionModel& calib);

/// Points whose projection falls inside `box` (inclusive) with positive
/// depth, in input order.
std::vector<Point3> extract_frustum(std::span<const Point3> cloud, const Box2D& box,
                                    const ProjectionModel& calib);
/// Same selection, returned as indices into `cloud`.
std::vector<std::size_t> frustum_indices(std::span<const Point3> cloud, const Box2D& box,
                                         const ProjectionModel& calib);

/// Eight corners: bottom face counter-clockwise from local (+w/2, +l/2),
/// then the top face in the same order.
std::array<Point3, 8> box_corners(const Box3D& b);

ConvexPolygon2D bev_footprint(const Box3D& b);
/// Clips `subject` by every edge of the convex CCW polygon `clip`.
ConvexPolygon2D clip_convex(const ConvexPolygon2D& subject, const ConvexPolygon2D& clip);
double polygon_area(const ConvexPolygon2D& poly);

double iou_3d(const Box3D& a, const Box3D& b);
/// max(iou_3d(a, b), iou_3d(a rotated by pi, b)).
double iou_3d_direction_invariant(const Box3D& a, const Box3D& b);
double diou_penalty(const Box3D& a, const Box3D& b);

/// Strict interior test used for foreground counting.
bool box_contains_strict(const Box3D& b, const Point3& p);

/// Wraps to [-pi, pi).
double wrap_angle(double yaw);
/// Wraps to [-pi/2, pi/2).
double wrap_half_angle(double yaw);
/// Front for wrapped yaw in [-pi/2, pi/2), back otherwise.
Direction direction_label(double yaw);

}  // namespace cat::geom
