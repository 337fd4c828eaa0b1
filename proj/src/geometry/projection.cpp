#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "cat/common/error.hpp"
#include "cat/geometry/geometry.hpp"

namespace cat::geom {

namespace {

using Mat3 = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>;

Mat3 r0_matrix(const ProjectionModel& c) { return Mat3(c.R0.data()); }

Mat3 tr_rotation(const ProjectionModel& c) {
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) m(r, k) = c.Tr[r * 4 + k];
  return m;
}

Eigen::Vector3d tr_translation(const ProjectionModel& c) {
  return {c.Tr[3], c.Tr[7], c.Tr[11]};
}

}  // namespace

bool Box2D::valid() const {
  return std::isfinite(u_min) && std::isfinite(v_min) && std::isfinite(u_max) &&
         std::isfinite(v_max) && u_min < u_max && v_min < v_max;
}

ProjectionModel ProjectionModel::identity() {
  ProjectionModel m;
  m.P = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  m.R0 = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  m.Tr = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  return m;
}

Point3 lidar_to_camera(const Point3& p, const ProjectionModel& calib) {
  const auto& T = calib.Tr;
  const double x = T[0] * p.x + T[1] * p.y + T[2] * p.z + T[3];
  const double y = T[4] * p.x + T[5] * p.y + T[6] * p.z + T[7];
  const double z = T[8] * p.x + T[9] * p.y + T[10] * p.z + T[11];
  const auto& R = calib.R0;
  return {R[0] * x + R[1] * y + R[2] * z, R[3] * x + R[4] * y + R[5] * z,
          R[6] * x + R[7] * y + R[8] * z};
}

Point3 camera_to_lidar(const Point3& p, const ProjectionModel& calib) {
  const Eigen::Vector3d cam(p.x, p.y, p.z);
  const Eigen::Vector3d unrect = r0_matrix(calib).inverse() * cam;
  const Eigen::Vector3d lidar = tr_rotation(calib).inverse() * (unrect - tr_translation(calib));
  return {lidar.x(), lidar.y(), lidar.z()};
}

Point2 project_point(const Point3& p, const ProjectionModel& calib) {
  const Point3 c = lidar_to_camera(p, calib);
  const auto& P = calib.P;
  const double w = P[8] * c.x + P[9] * c.y + P[10] * c.z + P[11];
  if (!(c.z > 0.0) || !(w > 0.0)) {
    std::ostringstream msg;
    msg << "point (" << p.x << ", " << p.y << ", " << p.z << ") has camera depth " << c.z;
    throw Error(ErrorKind::NonPositiveDepth, msg.str());
  }
  const double u = P[0] * c.x + P[1] * c.y + P[2] * c.z + P[3];
  const double v = P[4] * c.x + P[5] * c.y + P[6] * c.z + P[7];
  return {u / w, v / w};
}

std::vector<std::size_t> frustum_indices(std::span<const Point3> cloud, const Box2D& box,
                                         const ProjectionModel& calib) {
  std::vector<std::size_t> out;
  const auto& P = calib.P;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3 c = lidar_to_camera(cloud[i], calib);
    const double w = P[8] * c.x + P[9] * c.y + P[10] * c.z + P[11];
    if (!(c.z > 0.0) || !(w > 0.0)) continue;
    const double u = (P[0] * c.x + P[1] * c.y + P[2] * c.z + P[3]) / w;
    const double v = (P[4] * c.x + P[5] * c.y + P[6] * c.z + P[7]) / w;
    if (box.contains(u, v)) out.push_back(i);
  }
  return out;
}

std::vector<Point3> extract_frustum(std::span<const Point3> cloud, const Box2D& box,
                                    const ProjectionModel& calib) {
  std::vector<Point3> out;
  for (std::size_t i : frustum_indices(cloud, box, calib)) out.push_back(cloud[i]);
  return out;
}

}  // namespace cat::geom
