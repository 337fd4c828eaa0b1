#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cat/geometry/types.hpp"

namespace cat::data {

// One line of a KITTI label file. Camera-frame fields are kept as stored:
// dimensions (h, w, l) in meters, location is the bottom-face center in the
// rectified camera frame, ry rotates about camera +y.
struct KittiObject {
  std::string type;
  double truncation = 0.0;
  int occlusion = 0;
  double alpha = 0.0;
  geom::Box2D box2d;
  double h = 0.0, w = 0.0, l = 0.0;
  double x = 0.0, y = 0.0, z = 0.0;
  double ry = 0.0;
  std::optional<double> score;

  bool dont_care() const { return type == "DontCare"; }
};

// Reads P2, R0_rect and Tr_velo_to_cam. Other keys are ignored.
geom::ProjectionModel parse_kitti_calib(const std::string& text);
std::string serialize_kitti_calib(const geom::ProjectionModel& calib);

std::vector<KittiObject> parse_kitti_label(const std::string& text);
// Fifteen space-separated fields per line (sixteen with a score), floats
// with two decimals.
std::string serialize_kitti_label(std::span<const KittiObject> objects);

// Center-based LiDAR box from the stored camera-frame fields.
geom::Box3D label_to_lidar_box(const KittiObject& obj, const geom::ProjectionModel& calib);
// Fills the 3D fields (and alpha) of `obj` from a LiDAR box.
void set_label_box(KittiObject& obj, const geom::Box3D& box, const geom::ProjectionModel& calib);

// Rounds every float field to the two decimals a label file keeps.
KittiObject quantize_label(const KittiObject& obj);

struct LidarPoint {
  geom::Point3 p;
  double intensity = 0.0;

  friend bool operator==(const LidarPoint&, const LidarPoint&) = default;
};

// Records of four little-endian float32 values (x, y, z, intensity).
std::vector<LidarPoint> load_point_cloud(std::span<const std::byte> bytes);
std::vector<std::byte> serialize_point_cloud(std::span<const LidarPoint> points);

std::vector<LidarPoint> read_point_cloud(const std::filesystem::path& path);
void write_point_cloud(const std::filesystem::path& path, std::span<const LidarPoint> points);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace cat::data
