#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cat/common/config.hpp"
#include "cat/common/rng.hpp"
#include "cat/data/kitti.hpp"
#include "cat/geometry/types.hpp"

namespace cat::data {

inline constexpr double kImageWidth = 1242.0;
inline constexpr double kImageHeight = 375.0;
// LiDAR origin height above the ground plane.
inline constexpr double kSensorHeight = 1.73;

// Pinhole camera (fx = fy = 720, principal point (620, 187.5)) sharing the
// LiDAR origin: camera x = -y, camera y = -z, camera z = x. R0 is identity.
geom::ProjectionModel synthetic_calib();

struct SceneSpec {
  std::size_t min_objects = 3;
  std::size_t max_objects = 6;
  double length_min = 3.2, length_max = 4.8;
  double width_min = 1.5, width_max = 1.9;
  double height_min = 1.3, height_max = 1.8;
  double yaw_min = -3.141592653589793, yaw_max = 3.141592653589793;
  // Forward distance band of object centers (m).
  double range_min = 10.0, range_max = 40.0;
  // Each object loses a contiguous share of its points drawn from
  // [0, occlusion_fraction].
  double occlusion_fraction = 0.3;
  // Share of objects placed across the left or right image border.
  double truncation_fraction = 0.1;
  double noise_sigma = 0.01;
  // Surface points per m^2 at 1 m range; falls off with range squared.
  double surface_density = 20000.0;
  double ground_density = 0.5;   // per m^2
  double clutter_density = 0.1;  // per m^2 of ground area

  void validate() const;
  bool set(const std::string& key, const std::string& value);
  KeyValues to_key_values() const;
};

struct SceneObject {
  KittiObject label;  // quantized as it would be stored
  geom::Box3D box;    // LiDAR frame, decoded from `label`
  std::size_t n_points = 0;
  double occluded_share = 0.0;
  bool truncated = false;
};

struct Scene {
  geom::ProjectionModel calib;
  std::vector<LidarPoint> cloud;
  std::vector<std::size_t> owner;  // per cloud point: object index, or npos for background
  std::vector<SceneObject> objects;
};

Scene generate_synthetic_scene(const SceneSpec& spec, Rng& rng);

}  // namespace cat::data
