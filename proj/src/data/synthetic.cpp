#include "cat/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cat/common/error.hpp"
#include "cat/geometry/geometry.hpp"

namespace cat::data {

namespace {

constexpr std::size_t kBackground = std::numeric_limits<std::size_t>::max();
constexpr int kMaxPlacementTries = 200;

struct Vec3 {
  double x, y, z;
};

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

// Number of draws for an expected count: integer part plus a Bernoulli
// draw on the fractional part.
std::size_t draw_count(double expected, Rng& rng) {
  const double base = std::floor(expected);
  return static_cast<std::size_t>(base) + (uniform(rng, 0.0, 1.0) < expected - base ? 1 : 0);
}

double floor2(double v) { return std::floor(v * 100.0 - 1e-6) / 100.0; }
double ceil2(double v) { return std::ceil(v * 100.0 + 1e-6) / 100.0; }

// Pixel rectangle of the projected corners: unclipped, and clipped to the
// image with edges rounded outward to the two decimals a label keeps.
std::pair<geom::Box2D, geom::Box2D> image_box(const geom::Box3D& box,
                                              const geom::ProjectionModel& calib) {
  geom::Box2D full{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                   -std::numeric_limits<double>::infinity(),
                   -std::numeric_limits<double>::infinity()};
  for (const auto& c : geom::box_corners(box)) {
    const geom::Point2 px = geom::project_point(c, calib);
    full.u_min = std::min(full.u_min, px.x);
    full.v_min = std::min(full.v_min, px.y);
    full.u_max = std::max(full.u_max, px.x);
    full.v_max = std::max(full.v_max, px.y);
  }
  geom::Box2D clipped{std::max(0.0, floor2(full.u_min)), std::max(0.0, floor2(full.v_min)),
                      std::min(kImageWidth - 1.0, ceil2(full.u_max)),
                      std::min(kImageHeight - 1.0, ceil2(full.v_max))};
  return {full, clipped};
}

double area(const geom::Box2D& b) {
  return std::max(0.0, b.u_max - b.u_min) * std::max(0.0, b.v_max - b.v_min);
}

bool inside_footprint(const geom::Box3D& b, double x, double y, double margin) {
  const double dx = x - b.cx, dy = y - b.cy;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= b.width / 2 + margin && std::abs(ly) <= b.length / 2 + margin;
}

// Points on the faces of `b` that face the sensor origin.
std::vector<geom::Point3> visible_surface(const geom::Box3D& b, const SceneSpec& spec, Rng& rng) {
  const Vec3 c{b.cx, b.cy, b.cz};
  const Vec3 ex{std::cos(b.yaw), std::sin(b.yaw), 0.0};
  const Vec3 ey{-std::sin(b.yaw), std::cos(b.yaw), 0.0};
  const Vec3 ez{0.0, 0.0, 1.0};
  struct Face {
    Vec3 normal;
    double half;
    Vec3 a1;
    double d1;
    Vec3 a2;
    double d2;
  };
  const Face faces[5] = {
      {ex, b.width / 2, ey, b.length, ez, b.height},   {ex * -1.0, b.width / 2, ey, b.length, ez, b.height},
      {ey, b.length / 2, ex, b.width, ez, b.height},   {ey * -1.0, b.length / 2, ex, b.width, ez, b.height},
      {ez, b.height / 2, ex, b.width, ey, b.length},
  };
  std::vector<geom::Point3> out;
  for (const Face& f : faces) {
    const Vec3 center = c + f.normal * f.half;
    const double facing = -dot(f.normal, center);
    if (facing <= 0.0) continue;
    const double r = norm(center);
    const double cos_inc = facing / r;
    const std::size_t n = draw_count(spec.surface_density * f.d1 * f.d2 * cos_inc / (r * r), rng);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = uniform(rng, -0.5, 0.5) * f.d1;
      const double v = uniform(rng, -0.5, 0.5) * f.d2;
      const Vec3 p = center + f.a1 * u + f.a2 * v;
      out.push_back({p.x, p.y, p.z});
    }
  }
  return out;
}

}  // namespace

geom::ProjectionModel synthetic_calib() {
  geom::ProjectionModel c;
  c.P = {720.0, 0.0, 620.0, 0.0, 0.0, 720.0, 187.5, 0.0, 0.0, 0.0, 1.0, 0.0};
  c.R0 = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  c.Tr = {0, -1, 0, 0, 0, 0, -1, 0, 1, 0, 0, 0};
  return c;
}

void SceneSpec::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw Error(ErrorKind::InvalidConfig, "scene spec: " + msg);
  };
  require(min_objects <= max_objects, "min_objects > max_objects");
  require(0.0 < length_min && length_min <= length_max, "length range");
  require(0.0 < width_min && width_min <= width_max, "width range");
  require(0.0 < height_min && height_min <= height_max, "height range");
  require(yaw_min <= yaw_max, "yaw range");
  require(5.0 <= range_min && range_min <= range_max, "range band must lie at or beyond 5 m");
  require(0.0 <= occlusion_fraction && occlusion_fraction <= 1.0, "occlusion_fraction in [0, 1]");
  require(0.0 <= truncation_fraction && truncation_fraction <= 1.0, "truncation_fraction in [0, 1]");
  require(noise_sigma >= 0.0, "noise_sigma >= 0");
  require(surface_density > 0.0 && ground_density >= 0.0 && clutter_density >= 0.0, "densities");
}

bool SceneSpec::set(const std::string& key, const std::string& value) {
  struct Field {
    const char* name;
    double SceneSpec::*member;
  };
  static const Field fields[] = {
      {"length_min", &SceneSpec::length_min},
      {"length_max", &SceneSpec::length_max},
      {"width_min", &SceneSpec::width_min},
      {"width_max", &SceneSpec::width_max},
      {"height_min", &SceneSpec::height_min},
      {"height_max", &SceneSpec::height_max},
      {"yaw_min", &SceneSpec::yaw_min},
      {"yaw_max", &SceneSpec::yaw_max},
      {"range_min", &SceneSpec::range_min},
      {"range_max", &SceneSpec::range_max},
      {"occlusion_fraction", &SceneSpec::occlusion_fraction},
      {"truncation_fraction", &SceneSpec::truncation_fraction},
      {"noise_sigma", &SceneSpec::noise_sigma},
      {"surface_density", &SceneSpec::surface_density},
      {"ground_density", &SceneSpec::ground_density},
      {"clutter_density", &SceneSpec::clutter_density},
  };
  if (key == "min_objects") {
    min_objects = parse_count(key, value);
    return true;
  }
  if (key == "max_objects") {
    max_objects = parse_count(key, value);
    return true;
  }
  for (const auto& f : fields) {
    if (key == f.name) {
      this->*f.member = parse_double(key, value);
      return true;
    }
  }
  return false;
}

KeyValues SceneSpec::to_key_values() const {
  return {{"min_objects", std::to_string(min_objects)},
          {"max_objects", std::to_string(max_objects)},
          {"length_min", format_double(length_min)},
          {"length_max", format_double(length_max)},
          {"width_min", format_double(width_min)},
          {"width_max", format_double(width_max)},
          {"height_min", format_double(height_min)},
          {"height_max", format_double(height_max)},
          {"yaw_min", format_double(yaw_min)},
          {"yaw_max", format_double(yaw_max)},
          {"range_min", format_double(range_min)},
          {"range_max", format_double(range_max)},
          {"occlusion_fraction", format_double(occlusion_fraction)},
          {"truncation_fraction", format_double(truncation_fraction)},
          {"noise_sigma", format_double(noise_sigma)},
          {"surface_density", format_double(surface_density)},
          {"ground_density", format_double(ground_density)},
          {"clutter_density", format_double(clutter_density)}};
}

Scene generate_synthetic_scene(const SceneSpec& spec, Rng& rng) {
  spec.validate();
  Scene scene;
  scene.calib = synthetic_calib();
  const auto& calib = scene.calib;
  const double fx = calib.P[0], cx = calib.P[2];

  std::uniform_int_distribution<std::size_t> count_dist(spec.min_objects, spec.max_objects);
  const std::size_t n_objects = count_dist(rng);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);

  for (std::size_t k = 0; k < n_objects; ++k) {
    for (int attempt = 0; attempt < kMaxPlacementTries; ++attempt) {
      const bool truncated = uniform(rng, 0.0, 1.0) < spec.truncation_fraction;
      geom::Box3D raw;
      raw.length = uniform(rng, spec.length_min, spec.length_max);
      raw.width = uniform(rng, spec.width_min, spec.width_max);
      raw.height = uniform(rng, spec.height_min, spec.height_max);
      raw.yaw = geom::wrap_angle(uniform(rng, spec.yaw_min, spec.yaw_max));
      raw.cx = uniform(rng, spec.range_min, spec.range_max);
      double u_center;
      if (truncated) {
        const double edge = uniform(rng, -0.04, 0.06) * kImageWidth;
        u_center = uniform(rng, 0.0, 1.0) < 0.5 ? edge : kImageWidth - edge;
      } else {
        u_center = uniform(rng, 0.1, 0.9) * kImageWidth;
      }
      raw.cy = -(u_center - cx) / fx * raw.cx;
      raw.cz = -kSensorHeight + raw.height / 2;

      SceneObject obj;
      obj.truncated = truncated;
      obj.label.type = "Car";
      set_label_box(obj.label, raw, calib);
      obj.label = quantize_label(obj.label);
      obj.box = label_to_lidar_box(obj.label, calib);

      const auto [full, clipped] = image_box(obj.box, calib);
      if (!clipped.valid() || area(clipped) < 0.3 * area(full)) continue;
      geom::Box3D inflated = obj.box;
      inflated.width += 1.0;
      inflated.length += 1.0;
      const bool overlaps = std::any_of(scene.objects.begin(), scene.objects.end(), [&](const auto& o) {
        geom::Box3D other = o.box;
        other.width += 1.0;
        other.length += 1.0;
        return geom::iou_3d(inflated, other) > 0.0;
      });
      if (overlaps) continue;
      obj.label.box2d = clipped;
      obj.label.truncation = std::clamp(1.0 - area(clipped) / area(full), 0.0, 1.0);

      auto pts = visible_surface(obj.box, spec, rng);
      if (spec.noise_sigma > 0.0) {
        for (auto& p : pts) {
          p.x += noise(rng);
          p.y += noise(rng);
          p.z += noise(rng);
        }
      }
      // Occlusion: drop a contiguous run in azimuth from one side.
      obj.occluded_share = uniform(rng, 0.0, 1.0) * spec.occlusion_fraction;
      std::sort(pts.begin(), pts.end(), [](const geom::Point3& a, const geom::Point3& b) {
        return std::atan2(a.y, a.x) < std::atan2(b.y, b.x);
      });
      const auto drop = static_cast<std::size_t>(obj.occluded_share * static_cast<double>(pts.size()));
      if (uniform(rng, 0.0, 1.0) < 0.5) {
        pts.erase(pts.begin(), pts.begin() + static_cast<std::ptrdiff_t>(drop));
      } else {
        pts.resize(pts.size() - drop);
      }
      obj.label.occlusion = obj.occluded_share < 0.15 ? 0 : (obj.occluded_share < 0.4 ? 1 : 2);
      obj.label = quantize_label(obj.label);

      const std::size_t owner = scene.objects.size();
      for (const auto& p : pts) {
        const geom::Point2 px = geom::project_point(p, calib);
        if (!clipped.contains(px.x, px.y)) continue;
        scene.cloud.push_back({p, uniform(rng, 0.0, 1.0)});
        scene.owner.push_back(owner);
        ++obj.n_points;
      }
      scene.objects.push_back(std::move(obj));
      break;
    }
  }

  // Ground plane and free-standing clutter, kept clear of the objects.
  const double x_max = spec.range_max + 5.0;
  const double y_half = 0.9 * x_max;
  const double ground_area = x_max * 2.0 * y_half;
  const std::size_t n_ground = draw_count(spec.ground_density * ground_area, rng);
  const std::size_t n_clutter = draw_count(spec.clutter_density * ground_area, rng);
  auto near_object = [&](const geom::Point3& p) {
    return std::any_of(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& o) {
      return inside_footprint(o.box, p.x, p.y, 0.3) && p.z < o.box.cz + o.box.height / 2 + 0.3;
    });
  };
  for (std::size_t i = 0; i < n_ground + n_clutter; ++i) {
    geom::Point3 p{uniform(rng, 0.0, x_max), uniform(rng, -y_half, y_half), -kSensorHeight};
    if (i >= n_ground) p.z = uniform(rng, -kSensorHeight, 1.0);
    if (spec.noise_sigma > 0.0) p.z += noise(rng);
    const double intensity = uniform(rng, 0.0, 1.0);
    if (near_object(p)) continue;
    scene.cloud.push_back({p, intensity});
    scene.owner.push_back(kBackground);
  }
  return scene;
}

}  // namespace cat::data
