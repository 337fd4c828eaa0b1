#include "cat/data/kitti.hpp"

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cat/common/config.hpp"
#include "cat/common/error.hpp"
#include "cat/geometry/geometry.hpp"

namespace cat::data {

static_assert(std::endian::native == std::endian::little,
              "point cloud IO assumes a little-endian host");

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

double number(const std::string& tok, const std::string& what, std::size_t lineno) {
  try {
    return parse_double(what, tok);
  } catch (const Error&) {
    throw Error(ErrorKind::MalformedNumber, "line " + std::to_string(lineno) + ": '" + tok +
                                                "' in " + what + " is not a number");
  }
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

double round2(double v) { return std::strtod(fixed2(v).c_str(), nullptr); }

// Rotation part of R0 * Tr (LiDAR -> rectified camera).
Eigen::Matrix3d lidar_to_cam_rotation(const geom::ProjectionModel& c) {
  Eigen::Matrix3d r0, tr;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      r0(i, j) = c.R0[i * 3 + j];
      tr(i, j) = c.Tr[i * 4 + j];
    }
  return r0 * tr;
}

}  // namespace

geom::ProjectionModel parse_kitti_calib(const std::string& text) {
  geom::ProjectionModel c;
  bool have_p2 = false, have_r0 = false, have_tr = false;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon);
    const auto toks = split_ws(line.substr(colon + 1));
    auto fill = [&](double* dst, std::size_t n) {
      if (toks.size() != n) {
        throw Error(ErrorKind::FieldCount, "line " + std::to_string(lineno) + ": " + key +
                                               " has " + std::to_string(toks.size()) +
                                               " values, expected " + std::to_string(n));
      }
      for (std::size_t i = 0; i < n; ++i) dst[i] = number(toks[i], key, lineno);
    };
    if (key == "P2") {
      fill(c.P.data(), 12);
      have_p2 = true;
    } else if (key == "R0_rect") {
      fill(c.R0.data(), 9);
      have_r0 = true;
    } else if (key == "Tr_velo_to_cam") {
      fill(c.Tr.data(), 12);
      have_tr = true;
    }
  }
  if (!have_p2) throw Error(ErrorKind::MissingKey, "calibration lacks P2");
  if (!have_r0) throw Error(ErrorKind::MissingKey, "calibration lacks R0_rect");
  if (!have_tr) throw Error(ErrorKind::MissingKey, "calibration lacks Tr_velo_to_cam");
  return c;
}

std::string serialize_kitti_calib(const geom::ProjectionModel& calib) {
  auto row = [](const std::string& key, const double* v, std::size_t n) {
    std::string s = key + ":";
    for (std::size_t i = 0; i < n; ++i) s += " " + format_double(v[i]);
    return s + "\n";
  };
  const double imu[12] = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  std::string out;
  for (const char* p : {"P0", "P1", "P2", "P3"}) out += row(p, calib.P.data(), 12);
  out += row("R0_rect", calib.R0.data(), 9);
  out += row("Tr_velo_to_cam", calib.Tr.data(), 12);
  out += row("Tr_imu_to_velo", imu, 12);
  return out;
}

std::vector<KittiObject> parse_kitti_label(const std::string& text) {
  std::vector<KittiObject> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = split_ws(line);
    if (t.empty()) continue;
    if (t.size() != 15 && t.size() != 16) {
      throw Error(ErrorKind::FieldCount, "line " + std::to_string(lineno) + " has " +
                                             std::to_string(t.size()) + " fields, expected 15 or 16");
    }
    KittiObject o;
    o.type = t[0];
    auto num = [&](std::size_t i, const char* what) { return number(t[i], what, lineno); };
    o.truncation = num(1, "truncation");
    o.occlusion = static_cast<int>(num(2, "occlusion"));
    o.alpha = num(3, "alpha");
    o.box2d = {num(4, "bbox"), num(5, "bbox"), num(6, "bbox"), num(7, "bbox")};
    o.h = num(8, "dimensions");
    o.w = num(9, "dimensions");
    o.l = num(10, "dimensions");
    o.x = num(11, "location");
    o.y = num(12, "location");
    o.z = num(13, "location");
    o.ry = num(14, "rotation_y");
    if (t.size() == 16) o.score = num(15, "score");
    out.push_back(std::move(o));
  }
  return out;
}

std::string serialize_kitti_label(std::span<const KittiObject> objects) {
  std::string out;
  for (const auto& o : objects) {
    out += o.type + " " + fixed2(o.truncation) + " " + std::to_string(o.occlusion) + " " +
           fixed2(o.alpha) + " " + fixed2(o.box2d.u_min) + " " + fixed2(o.box2d.v_min) + " " +
           fixed2(o.box2d.u_max) + " " + fixed2(o.box2d.v_max) + " " + fixed2(o.h) + " " +
           fixed2(o.w) + " " + fixed2(o.l) + " " + fixed2(o.x) + " " + fixed2(o.y) + " " +
           fixed2(o.z) + " " + fixed2(o.ry);
    if (o.score) out += " " + fixed2(*o.score);
    out += "\n";
  }
  return out;
}

KittiObject quantize_label(const KittiObject& obj) {
  KittiObject q = obj;
  for (double* v : {&q.truncation, &q.alpha, &q.box2d.u_min, &q.box2d.v_min, &q.box2d.u_max,
                    &q.box2d.v_max, &q.h, &q.w, &q.l, &q.x, &q.y, &q.z, &q.ry}) {
    *v = round2(*v);
  }
  if (q.score) q.score = round2(*q.score);
  return q;
}

geom::Box3D label_to_lidar_box(const KittiObject& obj, const geom::ProjectionModel& calib) {
  // Camera y points down, so the center sits h/2 above the bottom face.
  const geom::Point3 center_cam{obj.x, obj.y - obj.h / 2.0, obj.z};
  const geom::Point3 c = geom::camera_to_lidar(center_cam, calib);
  // Heading (object length axis) in the camera frame, carried into LiDAR.
  const Eigen::Vector3d heading_cam(std::cos(obj.ry), 0.0, -std::sin(obj.ry));
  const Eigen::Vector3d h = lidar_to_cam_rotation(calib).inverse() * heading_cam;
  geom::Box3D b;
  b.cx = c.x;
  b.cy = c.y;
  b.cz = c.z;
  b.width = obj.w;
  b.length = obj.l;
  b.height = obj.h;
  b.yaw = geom::wrap_angle(std::atan2(-h.x(), h.y()));
  return b;
}

void set_label_box(KittiObject& obj, const geom::Box3D& box, const geom::ProjectionModel& calib) {
  const geom::Point3 c = geom::lidar_to_camera(box.center(), calib);
  obj.h = box.height;
  obj.w = box.width;
  obj.l = box.length;
  obj.x = c.x;
  obj.y = c.y + box.height / 2.0;
  obj.z = c.z;
  const Eigen::Vector3d heading(-std::sin(box.yaw), std::cos(box.yaw), 0.0);
  const Eigen::Vector3d h = lidar_to_cam_rotation(calib) * heading;
  obj.ry = geom::wrap_angle(std::atan2(-h.z(), h.x()));
  obj.alpha = geom::wrap_angle(obj.ry - std::atan2(obj.x, obj.z));
}

std::vector<LidarPoint> load_point_cloud(std::span<const std::byte> bytes) {
  constexpr std::size_t kRecord = 4 * sizeof(float);
  if (bytes.size() % kRecord != 0) {
    throw Error(ErrorKind::TruncatedFile,
                "point cloud of " + std::to_string(bytes.size()) + " bytes ends mid-record at byte " +
                    std::to_string(bytes.size() - bytes.size() % kRecord));
  }
  std::vector<LidarPoint> out(bytes.size() / kRecord);
  for (std::size_t i = 0; i < out.size(); ++i) {
    float f[4];
    std::memcpy(f, bytes.data() + i * kRecord, kRecord);
    out[i] = {{f[0], f[1], f[2]}, f[3]};
  }
  return out;
}

std::vector<std::byte> serialize_point_cloud(std::span<const LidarPoint> points) {
  std::vector<std::byte> out(points.size() * 4 * sizeof(float));
  for (std::size_t i = 0; i < points.size(); ++i) {
    const float f[4] = {static_cast<float>(points[i].p.x), static_cast<float>(points[i].p.y),
                        static_cast<float>(points[i].p.z), static_cast<float>(points[i].intensity)};
    std::memcpy(out.data() + i * sizeof f, f, sizeof f);
  }
  return out;
}

std::vector<LidarPoint> read_point_cloud(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open point cloud " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return load_point_cloud(std::as_bytes(std::span<const char>(raw)));
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void write_point_cloud(const std::filesystem::path& path, std::span<const LidarPoint> points) {
  const auto bytes = serialize_point_cloud(points);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write point cloud " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace cat::data
