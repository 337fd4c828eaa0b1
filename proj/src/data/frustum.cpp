#include "cat/data/frustum.hpp"

#include <numeric>

#include "cat/common/error.hpp"
#include "cat/geometry/geometry.hpp"

namespace cat::data {

namespace {

constexpr std::uint64_t kSampleStream = 0x53414d50;  // "SAMP"

std::uint64_t frame_key(const std::string& frame_id) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a, stable across platforms
  for (unsigned char c : frame_id) h = (h ^ c) * 1099511628211ULL;
  return h;
}

}  // namespace

std::vector<std::size_t> sample_indices(std::size_t available, std::size_t n, Rng& rng) {
  if (available == 0) throw Error(ErrorKind::EmptyCloud, "cannot sample from an empty cloud");
  std::vector<std::size_t> idx(available);
  std::iota(idx.begin(), idx.end(), 0);
  if (available >= n) {
    // Partial Fisher-Yates: the first n slots become a uniform draw.
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, available - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(n);
    return idx;
  }
  std::uniform_int_distribution<std::size_t> pick(0, available - 1);
  while (idx.size() < n) idx.push_back(pick(rng));
  return idx;
}

std::vector<geom::Point3> sample_to_fixed_size(std::span<const geom::Point3> points, std::size_t n,
                                               Rng& rng) {
  std::vector<geom::Point3> out;
  out.reserve(n);
  for (std::size_t i : sample_indices(points.size(), n, rng)) out.push_back(points[i]);
  return out;
}

FilterResult filter_samples(std::vector<FrustumSample> samples) {
  FilterResult r;
  for (auto& s : samples) {
    if (s.n_raw_points < kMinTotalPoints) {
      r.rejected.push_back({s.object_id, std::to_string(s.n_raw_points) + " frustum points < " +
                                             std::to_string(kMinTotalPoints)});
    } else if (s.n_foreground_points < kMinForegroundPoints) {
      r.rejected.push_back({s.object_id, std::to_string(s.n_foreground_points) +
                                             " foreground points < " +
                                             std::to_string(kMinForegroundPoints)});
    } else {
      r.kept.push_back(std::move(s));
    }
  }
  return r;
}

FrustumSample normalize_frustum(FrustumSample s) {
  if (s.points.empty()) throw Error(ErrorKind::EmptyCloud, "sample " + s.object_id + " has no points");
  if (s.normalized) return s;
  double sx = 0.0, sy = 0.0, sz = 0.0;
  for (const auto& p : s.points) {
    sx += p.x;
    sy += p.y;
    sz += p.z;
  }
  const double n = static_cast<double>(s.points.size());
  s.centroid = {sx / n, sy / n, sz / n};
  for (auto& p : s.points) {
    p.x -= s.centroid.x;
    p.y -= s.centroid.y;
    p.z -= s.centroid.z;
  }
  if (s.gt_box) {
    s.gt_box->cx -= s.centroid.x;
    s.gt_box->cy -= s.centroid.y;
    s.gt_box->cz -= s.centroid.z;
  }
  s.normalized = true;
  return s;
}

FrustumSample denormalize_frustum(FrustumSample s) {
  if (!s.normalized) return s;
  for (auto& p : s.points) {
    p.x += s.centroid.x;
    p.y += s.centroid.y;
    p.z += s.centroid.z;
  }
  if (s.gt_box) {
    s.gt_box->cx += s.centroid.x;
    s.gt_box->cy += s.centroid.y;
    s.gt_box->cz += s.centroid.z;
  }
  s.centroid = {};
  s.normalized = false;
  return s;
}

std::vector<FrustumSample> build_frame_samples(const std::string& frame_id,
                                               std::span<const LidarPoint> cloud,
                                               std::span<const KittiObject> labels,
                                               const geom::ProjectionModel& calib,
                                               std::size_t n_points, std::uint64_t seed) {
  std::vector<geom::Point3> xyz;
  xyz.reserve(cloud.size());
  for (const auto& p : cloud) xyz.push_back(p.p);

  std::vector<FrustumSample> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const KittiObject& obj = labels[i];
    if (obj.dont_care()) continue;
    FrustumSample s;
    s.frame_id = frame_id;
    s.object_id = frame_id + "/" + std::to_string(i);
    s.box2d = obj.box2d;
    s.calib = calib;
    if (obj.h > 0.0 && obj.w > 0.0 && obj.l > 0.0) s.gt_box = label_to_lidar_box(obj, calib);

    const auto idx = geom::frustum_indices(xyz, obj.box2d, calib);
    s.n_raw_points = idx.size();
    if (s.gt_box) {
      for (std::size_t j : idx)
        if (geom::box_contains_strict(*s.gt_box, xyz[j])) ++s.n_foreground_points;
    }
    if (!idx.empty()) {
      Rng rng = derive_rng(seed, {kSampleStream, frame_key(frame_id), i});
      for (std::size_t k : sample_indices(idx.size(), n_points, rng)) {
        s.source_index.push_back(idx[k]);
        s.points.push_back(xyz[idx[k]]);
      }
      s = normalize_frustum(std::move(s));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace cat::data
