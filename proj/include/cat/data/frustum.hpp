#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cat/common/rng.hpp"
#include "cat/data/kitti.hpp"
#include "cat/geometry/types.hpp"

namespace cat::data {

inline constexpr std::size_t kMinTotalPoints = 30;
inline constexpr std::size_t kMinForegroundPoints = 5;

struct FrustumSample {
  std::vector<geom::Point3> points;  // sampled; centroid-relative once normalized
  geom::Point3 centroid;             // offset removed by normalize_frustum
  bool normalized = false;
  geom::Box2D box2d;
  geom::ProjectionModel calib;
  std::optional<geom::Box3D> gt_box;  // same frame as `points`
  std::string frame_id;
  std::string object_id;  // "<frame_id>/<label line index>"
  std::size_t n_raw_points = 0;
  std::size_t n_foreground_points = 0;
  std::vector<std::size_t> source_index;  // per sampled point, index into the frame cloud
};

// Indices into `points` of length n: without replacement when there are
// enough points, otherwise every point once plus uniform draws for the rest.
std::vector<std::size_t> sample_indices(std::size_t available, std::size_t n, Rng& rng);
std::vector<geom::Point3> sample_to_fixed_size(std::span<const geom::Point3> points, std::size_t n,
                                               Rng& rng);

struct Rejection {
  std::string object_id;
  std::string reason;
};

struct FilterResult {
  std::vector<FrustumSample> kept;
  std::vector<Rejection> rejected;
};

// Keeps samples with at least kMinTotalPoints frustum points and
// kMinForegroundPoints inside the ground-truth box.
FilterResult filter_samples(std::vector<FrustumSample> samples);

FrustumSample normalize_frustum(FrustumSample sample);
FrustumSample denormalize_frustum(FrustumSample sample);

// Builds one sample per non-DontCare label of a frame: frustum extraction,
// counts against the label box, sampling to `n_points` and normalization.
// Sampling draws come from derive_rng(seed, frame, object), so the result
// does not depend on frame order.
std::vector<FrustumSample> build_frame_samples(const std::string& frame_id,
                                               std::span<const LidarPoint> cloud,
                                               std::span<const KittiObject> labels,
                                               const geom::ProjectionModel& calib,
                                               std::size_t n_points, std::uint64_t seed);

}  // namespace cat::data
