#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cat/data/frustum.hpp"
#include "cat/data/kitti.hpp"
#include "cat/data/synthetic.hpp"

namespace cat::data {

// Layout under a dataset root, as in the KITTI object benchmark:
//   training/velodyne/<id>.bin, training/label_2/<id>.txt, training/calib/<id>.txt
//   manifest.txt with one "<split> <id>" line per frame.
std::filesystem::path velodyne_path(const std::filesystem::path& root, const std::string& frame_id);
std::filesystem::path label_path(const std::filesystem::path& root, const std::string& frame_id);
std::filesystem::path calib_path(const std::filesystem::path& root, const std::string& frame_id);
std::filesystem::path manifest_path(const std::filesystem::path& root);

std::string frame_name(std::size_t index);  // six digits

struct ManifestEntry {
  std::string split;
  std::string frame_id;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& root);
void write_manifest(const std::filesystem::path& root, const std::vector<ManifestEntry>& entries);

// Writes `n_scenes` synthetic frames. Scene i draws from
// derive_rng(seed, scene, i); the last `val_fraction` of frames form the
// "val" split, the rest "train".
std::vector<ManifestEntry> write_synthetic_dataset(const std::filesystem::path& root,
                                                   const SceneSpec& spec, std::size_t n_scenes,
                                                   double val_fraction, std::uint64_t seed);

struct Frame {
  std::string frame_id;
  geom::ProjectionModel calib;
  std::vector<KittiObject> labels;
  std::vector<LidarPoint> cloud;
};

Frame load_frame(const std::filesystem::path& root, const std::string& frame_id);

struct FrustumDataset {
  std::vector<FrustumSample> samples;
  std::vector<std::string> log;  // skipped frames
};

// Frustum samples of every frame in `split` ("all" for every manifest
// entry). Frames whose files fail to load are skipped and logged.
FrustumDataset load_frustum_dataset(const std::filesystem::path& root, const std::string& split,
                                    std::size_t n_points, std::uint64_t seed);

struct LintReport {
  std::size_t frames = 0;
  std::size_t objects = 0;
  std::size_t points = 0;
};

// Parses every file the manifest references; throws on the first failure.
LintReport lint_dataset(const std::filesystem::path& root);

}  // namespace cat::data
