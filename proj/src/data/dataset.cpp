#include "cat/data/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "cat/common/error.hpp"

namespace cat::data {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSceneStream = 0x5343454e;  // "SCEN"

}  // namespace

fs::path velodyne_path(const fs::path& root, const std::string& id) {
  return root / "training" / "velodyne" / (id + ".bin");
}
fs::path label_path(const fs::path& root, const std::string& id) {
  return root / "training" / "label_2" / (id + ".txt");
}
fs::path calib_path(const fs::path& root, const std::string& id) {
  return root / "training" / "calib" / (id + ".txt");
}
fs::path manifest_path(const fs::path& root) { return root / "manifest.txt"; }

std::string frame_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

std::vector<ManifestEntry> read_manifest(const fs::path& root) {
  std::istringstream in(read_text_file(manifest_path(root)));
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string extra;
    if (!(ls >> e.split)) continue;
    if (!(ls >> e.frame_id) || (ls >> extra)) {
      throw Error(ErrorKind::FieldCount, manifest_path(root).string() + " line " +
                                             std::to_string(lineno) + ": expected '<split> <id>'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const fs::path& root, const std::vector<ManifestEntry>& entries) {
  std::string text;
  for (const auto& e : entries) text += e.split + " " + e.frame_id + "\n";
  write_text_file(manifest_path(root), text);
}

std::vector<ManifestEntry> write_synthetic_dataset(const fs::path& root, const SceneSpec& spec,
                                                   std::size_t n_scenes, double val_fraction,
                                                   std::uint64_t seed) {
  spec.validate();
  if (!(val_fraction >= 0.0 && val_fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "val_fraction must lie in [0, 1]");
  }
  for (const char* sub : {"velodyne", "label_2", "calib"}) {
    std::error_code ec;
    fs::create_directories(root / "training" / sub, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + (root / "training" / sub).string());
  }
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n_scenes)));
  std::vector<ManifestEntry> manifest;
  for (std::size_t i = 0; i < n_scenes; ++i) {
    Rng rng = derive_rng(seed, {kSceneStream, i});
    const Scene scene = generate_synthetic_scene(spec, rng);
    const std::string id = frame_name(i);
    std::vector<KittiObject> labels;
    for (const auto& o : scene.objects) labels.push_back(o.label);
    write_point_cloud(velodyne_path(root, id), scene.cloud);
    write_text_file(label_path(root, id), serialize_kitti_label(labels));
    write_text_file(calib_path(root, id), serialize_kitti_calib(scene.calib));
    manifest.push_back({i + n_val >= n_scenes ? "val" : "train", id});
  }
  write_manifest(root, manifest);
  return manifest;
}

Frame load_frame(const fs::path& root, const std::string& frame_id) {
  Frame f;
  f.frame_id = frame_id;
  auto wrap = [&](const fs::path& path, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      throw Error(e.kind(), path.string() + ": " + e.what());
    }
  };
  const auto cp = calib_path(root, frame_id), lp = label_path(root, frame_id);
  const std::string calib_text = read_text_file(cp), label_text = read_text_file(lp);
  wrap(cp, [&] { f.calib = parse_kitti_calib(calib_text); });
  wrap(lp, [&] { f.labels = parse_kitti_label(label_text); });
  f.cloud = read_point_cloud(velodyne_path(root, frame_id));
  return f;
}

FrustumDataset load_frustum_dataset(const fs::path& root, const std::string& split,
                                    std::size_t n_points, std::uint64_t seed) {
  FrustumDataset ds;
  for (const auto& e : read_manifest(root)) {
    if (split != "all" && e.split != split) continue;
    Frame f;
    try {
      f = load_frame(root, e.frame_id);
    } catch (const Error& err) {
      ds.log.push_back("skipped frame " + e.frame_id + ": " + err.what());
      continue;
    }
    auto samples = build_frame_samples(f.frame_id, f.cloud, f.labels, f.calib, n_points, seed);
    for (auto& s : samples) ds.samples.push_back(std::move(s));
  }
  return ds;
}

LintReport lint_dataset(const fs::path& root) {
  LintReport r;
  for (const auto& e : read_manifest(root)) {
    const Frame f = load_frame(root, e.frame_id);
    ++r.frames;
    r.objects += f.labels.size();
    r.points += f.cloud.size();
  }
  return r;
}

}  // namespace cat::data
