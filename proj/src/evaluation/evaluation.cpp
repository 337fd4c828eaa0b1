#include "cat/evaluation/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>

#include "cat/common/error.hpp"
#include "cat/geometry/geometry.hpp"
#include "json.hpp"

namespace cat::evaluation {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

MetricSummary summarize(const std::vector<EvalReport>& reports, double EvalReport::*field) {
  MetricSummary s;
  const double n = static_cast<double>(reports.size());
  for (const auto& r : reports) s.mean += r.*field;
  s.mean /= n;
  for (const auto& r : reports) s.spread += (r.*field - s.mean) * (r.*field - s.mean);
  s.spread = std::sqrt(s.spread / n);
  return s;
}

// Fixed order so reductions do not depend on input order.
std::vector<ObjectRecord> sorted_by_id(std::vector<ObjectRecord> records) {
  std::sort(records.begin(), records.end(),
            [](const ObjectRecord& a, const ObjectRecord& b) { return a.id < b.id; });
  return records;
}

}  // namespace

std::vector<ObjectRecord> match_objects(std::span<const LabeledBox> preds,
                                        std::span<const LabeledBox> gts) {
  std::map<std::string, const LabeledBox*> by_id;
  for (const auto& g : gts) {
    if (!by_id.emplace(g.id, &g).second) {
      throw Error(ErrorKind::UnmatchedObject, "duplicate ground-truth id " + g.id);
    }
  }
  std::vector<ObjectRecord> out;
  std::vector<std::string> unmatched;
  std::map<std::string, bool> used;
  for (const auto& p : preds) {
    const auto it = by_id.find(p.id);
    if (it == by_id.end() || used[p.id]) {
      unmatched.push_back(p.id);
      continue;
    }
    used[p.id] = true;
    const auto& g = it->second->box;
    ObjectRecord r;
    r.id = p.id;
    r.iou = geom::iou_3d_direction_invariant(p.box, g);
    r.direction_correct = std::abs(geom::wrap_angle(p.box.yaw - g.yaw)) < std::numbers::pi / 2;
    r.score = p.score;
    out.push_back(std::move(r));
  }
  for (const auto& g : gts)
    if (!used[g.id]) unmatched.push_back(g.id);
  if (!unmatched.empty()) {
    std::string ids;
    for (const auto& id : unmatched) ids += (ids.empty() ? "" : ", ") + id;
    throw Error(ErrorKind::UnmatchedObject, "unpaired objects: " + ids);
  }
  return out;
}

double compute_miou(std::span<const LabeledBox> preds, std::span<const LabeledBox> gts) {
  return make_report(match_objects(preds, gts)).miou;
}

double compute_recall(std::span<const LabeledBox> preds, std::span<const LabeledBox> gts,
                      double threshold) {
  const auto records = sorted_by_id(match_objects(preds, gts));
  if (records.empty()) throw Error(ErrorKind::EmptySet, "no objects to evaluate");
  std::size_t hits = 0;
  for (const auto& r : records) hits += r.iou >= threshold;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

double compute_ap(std::span<const ObjectRecord> records, ApMode mode, double threshold) {
  if (records.empty()) throw Error(ErrorKind::EmptySet, "no objects to rank");
  std::vector<ObjectRecord> ranked(records.begin(), records.end());
  std::sort(ranked.begin(), ranked.end(), [](const ObjectRecord& a, const ObjectRecord& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  // Every ground-truth object has one record, so the record count is the
  // number of positives.
  const double n_gt = static_cast<double>(ranked.size());
  std::vector<double> recall, precision;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    tp += ranked[i].iou >= threshold;
    recall.push_back(static_cast<double>(tp) / n_gt);
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  auto interpolated = [&](double r) {
    double best = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i)
      if (recall[i] >= r) best = std::max(best, precision[i]);
    return best;
  };
  double sum = 0.0;
  if (mode == ApMode::Points11) {
    for (int k = 0; k <= 10; ++k) sum += interpolated(k / 10.0);
    return sum / 11.0;
  }
  for (int k = 1; k <= 40; ++k) sum += interpolated(k / 40.0);
  return sum / 40.0;
}

EvalReport make_report(std::vector<ObjectRecord> records) {
  if (records.empty()) throw Error(ErrorKind::EmptySet, "no objects to evaluate");
  EvalReport r;
  r.objects = sorted_by_id(std::move(records));
  std::size_t recalled = 0, correct = 0;
  for (const auto& o : r.objects) {
    r.miou += o.iou;
    recalled += o.iou >= kRecallThreshold;
    correct += o.direction_correct;
  }
  const double n = static_cast<double>(r.objects.size());
  r.miou /= n;
  r.recall07 = static_cast<double>(recalled) / n;
  r.direction_accuracy = static_cast<double>(correct) / n;
  r.ap11 = compute_ap(r.objects, ApMode::Points11);
  r.ap40 = compute_ap(r.objects, ApMode::Points40);
  return r;
}

std::vector<ObjectRecord> score_predictions(std::span<const training::Prediction> preds,
                                            std::span<const data::FrustumSample> samples) {
  if (preds.size() != samples.size()) {
    throw Error(ErrorKind::UnmatchedObject, std::to_string(preds.size()) + " predictions for " +
                                                std::to_string(samples.size()) + " samples");
  }
  std::vector<ObjectRecord> out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& s = samples[i];
    if (preds[i].object_id != s.object_id || !s.gt_box) {
      throw Error(ErrorKind::UnmatchedObject, "no ground truth for " + preds[i].object_id);
    }
    ObjectRecord r;
    r.id = s.object_id;
    r.iou = geom::iou_3d_direction_invariant(preds[i].raw_box, *s.gt_box);
    r.direction_correct = preds[i].direction == static_cast<int>(geom::direction_label(s.gt_box->yaw));
    r.score = preds[i].score;
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_report(const EvalReport& r) {
  std::string s;
  s += "objects    " + std::to_string(r.objects.size()) + "\n";
  s += "mIoU       " + fixed(100.0 * r.miou, 2) + "\n";
  s += "Recall@0.7 " + fixed(100.0 * r.recall07, 2) + "\n";
  s += "AP11       " + fixed(100.0 * r.ap11, 2) + "\n";
  s += "AP40       " + fixed(100.0 * r.ap40, 2) + "\n";
  s += "direction  " + fixed(100.0 * r.direction_accuracy, 2) + "\n";
  return s;
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["miou"] = r.miou;
  j["recall07"] = r.recall07;
  j["ap11"] = r.ap11;
  j["ap40"] = r.ap40;
  j["direction_accuracy"] = r.direction_accuracy;
  j["objects"] = nlohmann::json::array();
  for (const auto& o : r.objects) {
    j["objects"].push_back(
        {{"id", o.id}, {"iou", o.iou}, {"direction_correct", o.direction_correct}, {"score", o.score}});
  }
  return j.dump(2) + "\n";
}

geom::Box3D label_box(const data::KittiObject& o) {
  // Right-handed frame (camera x, camera z, up); no calibration needed.
  geom::Box3D b;
  b.cx = o.x;
  b.cy = o.z;
  b.cz = -(o.y - o.h / 2.0);
  b.width = o.w;
  b.length = o.l;
  b.height = o.h;
  b.yaw = geom::wrap_angle(std::atan2(-std::cos(o.ry), -std::sin(o.ry)));
  return b;
}

EvalReport evaluate_label_dirs(const std::filesystem::path& pred_dir,
                               const std::filesystem::path& gt_dir) {
  namespace fs = std::filesystem;
  auto frames = [](const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, "not a directory: " + dir.string());
    std::set<std::string> ids;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".txt") ids.insert(e.path().stem().string());
    return ids;
  };
  const auto pred_ids = frames(pred_dir), gt_ids = frames(gt_dir);
  std::string missing;
  for (const auto& id : gt_ids)
    if (!pred_ids.count(id)) missing += (missing.empty() ? "" : ", ") + id;
  for (const auto& id : pred_ids)
    if (!gt_ids.count(id)) missing += (missing.empty() ? "" : ", ") + id;
  if (!missing.empty() || gt_ids.empty()) {
    throw Error(ErrorKind::FrameMismatch,
                gt_ids.empty() ? "no ground-truth frames in " + gt_dir.string()
                               : "frames present on one side only: " + missing);
  }
  std::vector<ObjectRecord> records;
  for (const auto& id : gt_ids) {
    const auto gts = data::parse_kitti_label(data::read_text_file(gt_dir / (id + ".txt")));
    const auto preds = data::parse_kitti_label(data::read_text_file(pred_dir / (id + ".txt")));
    std::vector<bool> used(preds.size(), false);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].dont_care()) continue;
      ObjectRecord r;
      r.id = id + "/" + std::to_string(g);
      for (std::size_t p = 0; p < preds.size(); ++p) {
        if (used[p] || !(preds[p].box2d == gts[g].box2d)) continue;
        used[p] = true;
        const auto pb = label_box(preds[p]), gb = label_box(gts[g]);
        r.iou = geom::iou_3d_direction_invariant(pb, gb);
        r.direction_correct = std::abs(geom::wrap_angle(pb.yaw - gb.yaw)) < std::numbers::pi / 2;
        r.score = preds[p].score.value_or(1.0);
        break;
      }
      // A ground-truth object without a prediction scores IoU 0.
      records.push_back(std::move(r));
    }
    for (std::size_t p = 0; p < preds.size(); ++p) {
      if (!used[p] && !preds[p].dont_care()) {
        throw Error(ErrorKind::UnmatchedObject,
                    "prediction " + id + "/" + std::to_string(p) + " has no ground-truth 2D box");
      }
    }
  }
  return make_report(std::move(records));
}

std::vector<AblationVariant> ablation_variants() {
  using model::PosMode;
  return {{"A", false, false, PosMode::None},
          {"B", true, false, PosMode::None},
          {"C", true, true, PosMode::None},
          {"D", true, true, PosMode::Sine},
          {"full", true, true, PosMode::Mlp}};
}

AblationVariant find_variant(const std::string& name) {
  for (const auto& v : ablation_variants())
    if (v.name == name) return v;
  throw Error(ErrorKind::InvalidMode, "unknown ablation '" + name + "' (expected A, B, C, D or full)");
}

model::ModelConfig apply_variant(model::ModelConfig base, const AblationVariant& v) {
  base.use_global = v.use_global;
  base.use_decoder = v.use_decoder;
  base.pos_mode = v.pos_mode;
  return base;
}

std::vector<AblationRow> run_ablation(std::span<const data::FrustumSample> train_set,
                                      std::span<const data::FrustumSample> eval_set,
                                      const model::ModelConfig& base,
                                      const training::TrainConfig& train_config,
                                      std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw Error(ErrorKind::InvalidConfig, "ablation needs at least one seed");
  std::vector<AblationRow> rows;
  for (const auto& v : ablation_variants()) {
    const auto mc = apply_variant(base, v);
    AblationRow row;
    row.name = v.name;
    for (std::uint64_t seed : seeds) {
      auto tc = train_config;
      tc.seed = seed;
      auto m = training::make_model(mc, seed);
      training::train(m, train_set, tc);
      const auto preds = training::predict(m, eval_set, tc.batch_size);
      row.per_seed.push_back(make_report(score_predictions(preds, eval_set)));
    }
    row.miou = summarize(row.per_seed, &EvalReport::miou);
    row.recall07 = summarize(row.per_seed, &EvalReport::recall07);
    row.ap11 = summarize(row.per_seed, &EvalReport::ap11);
    row.ap40 = summarize(row.per_seed, &EvalReport::ap40);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation(std::span<const AblationRow> rows) {
  auto cell = [](const MetricSummary& m) {
    return fixed(100.0 * m.mean, 2) + " +- " + fixed(100.0 * m.spread, 2);
  };
  std::string s = "model  mIoU             Recall@0.7       AP11             AP40\n";
  for (const auto& r : rows) {
    std::string name = r.name;
    name.resize(7, ' ');
    s += name + cell(r.miou) + "   " + cell(r.recall07) + "   " + cell(r.ap11) + "   " +
         cell(r.ap40) + "\n";
  }
  return s;
}

}  // namespace cat::evaluation
