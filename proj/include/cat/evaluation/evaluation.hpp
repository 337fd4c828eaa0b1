#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cat/data/frustum.hpp"
#include "cat/data/kitti.hpp"
#include "cat/geometry/types.hpp"
#include "cat/model/model.hpp"
#include "cat/training/training.hpp"

namespace cat::evaluation {

inline constexpr double kRecallThreshold = 0.7;

struct LabeledBox {
  std::string id;
  geom::Box3D box;
  double score = 1.0;
};

struct ObjectRecord {
  std::string id;
  double iou = 0.0;  // direction-invariant
  bool direction_correct = false;
  double score = 0.0;
};

struct EvalReport {
  double miou = 0.0;
  double recall07 = 0.0;
  double ap11 = 0.0;
  double ap40 = 0.0;
  double direction_accuracy = 0.0;
  std::vector<ObjectRecord> objects;
};

enum class ApMode { Points11, Points40 };

// Pairs predictions with ground truth by id. Throws UnmatchedObject listing
// ids present on one side only.
std::vector<ObjectRecord> match_objects(std::span<const LabeledBox> preds,
                                        std::span<const LabeledBox> gts);

double compute_miou(std::span<const LabeledBox> preds, std::span<const LabeledBox> gts);
double compute_recall(std::span<const LabeledBox> preds, std::span<const LabeledBox> gts,
                      double threshold = kRecallThreshold);

// Interpolated average precision over the score-ranked records; a record
// is a true positive when its IoU reaches `threshold`. Throws EmptySet.
double compute_ap(std::span<const ObjectRecord> records, ApMode mode,
                  double threshold = kRecallThreshold);

// Metrics over matched records (throws EmptySet when there are none).
EvalReport make_report(std::vector<ObjectRecord> records);

// Records for model predictions on normalized samples.
std::vector<ObjectRecord> score_predictions(std::span<const training::Prediction> preds,
                                            std::span<const data::FrustumSample> samples);

// Box of a camera-frame label in a right-handed (camera x, camera z, up)
// frame, so IoU needs no calibration.
geom::Box3D label_box(const data::KittiObject& label);

// Evaluates label files of `pred_dir` against `gt_dir`. Objects pair within
// a frame by identical 2D boxes; a ground-truth object with no prediction
// scores IoU 0. Throws FrameMismatch when the frame sets differ.
EvalReport evaluate_label_dirs(const std::filesystem::path& pred_dir,
                               const std::filesystem::path& gt_dir);

std::string format_report(const EvalReport& report);
std::string report_json(const EvalReport& report);

struct AblationVariant {
  std::string name;
  bool use_global = true;
  bool use_decoder = true;
  model::PosMode pos_mode = model::PosMode::Mlp;
};

// Models A (local encoder only), B (+ global encoder), C (+ decoder),
// D (+ sine positional encoding) and the full model (MLP positional encoding).
std::vector<AblationVariant> ablation_variants();
AblationVariant find_variant(const std::string& name);
model::ModelConfig apply_variant(model::ModelConfig base, const AblationVariant& variant);

struct MetricSummary {
  double mean = 0.0;
  double spread = 0.0;  // population standard deviation across seeds
};

struct AblationRow {
  std::string name;
  std::vector<EvalReport> per_seed;
  MetricSummary miou, recall07, ap11, ap40;
};

// Trains every variant on `train_set` per seed and evaluates on `eval_set`.
std::vector<AblationRow> run_ablation(std::span<const data::FrustumSample> train_set,
                                      std::span<const data::FrustumSample> eval_set,
                                      const model::ModelConfig& base,
                                      const training::TrainConfig& train_config,
                                      std::span<const std::uint64_t> seeds);

std::string format_ablation(std::span<const AblationRow> rows);

}  // namespace cat::evaluation
