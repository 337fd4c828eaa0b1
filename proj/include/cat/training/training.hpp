#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cat/common/config.hpp"
#include "cat/common/rng.hpp"
#include "cat/data/frustum.hpp"
#include "cat/model/model.hpp"
#include "cat/objective/loss.hpp"
#include "cat/tensor/optim.hpp"

namespace cat::training {

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t epochs = 10;
  double lr_max = 1e-4;
  double lr_min = 0.0;
  double weight_decay = 0.05;
  double box_weight = objective::kDefaultBoxWeight;
  std::uint64_t seed = 0;
  bool augment = true;
  double shift = 0.25;       // m, per axis
  double scale_min = 0.95;
  double scale_max = 1.05;
  double flip_prob = 0.5;
  std::size_t checkpoint_every = 0;  // steps; 0 writes only the final checkpoint

  static TrainConfig large();
  void validate(const model::ModelConfig& model) const;
  bool set(const std::string& key, const std::string& value);
  KeyValues to_key_values() const;
};

// Random shift, scale and lateral flip applied jointly to points and box.
struct Augmentation {
  double dx = 0.0, dy = 0.0, dz = 0.0;
  double scale = 1.0;
  bool flip = false;
};

Augmentation draw_augmentation(const TrainConfig& config, Rng& rng);
data::FrustumSample apply_augmentation(data::FrustumSample sample, const Augmentation& aug);
data::FrustumSample augment(data::FrustumSample sample, const TrainConfig& config, Rng& rng);

struct Batch {
  tensor::Tensor points;  // [B, N, 3]
  std::vector<geom::Box3D> gt;
  std::vector<std::string> ids;
};

// Every sample must be normalized, carry a ground-truth box and hold
// exactly n_points points.
Batch make_batch(std::span<const data::FrustumSample> samples, std::size_t n_points);

// Model weights drawn from the run seed.
model::CatModel make_model(const model::ModelConfig& config, std::uint64_t seed);

// Forward, loss, backward and one optimizer step at `lr`. Throws
// NonFiniteLoss naming the batch's samples.
objective::LossBreakdown train_step(model::CatModel& model, const Batch& batch,
                                    tensor::OptimizerState& optimizer, double lr,
                                    double box_weight);

struct StepMetrics {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double box_loss = 0.0;
  double dir_loss = 0.0;
  double total = 0.0;
  double mean_iou = 0.0;
};

std::string metrics_line(const StepMetrics& m);

std::size_t steps_per_epoch(std::size_t n_samples, std::size_t batch_size, bool use_global);

struct TrainOptions {
  std::filesystem::path out_dir;       // checkpoints and metrics.jsonl; empty keeps nothing on disk
  std::filesystem::path resume_from;   // checkpoint to continue from
  std::uint64_t stop_after = 0;        // stop once this many steps are done; 0 runs to the end
  std::function<void(const StepMetrics&)> on_step;
};

struct TrainResult {
  std::vector<StepMetrics> history;  // steps run in this call
  std::filesystem::path checkpoint;
  std::uint64_t steps_done = 0;
  std::uint64_t total_steps = 0;
};

// Shuffled epochs under the seed, per-step cosine learning rate from lr_max
// at step 0 to lr_min at the last step.
TrainResult train(model::CatModel& model, std::span<const data::FrustumSample> dataset,
                  const TrainConfig& config, const TrainOptions& options = {});

// Checkpoint text: the model config followed by the train config.
std::string run_config_text(const model::ModelConfig& model, const TrainConfig& train);

struct Prediction {
  std::string object_id;
  geom::Box3D box;        // LiDAR frame
  geom::Box3D raw_box;    // frustum frame
  double score = 0.0;     // max softmax of the direction classifier
  int direction = 0;      // 0 front, 1 back
};

// Inference in dataset order, batches of `batch_size` (the last one may be
// smaller). Samples must be normalized.
std::vector<Prediction> predict(const model::CatModel& model,
                                std::span<const data::FrustumSample> samples,
                                std::size_t batch_size);

}  // namespace cat::training
