#include "cat/training/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cat/common/error.hpp"
#include "cat/geometry/geometry.hpp"
#include "cat/tensor/checkpoint.hpp"
#include "json.hpp"

namespace cat::training {

namespace fs = std::filesystem;
using data::FrustumSample;
using tensor::Tensor;

namespace {

constexpr std::uint64_t kInitStream = 0x494e4954;     // "INIT"
constexpr std::uint64_t kShuffleStream = 0x53485546;  // "SHUF"
constexpr std::uint64_t kAugmentStream = 0x41554721;  // "AUG!"

std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (const auto& id : ids) s += (s.empty() ? "" : ", ") + id;
  return s;
}

void write_metrics(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

// Metrics lines of an earlier run with step < `before`.
std::vector<std::string> earlier_metrics(const fs::path& path, std::uint64_t before) {
  std::vector<std::string> keep;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("step")) {
      throw Error(ErrorKind::Io, path.string() + ": unreadable metrics line");
    }
    if (j["step"].get<std::uint64_t>() < before) keep.push_back(line);
  }
  return keep;
}

}  // namespace

TrainConfig TrainConfig::large() {
  TrainConfig c;
  c.batch_size = 24;
  c.epochs = 1000;
  return c;
}

void TrainConfig::validate(const model::ModelConfig& model) const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw Error(ErrorKind::InvalidConfig, msg);
  };
  require(batch_size >= 1, "batch_size must be positive");
  require(!model.use_global || batch_size >= 2, "use_global needs batch_size >= 2");
  require(epochs >= 1, "epochs must be positive");
  require(lr_max > 0.0 && lr_min >= 0.0 && lr_min <= lr_max, "need 0 <= lr_min <= lr_max, lr_max > 0");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(box_weight >= 0.0, "box_weight must be non-negative");
  require(shift >= 0.0, "shift must be non-negative");
  require(scale_min > 0.0 && scale_min <= scale_max, "need 0 < scale_min <= scale_max");
  require(flip_prob >= 0.0 && flip_prob <= 1.0, "flip_prob must lie in [0, 1]");
}

bool TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "batch_size") batch_size = parse_count(key, value);
  else if (key == "epochs") epochs = parse_count(key, value);
  else if (key == "lr_max") lr_max = parse_double(key, value);
  else if (key == "lr_min") lr_min = parse_double(key, value);
  else if (key == "weight_decay") weight_decay = parse_double(key, value);
  else if (key == "box_weight") box_weight = parse_double(key, value);
  else if (key == "seed") seed = parse_u64(key, value);
  else if (key == "augment") augment = parse_bool(key, value);
  else if (key == "shift") shift = parse_double(key, value);
  else if (key == "scale_min") scale_min = parse_double(key, value);
  else if (key == "scale_max") scale_max = parse_double(key, value);
  else if (key == "flip_prob") flip_prob = parse_double(key, value);
  else if (key == "checkpoint_every") checkpoint_every = parse_count(key, value);
  else return false;
  return true;
}

KeyValues TrainConfig::to_key_values() const {
  return {{"batch_size", std::to_string(batch_size)},
          {"epochs", std::to_string(epochs)},
          {"lr_max", format_double(lr_max)},
          {"lr_min", format_double(lr_min)},
          {"weight_decay", format_double(weight_decay)},
          {"box_weight", format_double(box_weight)},
          {"seed", std::to_string(seed)},
          {"augment", augment ? "true" : "false"},
          {"shift", format_double(shift)},
          {"scale_min", format_double(scale_min)},
          {"scale_max", format_double(scale_max)},
          {"flip_prob", format_double(flip_prob)},
          {"checkpoint_every", std::to_string(checkpoint_every)}};
}

std::string run_config_text(const model::ModelConfig& model, const TrainConfig& train) {
  std::string out = model.to_text();
  for (const auto& [k, v] : train.to_key_values()) out += "train." + k + " = " + v + "\n";
  return out;
}

Augmentation draw_augmentation(const TrainConfig& config, Rng& rng) {
  Augmentation a;
  a.dx = uniform(rng, -1.0, 1.0) * config.shift;
  a.dy = uniform(rng, -1.0, 1.0) * config.shift;
  a.dz = uniform(rng, -1.0, 1.0) * config.shift;
  a.scale = config.scale_min + uniform(rng, 0.0, 1.0) * (config.scale_max - config.scale_min);
  a.flip = uniform(rng, 0.0, 1.0) < config.flip_prob;
  return a;
}

FrustumSample apply_augmentation(FrustumSample s, const Augmentation& a) {
  // Flip across the x-z plane, then scale about the origin, then shift.
  for (auto& p : s.points) {
    if (a.flip) p.y = -p.y;
    p = {p.x * a.scale + a.dx, p.y * a.scale + a.dy, p.z * a.scale + a.dz};
  }
  if (s.gt_box) {
    auto& b = *s.gt_box;
    if (a.flip) {
      b.cy = -b.cy;
      b.yaw = geom::wrap_angle(-b.yaw);
    }
    b.cx = b.cx * a.scale + a.dx;
    b.cy = b.cy * a.scale + a.dy;
    b.cz = b.cz * a.scale + a.dz;
    b.width *= a.scale;
    b.length *= a.scale;
    b.height *= a.scale;
  }
  return s;
}

FrustumSample augment(FrustumSample sample, const TrainConfig& config, Rng& rng) {
  if (!sample.normalized) {
    throw Error(ErrorKind::InvalidConfig, "sample " + sample.object_id + " is not normalized");
  }
  return apply_augmentation(std::move(sample), draw_augmentation(config, rng));
}

Batch make_batch(std::span<const FrustumSample> samples, std::size_t n_points) {
  if (samples.empty()) throw Error(ErrorKind::EmptySet, "empty batch");
  Batch b;
  std::vector<double> values;
  values.reserve(samples.size() * n_points * 3);
  for (const auto& s : samples) {
    if (!s.normalized || !s.gt_box || s.points.size() != n_points) {
      throw Error(ErrorKind::ShapeMismatch,
                  "sample " + s.object_id + " needs " + std::to_string(n_points) +
                      " normalized points and a ground-truth box");
    }
    for (const auto& p : s.points) values.insert(values.end(), {p.x, p.y, p.z});
    b.gt.push_back(*s.gt_box);
    b.ids.push_back(s.object_id);
  }
  b.points = Tensor::from({samples.size(), n_points, 3}, std::move(values));
  return b;
}

model::CatModel make_model(const model::ModelConfig& config, std::uint64_t seed) {
  Rng rng = derive_rng(seed, {kInitStream});
  return model::CatModel(config, rng);
}

objective::LossBreakdown train_step(model::CatModel& model, const Batch& batch,
                                    tensor::OptimizerState& optimizer, double lr,
                                    double box_weight) {
  auto& params = model.parameters();
  tensor::zero_grads(params);
  objective::LossBreakdown loss;
  try {
    const auto out = model.forward(batch.points);
    std::vector<std::string> bad;
    const auto boxes = out.boxes.data(), logits = out.direction_logits.data();
    for (std::size_t i = 0; i < batch.ids.size(); ++i) {
      bool finite = std::isfinite(logits[2 * i]) && std::isfinite(logits[2 * i + 1]);
      for (std::size_t k = 0; k < 7; ++k) finite = finite && std::isfinite(boxes[7 * i + k]);
      if (!finite) bad.push_back(batch.ids[i]);
    }
    if (!bad.empty()) {
      throw Error(ErrorKind::NonFiniteLoss, "non-finite predictions (samples: " + join_ids(bad) + ")");
    }
    loss = objective::total_loss(out.boxes, out.direction_logits, batch.gt, box_weight);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NonFiniteLoss && e.kind() != ErrorKind::InvalidBox) throw;
    throw Error(ErrorKind::NonFiniteLoss,
                std::string(e.what()) + " (samples: " + join_ids(batch.ids) + ")");
  }
  if (!std::isfinite(loss.total_value)) {
    throw Error(ErrorKind::NonFiniteLoss,
                "loss is not finite (samples: " + join_ids(batch.ids) + ")");
  }
  loss.total.backward();
  tensor::adam_step(params, optimizer, lr);
  return loss;
}

std::string metrics_line(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["epoch"] = m.epoch;
  j["lr"] = m.lr;
  j["box_loss"] = m.box_loss;
  j["dir_loss"] = m.dir_loss;
  j["total"] = m.total;
  j["mean_iou"] = m.mean_iou;
  return j.dump();
}

std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size, bool use_global) {
  return use_global ? n / batch_size : (n + batch_size - 1) / batch_size;
}

TrainResult train(model::CatModel& model, std::span<const FrustumSample> dataset,
                  const TrainConfig& config, const TrainOptions& options) {
  const auto& mc = model.config();
  config.validate(mc);
  const std::size_t spe = steps_per_epoch(dataset.size(), config.batch_size, mc.use_global);
  if (spe == 0) {
    throw Error(ErrorKind::EmptySet, "dataset of " + std::to_string(dataset.size()) +
                                         " samples is smaller than one batch of " +
                                         std::to_string(config.batch_size));
  }
  TrainResult result;
  result.total_steps = spe * config.epochs;
  const std::string config_text = run_config_text(mc, config);

  auto optimizer = tensor::make_optimizer(model.parameters(), config.lr_max, config.weight_decay);
  if (!options.resume_from.empty()) {
    const auto ckpt = tensor::read_checkpoint(options.resume_from);
    if (ckpt.config_text != config_text) {
      throw Error(ErrorKind::CheckpointMismatch,
                  options.resume_from.string() + " was written under a different config");
    }
    tensor::load_parameters(ckpt, model.parameters());
    if (!ckpt.optimizer) {
      throw Error(ErrorKind::CheckpointMismatch,
                  options.resume_from.string() + " has no optimizer state");
    }
    optimizer = *ckpt.optimizer;
  }
  std::uint64_t step = optimizer.step;

  const bool on_disk = !options.out_dir.empty();
  const fs::path metrics_path = options.out_dir / "metrics.jsonl";
  std::vector<std::string> lines;
  if (on_disk) {
    fs::create_directories(options.out_dir);
    if (step > 0) lines = earlier_metrics(metrics_path, step);
  }
  auto save = [&](const fs::path& path) {
    tensor::save_checkpoint(path, config_text, model.parameters(), &optimizer);
  };

  const std::uint64_t stop =
      options.stop_after ? std::min<std::uint64_t>(options.stop_after, result.total_steps)
                         : result.total_steps;
  std::vector<std::size_t> order(dataset.size());
  std::size_t order_epoch = static_cast<std::size_t>(-1);
  std::vector<FrustumSample> members;
  while (step < stop) {
    const std::size_t epoch = step / spe, slot = step % spe;
    if (epoch != order_epoch) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng rng = derive_rng(config.seed, {kShuffleStream, epoch});
      // Explicit Fisher-Yates so the order does not depend on the library.
      for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
      }
      order_epoch = epoch;
    }
    const std::size_t begin = slot * config.batch_size;
    const std::size_t end = std::min(begin + config.batch_size, dataset.size());
    members.clear();
    for (std::size_t k = begin; k < end; ++k) {
      FrustumSample s = dataset[order[k]];
      if (config.augment) {
        Rng rng = derive_rng(config.seed, {kAugmentStream, step, k - begin});
        s = augment(std::move(s), config, rng);
      }
      members.push_back(std::move(s));
    }
    const Batch batch = make_batch(members, mc.n_points);
    const double lr = tensor::cosine_lr(step, result.total_steps - 1, config.lr_max, config.lr_min);
    const auto loss = train_step(model, batch, optimizer, lr, config.box_weight);

    StepMetrics m;
    m.step = step;
    m.epoch = epoch;
    m.lr = lr;
    m.box_loss = loss.box_loss;
    m.dir_loss = loss.dir_loss;
    m.total = loss.total_value;
    for (double v : loss.ious) m.mean_iou += v;
    m.mean_iou /= static_cast<double>(loss.ious.size());
    result.history.push_back(m);
    if (options.on_step) options.on_step(m);
    ++step;
    if (on_disk) {
      lines.push_back(metrics_line(m));
      if (config.checkpoint_every && step % config.checkpoint_every == 0 && step < result.total_steps) {
        save(options.out_dir / ("step_" + std::to_string(step) + ".ckpt"));
      }
    }
  }
  result.steps_done = step;
  if (on_disk) {
    write_metrics(metrics_path, lines);
    result.checkpoint =
        options.out_dir / (step == result.total_steps ? std::string("final.ckpt")
                                                      : "step_" + std::to_string(step) + ".ckpt");
    save(result.checkpoint);
  }
  return result;
}

std::vector<Prediction> predict(const model::CatModel& model, std::span<const FrustumSample> samples,
                                std::size_t batch_size) {
  if (batch_size == 0) throw Error(ErrorKind::InvalidConfig, "batch_size must be positive");
  const std::size_t n_points = model.config().n_points;
  tensor::NoGradGuard guard;
  std::vector<Prediction> out;
  for (std::size_t begin = 0; begin < samples.size(); begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, samples.size());
    std::vector<double> values;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& s = samples[i];
      if (!s.normalized || s.points.size() != n_points) {
        throw Error(ErrorKind::ShapeMismatch, "sample " + s.object_id + " needs " +
                                                  std::to_string(n_points) + " normalized points");
      }
      for (const auto& p : s.points) values.insert(values.end(), {p.x, p.y, p.z});
    }
    const auto fw =
        model.forward(Tensor::from({end - begin, n_points, 3}, std::move(values)));
    const auto boxes = fw.boxes.data();
    const auto logits = fw.direction_logits.data();
    for (std::size_t i = begin; i < end; ++i) {
      const double* raw = boxes.data() + (i - begin) * 7;
      const double* lg = logits.data() + (i - begin) * 2;
      Prediction p;
      p.object_id = samples[i].object_id;
      p.box = model::decode_prediction(raw, lg, samples[i].centroid);
      p.raw_box = model::decode_prediction(raw, lg, {});
      p.direction = lg[1] > lg[0] ? 1 : 0;
      const double hi = std::max(lg[0], lg[1]), lo = std::min(lg[0], lg[1]);
      p.score = 1.0 / (1.0 + std::exp(lo - hi));
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace cat::training
