#include "cat/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "cat/common/error.hpp"
#include "cat/data/dataset.hpp"
#include "cat/geometry/geometry.hpp"
#include "cat/tensor/checkpoint.hpp"
#include "json.hpp"

namespace cat::cli {

namespace fs = std::filesystem;
using data::FrustumSample;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create directory " + dir.string() + ": " + ec.message());
}

std::vector<FrustumSample> load_filtered(const fs::path& root, const std::string& split,
                                         std::size_t n_points, std::uint64_t seed,
                                         std::ostream& log) {
  auto ds = data::load_frustum_dataset(root, split, n_points, seed);
  for (const auto& line : ds.log) log << line << "\n";
  auto filtered = data::filter_samples(std::move(ds.samples));
  log << "split " << split << ": " << filtered.kept.size() << " samples kept, "
      << filtered.rejected.size() << " rejected by the point filter\n";
  return std::move(filtered.kept);
}

struct LoadedModel {
  RunConfig config;
  model::CatModel model;
};

LoadedModel load_model(const fs::path& checkpoint) {
  const auto ckpt = tensor::read_checkpoint(checkpoint);
  RunConfig rc;
  for (const auto& [k, v] : parse_key_values(ckpt.config_text)) {
    if (k.rfind("train.", 0) == 0) {
      if (!rc.train.set(k.substr(6), v))
        throw Error(ErrorKind::CheckpointMismatch, "unknown key '" + k + "' in " + checkpoint.string());
    } else if (!rc.model.set(k, v)) {
      throw Error(ErrorKind::CheckpointMismatch, "unknown key '" + k + "' in " + checkpoint.string());
    }
  }
  rc.model.validate();
  Rng rng(0);
  LoadedModel lm{rc, model::CatModel(rc.model, rng)};
  tensor::load_parameters(ckpt, lm.model.parameters());
  return lm;
}

void write_file(const fs::path& path, const std::string& text) { data::write_text_file(path, text); }

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (model.set(key, value) || train.set(key, value) || scene.set(key, value)) return;
  if (key == "n_scenes") n_scenes = parse_count(key, value);
  else if (key == "val_fraction") val_fraction = parse_double(key, value);
  else if (key == "split") split = value;
  else throw Error(ErrorKind::InvalidConfig, "unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  model.validate();
  train.validate(model);
  scene.validate();
  if (!(val_fraction >= 0.0 && val_fraction <= 1.0))
    throw Error(ErrorKind::InvalidConfig, "val_fraction must lie in [0, 1]");
  if (split != "train" && split != "val" && split != "all")
    throw Error(ErrorKind::InvalidConfig, "split must be train, val or all");
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv = model.to_key_values();
  for (auto& e : train.to_key_values()) kv.push_back(e);
  for (auto& e : scene.to_key_values()) kv.push_back(e);
  kv.push_back({"n_scenes", std::to_string(n_scenes)});
  kv.push_back({"val_fraction", format_double(val_fraction)});
  kv.push_back({"split", split});
  return kv;
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& [k, v] : to_key_values()) s += k + " = " + v + "\n";
  return s;
}

RunConfig RunConfig::load(const std::string& preset, const fs::path& file,
                          const std::vector<std::string>& overrides) {
  RunConfig c;
  if (preset == "large") {
    c.model = model::ModelConfig::large();
    c.train = training::TrainConfig::large();
  } else if (!preset.empty() && preset != "desk") {
    throw Error(ErrorKind::InvalidConfig, "unknown preset '" + preset + "' (desk or large)");
  }
  if (!file.empty())
    for (const auto& [k, v] : read_key_values(file.string())) c.set(k, v);
  for (const auto& o : overrides) {
    const auto [k, v] = parse_override(o);
    c.set(k, v);
  }
  return c;
}

std::vector<data::ManifestEntry> cmd_synth(const RunConfig& config, const fs::path& out,
                                           std::ostream& log) {
  config.validate();
  if (config.n_scenes == 0) log << "warning: scene count is 0, writing an empty dataset\n";
  const auto manifest = data::write_synthetic_dataset(out, config.scene, config.n_scenes,
                                                      config.val_fraction, config.train.seed);
  const auto lint = data::lint_dataset(out);
  log << "wrote " << lint.frames << " frames, " << lint.objects << " objects, " << lint.points
      << " points to " << out.string() << "\n";
  return manifest;
}

TrainSummary cmd_train(RunConfig config, const fs::path& data_root, const fs::path& out,
                       const std::string& ablation, const fs::path& resume, std::ostream& log) {
  if (!ablation.empty()) {
    config.model = evaluation::apply_variant(config.model, evaluation::find_variant(ablation));
  }
  config.validate();
  log << "# resolved config\n" << config.to_text();
  const auto samples = load_filtered(data_root, config.split, config.model.n_points,
                                     config.train.seed, log);
  if (training::steps_per_epoch(samples.size(), config.train.batch_size, config.model.use_global) == 0) {
    throw Error(ErrorKind::EmptySet, "filtered dataset has " + std::to_string(samples.size()) +
                                         " samples, fewer than one batch of " +
                                         std::to_string(config.train.batch_size));
  }
  ensure_dir(out);
  write_file(out / "config.txt", config.to_text());
  auto model = training::make_model(config.model, config.train.seed);
  training::TrainOptions opts;
  opts.out_dir = out;
  opts.resume_from = resume;
  const std::uint64_t total =
      training::steps_per_epoch(samples.size(), config.train.batch_size, config.model.use_global) *
      config.train.epochs;
  const std::uint64_t every = std::max<std::uint64_t>(1, total / 20);
  opts.on_step = [&](const training::StepMetrics& m) {
    if (m.step % every == 0 || m.step + 1 == total) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "step %llu/%llu lr %.3e loss %.5f box %.5f dir %.5f iou %.4f\n",
                    static_cast<unsigned long long>(m.step + 1),
                    static_cast<unsigned long long>(total), m.lr, m.total, m.box_loss, m.dir_loss,
                    m.mean_iou);
      log << buf;
    }
  };
  const auto result = training::train(model, samples, config.train, opts);

  TrainSummary s;
  s.checkpoint = result.checkpoint;
  s.samples = samples.size();
  const auto preds = training::predict(model, samples, config.train.batch_size);
  s.train_report = evaluation::make_report(evaluation::score_predictions(preds, samples));
  write_file(out / "train_report.json", evaluation::report_json(s.train_report));
  log << "checkpoint " << result.checkpoint.string() << "\n";
  log << "training-set evaluation\n" << evaluation::format_report(s.train_report);
  char buf[64];
  std::snprintf(buf, sizeof buf, "train_miou %.17g\n", s.train_report.miou);
  log << buf;
  return s;
}

AnnotateSummary cmd_annotate(const fs::path& checkpoint, const fs::path& data_root,
                             const std::string& split, const fs::path& out, std::ostream& log) {
  auto lm = load_model(checkpoint);
  const auto& rc = lm.config;
  ensure_dir(out);
  AnnotateSummary summary;

  struct FrameWork {
    data::Frame frame;
    std::vector<FrustumSample> kept;   // pass the 30/5 filter
    std::vector<FrustumSample> extra;  // rejected but with frustum points
    std::vector<std::string> empty;    // no frustum points, no prediction
  };
  std::vector<FrameWork> frames;
  std::vector<FrustumSample> all, extra;
  for (const auto& e : data::read_manifest(data_root)) {
    if (split != "all" && e.split != split) continue;
    FrameWork fw;
    try {
      fw.frame = data::load_frame(data_root, e.frame_id);
    } catch (const Error& err) {
      log << "skipped frame " << e.frame_id << ": error[" << to_string(err.kind()) << "] "
          << err.what() << "\n";
      ++summary.frames_skipped;
      continue;
    }
    const auto built = data::build_frame_samples(e.frame_id, fw.frame.cloud, fw.frame.labels,
                                                 fw.frame.calib, rc.model.n_points, rc.train.seed);
    fw.kept = data::filter_samples(built).kept;
    std::size_t k = 0;
    for (const auto& s : built) {
      if (k < fw.kept.size() && fw.kept[k].object_id == s.object_id) {
        ++k;
      } else if (s.points.empty() || !s.gt_box) {
        fw.empty.push_back(s.object_id);
      } else {
        fw.extra.push_back(s);
      }
    }
    for (const auto& s : fw.kept) all.push_back(s);
    for (const auto& s : fw.extra) extra.push_back(s);
    frames.push_back(std::move(fw));
  }

  // Filtered objects are batched in dataset order, as in the end-of-training
  // evaluation; the rest follow in a separate pass.
  const auto t0 = std::chrono::steady_clock::now();
  const auto preds = training::predict(lm.model, all, rc.train.batch_size);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto extra_preds = training::predict(lm.model, extra, rc.train.batch_size);
  if (!all.empty()) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "latency %.2f ms per object over %zu objects\n",
                  1000.0 * seconds / static_cast<double>(all.size()), all.size());
    log << buf;
  }

  auto line_index = [](const std::string& id) { return std::stoul(id.substr(id.rfind('/') + 1)); };
  std::size_t next = 0, next_extra = 0, empty = 0;
  for (const auto& fw : frames) {
    std::vector<std::pair<std::size_t, const training::Prediction*>> chosen;
    for (std::size_t i = 0; i < fw.kept.size(); ++i)
      chosen.push_back({line_index(fw.kept[i].object_id), &preds[next++]});
    for (std::size_t i = 0; i < fw.extra.size(); ++i)
      chosen.push_back({line_index(fw.extra[i].object_id), &extra_preds[next_extra++]});
    std::sort(chosen.begin(), chosen.end());
    std::vector<data::KittiObject> labels;
    for (const auto& [line, p] : chosen) {
      const auto& src = fw.frame.labels[line];
      data::KittiObject o;
      o.type = src.type;
      o.truncation = src.truncation;
      o.occlusion = src.occlusion;
      o.box2d = src.box2d;
      data::set_label_box(o, p->box, fw.frame.calib);
      o.score = p->score;
      labels.push_back(o);
    }
    write_file(out / (fw.frame.frame_id + ".txt"), data::serialize_kitti_label(labels));
    summary.objects += labels.size();
    empty += fw.empty.size();
    ++summary.frames_written;
  }
  log << "wrote " << summary.frames_written << " label files, " << summary.objects
      << " objects to " << out.string() << "\n";

  if (!all.empty()) {
    summary.report = evaluation::make_report(evaluation::score_predictions(preds, all));
    log << "in-memory evaluation against dataset labels, filtered objects\n"
        << evaluation::format_report(*summary.report);
    char buf[64];
    std::snprintf(buf, sizeof buf, "annotate_miou %.17g\n", summary.report->miou);
    log << buf;
  }
  if (!all.empty() || !extra.empty() || empty > 0) {
    // Unfiltered: every object, with empty frustums scored as misses.
    auto records = evaluation::score_predictions(preds, all);
    for (auto& r : evaluation::score_predictions(extra_preds, extra)) records.push_back(r);
    for (const auto& fw : frames)
      for (const auto& id : fw.empty) records.push_back({id, 0.0, false, 0.0});
    summary.unfiltered_report = evaluation::make_report(std::move(records));
    log << "in-memory evaluation, all objects (" << empty << " without frustum points)\n"
        << evaluation::format_report(*summary.unfiltered_report);
  }
  return summary;
}

evaluation::EvalReport cmd_eval(const fs::path& pred_dir, const fs::path& gt_dir,
                                const fs::path& out, std::ostream& log) {
  auto report = evaluation::evaluate_label_dirs(pred_dir, gt_dir);
  log << evaluation::format_report(report);
  if (!out.empty()) {
    ensure_dir(out);
    write_file(out / "report.txt", evaluation::format_report(report));
    write_file(out / "report.json", evaluation::report_json(report));
  }
  return report;
}

training::GradcheckReport cmd_gradcheck(const RunConfig& config, std::size_t batch_size,
                                        bool corrupt_backward, std::ostream& log) {
  config.model.validate();
  training::GradcheckOptions opts;
  opts.batch_size = batch_size;
  opts.seed = config.train.seed;
  if (corrupt_backward) tensor::set_fault(tensor::Fault::LeakyReluBackward);
  training::GradcheckReport report;
  try {
    report = training::run_gradcheck(config.model, opts);
  } catch (...) {
    tensor::set_fault(tensor::Fault::None);
    throw;
  }
  tensor::set_fault(tensor::Fault::None);
  log << training::format_gradcheck(report);
  return report;
}

AttentionDump cmd_attn(const fs::path& checkpoint, const fs::path& data_root,
                       const AttentionQuery& q, const fs::path& out, std::ostream& log) {
  auto lm = load_model(checkpoint);
  const std::size_t n = lm.config.model.n_points;
  if (q.point >= n) {
    throw Error(ErrorKind::IndexOutOfRange,
                "point " + std::to_string(q.point) + " of " + std::to_string(n));
  }
  if (q.top_k > n) {
    throw Error(ErrorKind::IndexOutOfRange,
                "top_k " + std::to_string(q.top_k) + " exceeds the " + std::to_string(n) + " points");
  }
  if (q.layer >= lm.config.model.n_local_layers) {
    throw Error(ErrorKind::IndexOutOfRange, "local layer " + std::to_string(q.layer) + " of " +
                                                std::to_string(lm.config.model.n_local_layers));
  }
  const auto frame = data::load_frame(data_root, q.frame);
  const auto samples = data::build_frame_samples(frame.frame_id, frame.cloud, frame.labels,
                                                 frame.calib, n, lm.config.train.seed);
  const std::string id = q.frame + "/" + std::to_string(q.object);
  const FrustumSample* sample = nullptr;
  for (const auto& s : samples)
    if (s.object_id == id) sample = &s;
  if (!sample) throw Error(ErrorKind::IndexOutOfRange, "no object " + id);
  if (sample->points.empty()) throw Error(ErrorKind::EmptyCloud, "object " + id + " has an empty frustum");

  std::vector<double> values;
  for (const auto& p : sample->points) values.insert(values.end(), {p.x, p.y, p.z});
  tensor::NoGradGuard guard;
  const auto fw = lm.model.forward(tensor::Tensor::from({1, n, 3}, std::move(values)), true);
  const std::size_t seq = n + model::kBoxTokens;

  AttentionDump dump;
  const auto ranking = model::export_attention(*fw.trace, q.layer, 0, model::kBoxTokens + q.point, seq);
  dump.row_sum = ranking.row_sum;
  for (std::size_t r = 0; r < ranking.indices.size() && dump.points.size() < q.top_k; ++r) {
    if (ranking.indices[r] < model::kBoxTokens) continue;
    const std::size_t pi = ranking.indices[r] - model::kBoxTokens;
    dump.points.push_back(pi);
    dump.cloud_indices.push_back(sample->source_index[pi]);
    dump.coordinates.push_back(frame.cloud[sample->source_index[pi]].p);
    dump.scores.push_back(ranking.scores[r]);
  }
  for (std::size_t t = 0; t < model::kBoxTokens; ++t) {
    const auto row = model::export_attention(*fw.trace, q.layer, 0, t, seq);
    std::vector<double> by_point(n, 0.0);
    for (std::size_t r = 0; r < row.indices.size(); ++r)
      if (row.indices[r] >= model::kBoxTokens) by_point[row.indices[r] - model::kBoxTokens] = row.scores[r];
    dump.box_token_rows.push_back(std::move(by_point));
  }

  static const char* kTokenNames[] = {"x", "y", "z", "width", "length", "height", "yaw"};
  nlohmann::ordered_json j;
  j["object"] = id;
  j["layer"] = q.layer;
  j["reference_point"] = q.point;
  const auto& ref = frame.cloud[sample->source_index[q.point]].p;
  j["reference_xyz"] = {ref.x, ref.y, ref.z};
  j["row_sum"] = dump.row_sum;
  j["ranked"] = nlohmann::json::array();
  for (std::size_t r = 0; r < dump.points.size(); ++r) {
    const auto& c = dump.coordinates[r];
    j["ranked"].push_back({{"rank", r},
                           {"point", dump.points[r]},
                           {"cloud_index", dump.cloud_indices[r]},
                           {"x", c.x},
                           {"y", c.y},
                           {"z", c.z},
                           {"score", dump.scores[r]}});
  }
  j["box_tokens"] = nlohmann::json::array();
  for (std::size_t t = 0; t < model::kBoxTokens; ++t)
    j["box_tokens"].push_back({{"token", kTokenNames[t]}, {"scores", dump.box_token_rows[t]}});
  if (!out.parent_path().empty()) ensure_dir(out.parent_path());
  write_file(out, j.dump(1) + "\n");
  log << "wrote " << dump.points.size() << " ranked points for " << id << " to " << out.string()
      << "\n";
  return dump;
}

std::vector<evaluation::AblationRow> cmd_ablate(const RunConfig& config, const fs::path& data_root,
                                                const std::vector<std::uint64_t>& seeds,
                                                const fs::path& out, std::ostream& log) {
  config.validate();
  for (const auto& v : evaluation::ablation_variants())
    config.train.validate(evaluation::apply_variant(config.model, v));
  log << "# resolved config\n" << config.to_text();
  const auto train_set = load_filtered(data_root, "train", config.model.n_points, config.train.seed, log);
  const auto eval_set = load_filtered(data_root, "val", config.model.n_points, config.train.seed, log);
  if (eval_set.empty()) throw Error(ErrorKind::EmptySet, "no validation samples to evaluate");
  const auto rows = evaluation::run_ablation(train_set, eval_set, config.model, config.train, seeds);
  const std::string table = evaluation::format_ablation(rows);
  log << table;
  if (!out.empty()) {
    ensure_dir(out);
    write_file(out / "ablation.txt", table);
    nlohmann::ordered_json j = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::ordered_json row;
      row["model"] = r.name;
      for (const auto& [name, m] : {std::pair{"miou", r.miou}, {"recall07", r.recall07},
                                    {"ap11", r.ap11}, {"ap40", r.ap40}})
        row[name] = {{"mean", m.mean}, {"spread", m.spread}};
      j.push_back(row);
    }
    write_file(out / "ablation.json", j.dump(2) + "\n");
  }
  return rows;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Box annotation transformer lab: synthetic data, training, annotation, evaluation"};
  app.require_subcommand(1);

  std::string preset, config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--preset", preset, "desk or large");
    sub->add_option("--config", config_file, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "key=value override (repeatable)");
    sub->add_option("--seed", seed, "seed for every random draw");
  };
  auto resolve = [&] {
    auto c = RunConfig::load(preset, config_file, overrides);
    if (seed) c.train.seed = *seed;
    return c;
  };

  std::string data_root, out_dir, ablation, resume, checkpoint, split = "train", pred_dir, gt_dir;
  std::size_t batch = 4;
  bool corrupt = false;
  AttentionQuery query;
  std::vector<std::uint64_t> seeds = {0, 1, 2};

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset in KITTI layout");
  common(synth);
  synth->add_option("--out", out_dir, "dataset root")->required();

  auto* train = app.add_subcommand("train", "train on a dataset split");
  common(train);
  train->add_option("--data", data_root, "dataset root")->required();
  train->add_option("--out", out_dir, "run directory")->required();
  train->add_option("--ablation", ablation, "A, B, C, D or full");
  train->add_option("--resume", resume, "checkpoint to continue from");

  auto* annotate = app.add_subcommand("annotate", "write pseudo-labels for a dataset split");
  annotate->add_option("--checkpoint", checkpoint)->required();
  annotate->add_option("--data", data_root)->required();
  annotate->add_option("--split", split, "train, val or all");
  annotate->add_option("--out", out_dir, "label directory")->required();

  auto* eval = app.add_subcommand("eval", "score label files against ground truth");
  eval->add_option("--pred", pred_dir)->required();
  eval->add_option("--gt", gt_dir)->required();
  eval->add_option("--out", out_dir, "report directory");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  common(gradcheck);
  gradcheck->add_option("--batch", batch, "objects per batch");
  gradcheck->add_flag("--corrupt-backward", corrupt, "negative control: break one backward rule");

  auto* attn = app.add_subcommand("attn", "dump local attention of one point");
  attn->add_option("--checkpoint", checkpoint)->required();
  attn->add_option("--data", data_root)->required();
  attn->add_option("--frame", query.frame)->required();
  attn->add_option("--object", query.object, "label line index")->required();
  attn->add_option("--point", query.point, "reference point index")->required();
  attn->add_option("--top-k", query.top_k);
  attn->add_option("--layer", query.layer, "local encoder layer");
  attn->add_option("--out", out_dir, "output JSON file")->required();

  auto* ablate = app.add_subcommand("ablate", "train and compare models A-D and full");
  common(ablate);
  ablate->add_option("--data", data_root)->required();
  ablate->add_option("--seeds", seeds, "training seeds");
  ablate->add_option("--out", out_dir, "report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error[" << to_string(ErrorKind::InvalidConfig) << "]: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*synth) {
      cmd_synth(resolve(), out_dir, out);
    } else if (*train) {
      cmd_train(resolve(), data_root, out_dir, ablation, resume, out);
    } else if (*annotate) {
      cmd_annotate(checkpoint, data_root, split, out_dir, out);
    } else if (*eval) {
      cmd_eval(pred_dir, gt_dir, out_dir, out);
    } else if (*gradcheck) {
      const auto config = resolve();
      out << "# resolved config\n" << config.to_text();
      return cmd_gradcheck(config, batch, corrupt, out).passed ? 0 : 1;
    } else if (*attn) {
      cmd_attn(checkpoint, data_root, query, out_dir, out);
    } else if (*ablate) {
      if (seeds.empty()) throw Error(ErrorKind::InvalidConfig, "--seeds needs at least one seed");
      cmd_ablate(resolve(), data_root, seeds, out_dir, out);
    }
  } catch (const Error& e) {
    err << "error[" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error[Internal]: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace cat::cli
