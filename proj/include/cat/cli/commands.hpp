#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cat/common/config.hpp"
#include "cat/data/dataset.hpp"
#include "cat/data/synthetic.hpp"
#include "cat/evaluation/evaluation.hpp"
#include "cat/model/model.hpp"
#include "cat/training/gradcheck.hpp"
#include "cat/training/training.hpp"

namespace cat::cli {

// Every setting of a run: model, training and synthetic scene keys share
// one flat namespace, plus dataset options.
struct RunConfig {
  model::ModelConfig model;
  training::TrainConfig train;
  data::SceneSpec scene;
  std::size_t n_scenes = 64;
  double val_fraction = 0.25;
  std::string split = "train";

  // Throws InvalidConfig on an unknown key.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  KeyValues to_key_values() const;
  std::string to_text() const;

  // Optional preset ("desk" or "large"), then the file, then overrides.
  static RunConfig load(const std::string& preset, const std::filesystem::path& file,
                        const std::vector<std::string>& overrides);
};

std::vector<data::ManifestEntry> cmd_synth(const RunConfig& config, const std::filesystem::path& out,
                                           std::ostream& log);

struct TrainSummary {
  std::filesystem::path checkpoint;
  evaluation::EvalReport train_report;
  std::size_t samples = 0;
};

TrainSummary cmd_train(RunConfig config, const std::filesystem::path& data_root,
                       const std::filesystem::path& out, const std::string& ablation,
                       const std::filesystem::path& resume, std::ostream& log);

struct AnnotateSummary {
  std::size_t frames_written = 0;
  std::size_t frames_skipped = 0;
  std::size_t objects = 0;
  std::optional<evaluation::EvalReport> report;  // in-memory, filtered objects
  std::optional<evaluation::EvalReport> unfiltered_report;  // every object; empty frustums score 0
};

// Model and run settings come from the checkpoint.
AnnotateSummary cmd_annotate(const std::filesystem::path& checkpoint,
                             const std::filesystem::path& data_root, const std::string& split,
                             const std::filesystem::path& out, std::ostream& log);

evaluation::EvalReport cmd_eval(const std::filesystem::path& pred_dir,
                                const std::filesystem::path& gt_dir,
                                const std::filesystem::path& out, std::ostream& log);

training::GradcheckReport cmd_gradcheck(const RunConfig& config, std::size_t batch_size,
                                        bool corrupt_backward, std::ostream& log);

struct AttentionQuery {
  std::string frame;
  std::size_t object = 0;
  std::size_t point = 0;
  std::size_t top_k = 500;
  std::size_t layer = 0;
};

struct AttentionDump {
  std::vector<std::size_t> points;          // sample point indices, ranked
  std::vector<std::size_t> cloud_indices;   // same rows, index into the frame cloud
  std::vector<geom::Point3> coordinates;    // LiDAR frame, as stored in the cloud
  std::vector<double> scores;
  double row_sum = 0.0;
  std::vector<std::vector<double>> box_token_rows;  // [7][N] head-averaged attention
};

AttentionDump cmd_attn(const std::filesystem::path& checkpoint,
                       const std::filesystem::path& data_root, const AttentionQuery& query,
                       const std::filesystem::path& out, std::ostream& log);

std::vector<evaluation::AblationRow> cmd_ablate(const RunConfig& config,
                                                const std::filesystem::path& data_root,
                                                const std::vector<std::uint64_t>& seeds,
                                                const std::filesystem::path& out,
                                                std::ostream& log);

// Whole command line; returns the process exit code. Library errors print
// "error[<Kind>]: <message>" to `err` and return 2.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cat::cli
