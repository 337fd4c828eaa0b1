#include <filesystem>
#include <fstream>
#include <sstream>

#include "cat/cli/commands.hpp"
#include "cat/common/error.hpp"
#include "cat/data/dataset.hpp"
#include "cat/tensor/checkpoint.hpp"
#include "doctest.h"

using namespace cat;
using namespace cat::cli;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("cat_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto other = b / fs::relative(e.path(), a);
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) return false;
  }
  return files > 0;
}

const std::vector<std::string> kSmall = {"d=16",         "heads=2",     "n_points=32",
                                         "n_local_layers=1", "head_hidden=16", "ffn_hidden=16",
                                         "batch_size=4", "epochs=2",    "n_scenes=12"};

RunConfig small_config() { return RunConfig::load("", {}, kSmall); }

int run_args(std::vector<std::string> args, std::string* out_text = nullptr,
             std::string* err_text = nullptr) {
  args.insert(args.begin(), "catlab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

// One shared synthetic dataset and trained run for the slower cases.
struct Fixture {
  fs::path data = temp_dir("data");
  fs::path run = temp_dir("run");
  TrainSummary summary;
  Fixture() {
    std::ostringstream log;
    cmd_synth(small_config(), data, log);
    summary = cmd_train(small_config(), data, run, "", {}, log);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("config keys, presets and overrides") {
  const auto c = small_config();
  CHECK(c.model.d == 16);
  CHECK(c.train.batch_size == 4);
  CHECK(c.n_scenes == 12);
  CHECK(RunConfig::load("large", {}, {}).model.d == 512);
  CHECK(RunConfig::load("large", {}, {}).train.batch_size == 24);
  CHECK_THROWS_AS(RunConfig::load("huge", {}, {}), Error);
  CHECK_THROWS_AS(RunConfig::load("", {}, {"nonsense=3"}), Error);

  const auto dir = temp_dir("cfg");
  fs::create_directories(dir);
  data::write_text_file(dir / "run.cfg", "# desk run\nd = 32\n\nocclusion_fraction = 0.5  \n");
  const auto f = RunConfig::load("", dir / "run.cfg", {"d=8", "heads=2"});
  CHECK(f.model.d == 8);
  CHECK(f.scene.occlusion_fraction == 0.5);
  // The resolved text loads back to the same settings.
  data::write_text_file(dir / "resolved.cfg", f.to_text());
  CHECK(RunConfig::load("", dir / "resolved.cfg", {}).to_text() == f.to_text());
}

TEST_CASE("synth writes a lintable, reproducible dataset") {
  const auto a = temp_dir("synth_a"), b = temp_dir("synth_b");
  std::string out;
  CHECK(run_args({"synth", "--out", a.string(), "--set", "n_scenes=64", "--seed", "4"}, &out) == 0);
  CHECK(run_args({"synth", "--out", b.string(), "--set", "n_scenes=64", "--seed", "4"}) == 0);
  CHECK(data::lint_dataset(a).frames == 64);
  CHECK(same_tree(a, b));

  const auto empty = temp_dir("synth_empty");
  CHECK(run_args({"synth", "--out", empty.string(), "--set", "n_scenes=0"}, &out) == 0);
  CHECK(out.find("warning") != std::string::npos);
  CHECK(data::read_manifest(empty).empty());
}

TEST_CASE("errors print their category and exit nonzero") {
  std::string err;
  CHECK(run_args({"synth", "--out", temp_dir("x").string(), "--set", "colour=red"}, nullptr, &err) == 2);
  CHECK(err.rfind("error[InvalidConfig]", 0) == 0);
  CHECK(run_args({"train", "--data", "/nonexistent", "--out", temp_dir("y").string()}, nullptr, &err) == 2);
  CHECK(err.rfind("error[Io]", 0) == 0);
  CHECK(run_args({"frobnicate"}, nullptr, &err) != 0);
  // Config errors stop before any output is written.
  const auto z = temp_dir("z");
  CHECK(run_args({"train", "--data", fixture().data.string(), "--out", z.string(), "--set", "d=30"},
                 nullptr, &err) == 2);
  CHECK(err.rfind("error[HeadDivisibility]", 0) == 0);
  CHECK_FALSE(fs::exists(z));
}

TEST_CASE("train writes a loadable checkpoint and a reproducible log") {
  auto& f = fixture();
  const auto ckpt = tensor::read_checkpoint(f.summary.checkpoint);
  CHECK(ckpt.optimizer.has_value());
  CHECK(ckpt.config_text.find("d = 16") != std::string::npos);
  CHECK(fs::exists(f.run / "metrics.jsonl"));

  const auto again = temp_dir("run_again");
  std::ostringstream log;
  cmd_train(small_config(), f.data, again, "", {}, log);
  CHECK(slurp(again / "metrics.jsonl") == slurp(f.run / "metrics.jsonl"));
  CHECK(slurp(again / "final.ckpt") == slurp(f.run / "final.ckpt"));
  CHECK(log.str().find("# resolved config") != std::string::npos);
}

TEST_CASE("ablation flag selects the toggle rows") {
  auto& f = fixture();
  std::ostringstream log;
  const auto run = temp_dir("run_a");
  const auto s = cmd_train(small_config(), f.data, run, "A", {}, log);
  const auto text = tensor::read_checkpoint(s.checkpoint).config_text;
  CHECK(text.find("use_global = false") != std::string::npos);
  CHECK(text.find("use_decoder = false") != std::string::npos);
  CHECK(text.find("pos_mode = none") != std::string::npos);
  const auto d = cmd_train(small_config(), f.data, temp_dir("run_d"), "D", {}, log);
  CHECK(tensor::read_checkpoint(d.checkpoint).config_text.find("pos_mode = sine") != std::string::npos);
  CHECK_THROWS_AS(cmd_train(small_config(), f.data, temp_dir("run_e"), "E", {}, log), Error);
}

TEST_CASE("train refuses a dataset smaller than one batch") {
  auto cfg = small_config();
  cfg.train.batch_size = 500;
  std::ostringstream log;
  try {
    cmd_train(cfg, fixture().data, temp_dir("run_big"), "", {}, log);
    FAIL("expected EmptySet");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptySet);
    CHECK(std::string(e.what()).find("fewer than one batch") != std::string::npos);
  }
}

TEST_CASE("annotate reproduces the training-set evaluation") {
  auto& f = fixture();
  const auto labels = temp_dir("labels");
  std::ostringstream log;
  const auto s = cmd_annotate(f.summary.checkpoint, f.data, "train", labels, log);
  REQUIRE(s.report.has_value());
  CHECK(std::abs(s.report->miou - f.summary.train_report.miou) <= 1e-9);
  CHECK(s.report->objects.size() == f.summary.train_report.objects.size());
  std::size_t train_frames = 0;
  for (const auto& e : data::read_manifest(f.data)) train_frames += e.split == "train";
  CHECK(s.frames_written == train_frames);
  for (const auto& e : fs::directory_iterator(labels)) {
    const auto parsed = data::parse_kitti_label(data::read_text_file(e.path()));
    for (const auto& o : parsed) CHECK(o.score.has_value());
  }
  CHECK(log.str().find("ms per object") != std::string::npos);

  // The unfiltered view covers every labeled object of the split.
  REQUIRE(s.unfiltered_report.has_value());
  std::size_t labeled = 0;
  for (const auto& e : data::read_manifest(f.data)) {
    if (e.split != "train") continue;
    for (const auto& o : data::parse_kitti_label(data::read_text_file(data::label_path(f.data, e.frame_id))))
      labeled += !o.dont_care();
  }
  CHECK(s.unfiltered_report->objects.size() == labeled);
  CHECK(s.objects >= s.report->objects.size());
  CHECK(s.objects <= labeled);

  // Labels written for the predictions evaluate against the dataset.
  const auto gt = temp_dir("labels_gt");
  fs::create_directories(gt);
  for (const auto& e : fs::directory_iterator(labels))
    fs::copy_file(data::label_path(f.data, e.path().stem().string()), gt / e.path().filename());
  std::ostringstream elog;
  const auto report = cmd_eval(labels, gt, {}, elog);
  CHECK(report.objects.size() >= s.objects);
}

TEST_CASE("annotate writes empty files for empty frames and skips broken ones") {
  auto& f = fixture();
  const auto data = temp_dir("data_broken");
  fs::copy(f.data, data, fs::copy_options::recursive);
  const auto manifest = data::read_manifest(data);
  data::write_text_file(data::label_path(data, manifest[0].frame_id), "");
  fs::remove(data::calib_path(data, manifest[1].frame_id));
  const auto labels = temp_dir("labels_broken");
  std::ostringstream log;
  const auto s = cmd_annotate(f.summary.checkpoint, data, "all", labels, log);
  CHECK(s.frames_skipped == 1);
  CHECK(fs::exists(labels / (manifest[0].frame_id + ".txt")));
  CHECK(fs::file_size(labels / (manifest[0].frame_id + ".txt")) == 0);
  CHECK_FALSE(fs::exists(labels / (manifest[1].frame_id + ".txt")));
  CHECK(log.str().find("skipped frame " + manifest[1].frame_id) != std::string::npos);
}

TEST_CASE("eval of identical directories and of disjoint ones") {
  auto& f = fixture();
  const auto gt = f.data / "training" / "label_2";
  std::ostringstream log;
  const auto r = cmd_eval(gt, gt, temp_dir("eval_out"), log);
  CHECK(r.miou == 1.0);
  CHECK(r.recall07 == 1.0);
  CHECK(r.ap11 == 1.0);
  CHECK(r.ap40 == 1.0);
  CHECK(fs::exists(temp_dir("unused").parent_path() / "cat_cli_eval_out" / "report.json"));
  const auto other = temp_dir("eval_other");
  fs::create_directories(other);
  data::write_text_file(other / "999999.txt", "");
  std::string err;
  CHECK(run_args({"eval", "--pred", other.string(), "--gt", gt.string()}, nullptr, &err) == 2);
  CHECK(err.rfind("error[FrameMismatch]", 0) == 0);
}

TEST_CASE("gradcheck reports every parameter group and catches a broken rule") {
  auto cfg = small_config();
  std::ostringstream log;
  const auto good = cmd_gradcheck(cfg, 4, false, log);
  CHECK(good.passed);
  CHECK(good.groups.size() == model::parameter_shapes(cfg.model).size());
  const auto bad = cmd_gradcheck(cfg, 4, true, log);
  CHECK_FALSE(bad.passed);
  CHECK(tensor::current_fault() == tensor::Fault::None);
  std::string out;
  CHECK(run_args({"gradcheck", "--set", "d=16", "--set", "heads=2", "--set", "n_points=16",
                  "--set", "head_hidden=8", "--set", "ffn_hidden=8", "--corrupt-backward"},
                 &out) == 1);
  CHECK(out.find("FAIL") != std::string::npos);
}

TEST_CASE("attention dump") {
  auto& f = fixture();
  const auto frame = data::read_manifest(f.data)[0].frame_id;
  const auto cloud = data::load_frame(f.data, frame).cloud;
  const auto out = temp_dir("attn") / "dump.json";
  std::ostringstream log;
  AttentionQuery q{frame, 0, 3, 20, 0};
  const auto d = cmd_attn(f.summary.checkpoint, f.data, q, out, log);
  CHECK(d.points.size() == 20);
  CHECK(std::abs(d.row_sum - 1.0) <= 1e-9);
  for (std::size_t i = 1; i < d.scores.size(); ++i) CHECK(d.scores[i] <= d.scores[i - 1]);
  for (std::size_t i = 0; i < d.points.size(); ++i) CHECK(d.coordinates[i] == cloud[d.cloud_indices[i]].p);
  CHECK(d.box_token_rows.size() == 7);
  CHECK(fs::exists(out));
  q.top_k = 33;
  CHECK_THROWS_AS(cmd_attn(f.summary.checkpoint, f.data, q, out, log), Error);
  q.top_k = 5;
  q.point = 32;
  CHECK_THROWS_AS(cmd_attn(f.summary.checkpoint, f.data, q, out, log), Error);
}
