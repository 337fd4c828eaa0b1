#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "cat/common/error.hpp"
#include "cat/data/kitti.hpp"
#include "cat/data/synthetic.hpp"
#include "cat/evaluation/evaluation.hpp"
#include "cat/geometry/geometry.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cat;
using namespace cat::evaluation;
using geom::Box3D;

namespace {

ObjectRecord rec(const std::string& id, double iou, double score) {
  ObjectRecord r;
  r.id = id;
  r.iou = iou;
  r.score = score;
  return r;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cat_eval_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

data::KittiObject car(double u0, double x, double z, double ry) {
  data::KittiObject o;
  o.type = "Car";
  o.box2d = {u0, 150.0, u0 + 60.0, 200.0};
  o.h = 1.5;
  o.w = 1.6;
  o.l = 4.0;
  o.x = x;
  o.y = 1.7;
  o.z = z;
  o.ry = ry;
  return o;
}

}  // namespace

TEST_CASE("mIoU of identical and disjoint sets") {
  const std::vector<LabeledBox> gts = {{"a", {0, 0, 0, 1.6, 4, 1.5, 0.3}},
                                       {"b", {10, 3, 0, 1.8, 4.2, 1.4, -1.0}}};
  CHECK(compute_miou(gts, gts) == 1.0);
  auto far = gts;
  for (auto& g : far) g.box.cx += 100.0;
  CHECK(compute_miou(far, gts) == 0.0);
}

TEST_CASE("mIoU of a mixed set matches the Monte-Carlo oracle") {
  const Box3D g1{0, 0, 0, 1.6, 4, 1.5, 0.3}, g2{20, 0, 0, 1.7, 3.9, 1.5, 0.0},
      g3{-20, 5, 0, 1.8, 4.4, 1.6, 0.9};
  const Box3D p3{-19.6, 5.3, 0.1, 1.7, 4.0, 1.5, 1.1};
  const std::vector<LabeledBox> gts = {{"x", g1}, {"y", g2}, {"z", g3}};
  const std::vector<LabeledBox> preds = {{"z", p3}, {"x", g1}, {"y", {g2.cx + 50, 0, 0, 1, 1, 1, 0}}};
  const double x = test::monte_carlo_iou(p3, g3, 1'000'000, 17);
  CHECK(x > 0.1);
  CHECK(compute_miou(preds, gts) == doctest::Approx((1.0 + x) / 3.0).epsilon(0.01));
}

TEST_CASE("unpaired ids are reported") {
  const std::vector<LabeledBox> gts = {{"a", {}}, {"b", {}}};
  const std::vector<LabeledBox> preds = {{"a", {}}, {"c", {}}};
  try {
    compute_miou(preds, gts);
    FAIL("expected UnmatchedObject");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnmatchedObject);
    CHECK(std::string(e.what()).find("c") != std::string::npos);
    CHECK(std::string(e.what()).find("b") != std::string::npos);
  }
}

TEST_CASE("recall threshold is inclusive") {
  const std::vector<LabeledBox> gts = {{"a", {0, 0, 0, 1, 1, 1, 0}}, {"b", {5, 0, 0, 1, 1, 1, 0}}};
  CHECK(compute_recall(gts, gts) == 1.0);
  // Nested box with 70% of the volume.
  const std::vector<LabeledBox> seventy = {{"a", {0, 0, 0, 0.7, 1, 1, 0}},
                                           {"b", {5, 0, 0, 1, 1, 1, 0}}};
  CHECK(geom::iou_3d(seventy[0].box, gts[0].box) == 0.7);
  CHECK(compute_recall(seventy, gts) == 1.0);
  const std::vector<LabeledBox> half = {{"a", {0, 0, 0, 0.69, 1, 1, 0}},
                                        {"b", {5, 0, 0, 1, 1, 1, 0}}};
  CHECK(compute_recall(half, gts) == 0.5);
  const auto r = make_report({rec("a", 0.7, 1), rec("b", 0.6999999, 1)});
  CHECK(r.recall07 == 0.5);
}

TEST_CASE("average precision") {
  SUBCASE("all correct") {
    const std::vector<ObjectRecord> all = {rec("a", 0.9, 0.9), rec("b", 0.8, 0.6), rec("c", 0.75, 0.7)};
    CHECK(compute_ap(all, ApMode::Points11) == 1.0);
    CHECK(compute_ap(all, ApMode::Points40) == 1.0);
  }
  SUBCASE("none reach the threshold") {
    const std::vector<ObjectRecord> none = {rec("a", 0.5, 0.9), rec("b", 0.69, 0.6)};
    CHECK(compute_ap(none, ApMode::Points11) == 0.0);
    CHECK(compute_ap(none, ApMode::Points40) == 0.0);
  }
  SUBCASE("one false positive ranked second") {
    // Ranked TP, FP, TP, TP over four objects: recall 1/4, 1/4, 2/4, 3/4 and
    // precision 1, 1/2, 2/3, 3/4. Max precision at recall >= r is 1 up to
    // 1/4, 3/4 up to 3/4, then 0.
    const std::vector<ObjectRecord> crafted = {rec("a", 0.9, 0.95), rec("b", 0.3, 0.9),
                                               rec("c", 0.8, 0.85), rec("d", 0.71, 0.8)};
    CHECK(compute_ap(crafted, ApMode::Points11) == doctest::Approx(6.75 / 11.0).epsilon(1e-15));
    CHECK(compute_ap(crafted, ApMode::Points40) == doctest::Approx(25.0 / 40.0).epsilon(1e-15));
    auto shuffled = crafted;
    std::reverse(shuffled.begin(), shuffled.end());
    CHECK(compute_ap(shuffled, ApMode::Points11) == compute_ap(crafted, ApMode::Points11));
  }
  CHECK_THROWS_AS(compute_ap({}, ApMode::Points11), Error);
}

TEST_CASE("reports are order invariant and consistent") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ObjectRecord> records;
  for (int i = 0; i < 40; ++i) records.push_back(rec("o" + std::to_string(i), u(rng), u(rng)));
  const auto r1 = make_report(records);
  std::shuffle(records.begin(), records.end(), rng);
  const auto r2 = make_report(records);
  CHECK(r1.miou == r2.miou);
  CHECK(r1.recall07 == r2.recall07);
  CHECK(r1.ap11 == r2.ap11);
  CHECK(r1.ap40 == r2.ap40);
  CHECK(r1.objects.size() == 40);
  std::size_t positive = 0;
  for (const auto& o : r1.objects) positive += o.iou > 0.0;
  CHECK(r1.recall07 <= static_cast<double>(positive) / 40.0);
  for (double v : {r1.miou, r1.recall07, r1.ap11, r1.ap40}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(report_json(r1) == report_json(r2));
}

TEST_CASE("calibration-free label boxes keep IoU") {
  const auto calib = data::synthetic_calib();
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> d(-1, 1);
  for (int i = 0; i < 30; ++i) {
    const auto a = car(100, 2 * d(rng), 20 + d(rng), 3 * d(rng));
    const auto b = car(100, a.x + 0.5 * d(rng), a.z + 0.5 * d(rng), a.ry + d(rng));
    const double in_lidar = geom::iou_3d_direction_invariant(data::label_to_lidar_box(a, calib),
                                                             data::label_to_lidar_box(b, calib));
    CHECK(geom::iou_3d_direction_invariant(label_box(a), label_box(b)) ==
          doctest::Approx(in_lidar).epsilon(1e-9));
  }
}

TEST_CASE("label directories") {
  const auto gt = temp_dir("gt"), same = temp_dir("same"), pred = temp_dir("pred"),
             other = temp_dir("other");
  const std::vector<data::KittiObject> f0 = {car(100, -3, 20, 0.1), car(400, 2, 30, 1.2)};
  const std::vector<data::KittiObject> f1 = {car(700, 4, 15, -2.0)};
  data::write_text_file(gt / "000000.txt", data::serialize_kitti_label(f0));
  data::write_text_file(gt / "000001.txt", data::serialize_kitti_label(f1));
  data::write_text_file(same / "000000.txt", data::serialize_kitti_label(f0));
  data::write_text_file(same / "000001.txt", data::serialize_kitti_label(f1));

  const auto r = evaluate_label_dirs(same, gt);
  CHECK(r.miou == 1.0);
  CHECK(r.recall07 == 1.0);
  CHECK(r.ap11 == 1.0);
  CHECK(r.ap40 == 1.0);
  CHECK(r.direction_accuracy == 1.0);

  // Hand-built set: one exact match, one turned by 3.14 (direction wrong,
  // IoU just under 1 at two-decimal precision), one missing prediction.
  auto p0 = f0;
  p0[1].ry += std::numbers::pi;
  data::write_text_file(pred / "000000.txt", data::serialize_kitti_label(p0));
  data::write_text_file(pred / "000001.txt", "");
  const auto h = evaluate_label_dirs(pred, gt);
  REQUIRE(h.objects.size() == 3);
  CHECK(h.miou == doctest::Approx(2.0 / 3.0).epsilon(1e-3));
  CHECK(h.miou < 2.0 / 3.0);
  CHECK(h.recall07 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(h.direction_accuracy == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // Scores: two hits at 1.0 ranked first, the miss at 0: AP reaches recall 2/3 at precision 1.
  CHECK(h.ap11 == doctest::Approx(7.0 / 11.0).epsilon(1e-12));
  CHECK(h.ap40 == doctest::Approx(26.0 / 40.0).epsilon(1e-12));

  data::write_text_file(other / "000009.txt", "");
  try {
    evaluate_label_dirs(other, gt);
    FAIL("expected FrameMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::FrameMismatch);
    CHECK(std::string(e.what()).find("000009") != std::string::npos);
  }
  data::write_text_file(pred / "000001.txt", data::serialize_kitti_label(std::vector{car(10, 0, 10, 0)}));
  CHECK_THROWS_AS(evaluate_label_dirs(pred, gt), Error);
}

TEST_CASE("ablation variants follow the toggle table") {
  const auto v = ablation_variants();
  REQUIRE(v.size() == 5);
  CHECK(v[0].name == "A");
  CHECK_FALSE(v[0].use_global);
  CHECK_FALSE(v[0].use_decoder);
  CHECK(v[0].pos_mode == model::PosMode::None);
  CHECK(v[1].use_global);
  CHECK_FALSE(v[1].use_decoder);
  CHECK(v[2].use_decoder);
  CHECK(v[2].pos_mode == model::PosMode::None);
  CHECK(v[3].pos_mode == model::PosMode::Sine);
  CHECK(v[4].pos_mode == model::PosMode::Mlp);
  CHECK(find_variant("D").pos_mode == model::PosMode::Sine);
  CHECK_THROWS_AS(find_variant("E"), Error);
}

TEST_CASE("ablation harness yields one row per variant") {
  model::ModelConfig mc;
  mc.d = 8;
  mc.heads = 2;
  mc.n_points = 16;
  mc.n_local_layers = 1;
  mc.head_hidden = 8;
  mc.ffn_hidden = 8;
  data::SceneSpec spec;
  std::vector<data::FrustumSample> samples;
  for (std::uint64_t seed = 0; samples.size() < 8; ++seed) {
    Rng rng(seed);
    const auto scene = data::generate_synthetic_scene(spec, rng);
    std::vector<data::KittiObject> labels;
    for (const auto& o : scene.objects) labels.push_back(o.label);
    for (auto& s : data::filter_samples(data::build_frame_samples("f" + std::to_string(seed),
                                                                  scene.cloud, labels, scene.calib,
                                                                  16, 0))
                       .kept)
      if (samples.size() < 8) samples.push_back(std::move(s));
  }
  training::TrainConfig tc;
  tc.batch_size = 4;
  tc.epochs = 1;
  const std::vector<std::uint64_t> seeds = {0, 1};
  const auto rows = run_ablation(samples, samples, mc, tc, seeds);
  REQUIRE(rows.size() == 5);
  for (const auto& r : rows) {
    CHECK(r.per_seed.size() == 2);
    CHECK(r.miou.spread >= 0.0);
    CHECK(r.per_seed[0].objects.size() == 8);
  }
  CHECK(format_ablation(rows).find("full") != std::string::npos);
}
