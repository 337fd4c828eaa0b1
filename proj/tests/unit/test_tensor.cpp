#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "cat/common/error.hpp"
#include "cat/tensor/checkpoint.hpp"
#include "cat/tensor/ops.hpp"
#include "cat/tensor/optim.hpp"
#include "doctest.h"
#include "fd_check.hpp"

using namespace cat;
using namespace cat::tensor;
using cat::test::max_grad_error;
using cat::test::probe;
using cat::test::random_tensor;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

AttentionParams random_attention(std::size_t d, std::mt19937_64& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(d));
  return {random_tensor({d, d}, rng, -a, a), random_tensor({d}, rng, -0.1, 0.1),
          random_tensor({d, d}, rng, -a, a), random_tensor({d}, rng, -0.1, 0.1),
          random_tensor({d, d}, rng, -a, a), random_tensor({d}, rng, -0.1, 0.1),
          random_tensor({d, d}, rng, -a, a), random_tensor({d}, rng, -0.1, 0.1)};
}

std::vector<Tensor> attention_leaves(const AttentionParams& p) {
  return {p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo};
}

}  // namespace

TEST_CASE("matmul identity and ones") {
  const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor v = Tensor::from({3, 1}, {2.5, -1.0, 7.0});
  CHECK(vec(matmul(eye, v)) == vec(v));
  const Tensor out = matmul(Tensor::full({2, 3}, 1.0), Tensor::full({3, 2}, 1.0));
  CHECK(out.shape() == Shape{2, 2});
  for (double x : out.data()) CHECK(x == 3.0);
}

TEST_CASE("matmul gradient matches finite differences") {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({4, 5}, rng);
  const Tensor b = random_tensor({5, 6}, rng);
  // sum() of a bilinear form is linear in each entry, so a wide step is exact.
  const double err = max_grad_error({a, b}, [](const auto& in) { return sum(matmul(in[0], in[1])); },
                                    1e-2);
  CHECK(err < 1e-6);
}

TEST_CASE("matmul broadcasts batch axes") {
  std::mt19937_64 rng(2);
  const Tensor a = random_tensor({2, 3, 4, 5}, rng);
  const Tensor b = random_tensor({3, 5, 2}, rng);
  const Tensor out = matmul(a, b);
  CHECK(out.shape() == Shape{2, 3, 4, 2});
  // Oracle: explicit triple loop for one batch entry.
  double ref = 0.0;
  for (std::size_t k = 0; k < 5; ++k) ref += a.at({1, 2, 3, k}) * b.at({2, k, 1});
  CHECK(out.at({1, 2, 3, 1}) == doctest::Approx(ref).epsilon(1e-14));
  const double err =
      max_grad_error({a, b}, [](const auto& in) { return probe(matmul(in[0], in[1]), 9); }, 1e-2);
  CHECK(err < 1e-6);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
    CHECK(std::string(e.what()).find("(2, 3)") != std::string::npos);
    CHECK(std::string(e.what()).find("(4, 2)") != std::string::npos);
  }
}

TEST_CASE("softmax limits and normalization") {
  const Tensor c = softmax(Tensor::full({2, 4}, 3.0), -1);
  for (double x : c.data()) CHECK(x == doctest::Approx(0.25).epsilon(1e-15));

  const Tensor spike = softmax(Tensor::from({1, 3}, {0.0, 1e6, 0.0}), 1);
  CHECK(spike.at({0, 1}) == 1.0);
  CHECK(spike.at({0, 0}) == 0.0);

  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({5, 7, 3}, rng, -20.0, 20.0);
  const Tensor s = softmax(x, 1);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      double total = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        CHECK(s.at({i, j, k}) >= 0.0);
        total += s.at({i, j, k});
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  const Tensor y = random_tensor({3, 4}, rng);
  CHECK(max_grad_error({y}, [](const auto& in) { return probe(softmax(in[0], 0), 4); }) < 1e-6);
}

TEST_CASE("layer_norm statistics and gradient") {
  const Tensor g1 = Tensor::full({6}, 1.0), b0 = Tensor::zeros({6});
  const Tensor flat = layer_norm(Tensor::full({2, 6}, 4.2), g1, b0);
  for (double v : flat.data()) CHECK(v == 0.0);

  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({4, 6}, rng, -3.0, 3.0);
  const Tensor y = layer_norm(x, g1, b0);
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 6; ++j) m += y.at({r, j});
    m /= 6.0;
    for (std::size_t j = 0; j < 6; ++j) var += (y.at({r, j}) - m) * (y.at({r, j}) - m);
    var /= 6.0;
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-6);
  }

  const Tensor gain = random_tensor({6}, rng, 0.5, 1.5);
  const Tensor bias = random_tensor({6}, rng);
  const double err = max_grad_error({x, gain, bias}, [](const auto& in) {
    return probe(layer_norm(in[0], in[1], in[2]), 6);
  });
  CHECK(err < 1e-5);
}

TEST_CASE("multi-head attention with a single key copies the projected value") {
  std::mt19937_64 rng(7);
  const auto p = random_attention(8, rng);
  const Tensor q = random_tensor({2, 3, 8}, rng);
  const Tensor kv = random_tensor({2, 1, 8}, rng);
  const auto res = multi_head_attention(q, kv, kv, 2, p);
  CHECK(res.weights.shape() == Shape{2, 2, 3, 1});
  const Tensor expected = linear(linear(kv, p.wv, p.bv), p.wo, p.bo);  // [2, 1, 8]
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t c = 0; c < 8; ++c)
        CHECK(res.out.at({b, i, c}) == doctest::Approx(expected.at({b, 0, c})).epsilon(1e-12));
}

TEST_CASE("multi-head attention weights and gradient") {
  std::mt19937_64 rng(8);
  const auto p = random_attention(8, rng);
  const Tensor x = random_tensor({2, 3, 8}, rng);
  const auto res = multi_head_attention(x, x, x, 2, p);
  CHECK(res.out.shape() == Shape{2, 3, 8});
  CHECK(!res.weights.requires_grad());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < 3; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 3; ++j) s += res.weights.at({b, h, i, j});
        CHECK(std::abs(s - 1.0) < 1e-9);
      }
  auto leaves = attention_leaves(p);
  leaves.push_back(x);
  for (bool inv : {false, true}) {
    const double err = max_grad_error(leaves, [inv](const auto& in) {
      const AttentionParams ap{in[0], in[1], in[2], in[3], in[4], in[5], in[6], in[7]};
      return probe(multi_head_attention(in[8], in[8], in[8], 2, ap, inv).out, 11);
    });
    CHECK(err < 1e-4);
  }
  CHECK_THROWS_AS(multi_head_attention(x, x, x, 3, p), Error);
  try {
    multi_head_attention(x, x, x, 3, p);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::HeadDivisibility);
  }
}

TEST_CASE("order-invariant attention is bit-exact under key permutation") {
  std::mt19937_64 rng(12);
  const Tensor q = random_tensor({1, 4, 5}, rng, -3, 3, false);
  const Tensor k = random_tensor({1, 9, 5}, rng, -3, 3, false);
  const Tensor v = random_tensor({1, 9, 6}, rng, -3, 3, false);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto permute_rows = [&](const Tensor& t) {
    std::vector<Tensor> rows;
    for (std::size_t j : perm) rows.push_back(slice(t, 1, j, 1));
    return concat(rows, 1);
  };
  const auto a = scaled_dot_product_attention(q, k, v, true);
  const auto b = scaled_dot_product_attention(q, permute_rows(k), permute_rows(v), true);
  CHECK(vec(a.out) == vec(b.out));
}

TEST_CASE("transpose_batch_seq") {
  const Tensor big = Tensor::zeros({24, 1031, 512});
  CHECK(transpose_batch_seq(big).shape() == Shape{1031, 24, 512});

  std::mt19937_64 rng(13);
  const Tensor x = random_tensor({3, 5, 4}, rng);
  const Tensor t = transpose_batch_seq(x);
  std::uniform_int_distribution<std::size_t> pb(0, 2), pl(0, 4), pc(0, 3);
  for (int i = 0; i < 50; ++i) {
    const std::size_t b = pb(rng), l = pl(rng), c = pc(rng);
    CHECK(x.at({b, l, c}) == t.at({l, b, c}));
  }
  CHECK(vec(transpose_batch_seq(t)) == vec(x));
  CHECK(max_grad_error({x}, [](const auto& in) { return probe(transpose_batch_seq(in[0]), 2); }) <
        1e-8);
  try {
    transpose_batch_seq(Tensor::zeros({2, 2}));
    FAIL("expected RankMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::RankMismatch);
  }
}

TEST_CASE("backward basics") {
  std::mt19937_64 rng(14);
  const Tensor p = random_tensor({3, 2}, rng);
  sum(p).backward();
  for (double g : p.grad()) CHECK(g == 1.0);

  p.zero_grad();
  scale(sum(mul(p, p)), 0.5).backward();
  for (std::size_t i = 0; i < p.numel(); ++i) CHECK(p.grad()[i] == doctest::Approx(p.data()[i]));

  // Accumulates across calls until cleared.
  p.zero_grad();
  sum(p).backward();
  sum(p).backward();
  for (double g : p.grad()) CHECK(g == 2.0);

  // Tensor consumed on two paths.
  const Tensor x = random_tensor({4}, rng);
  add(sum(x), sum(mul(x, x))).backward();
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(x.grad()[i] == doctest::Approx(1.0 + 2.0 * x.data()[i]).epsilon(1e-14));

  try {
    mul(x, x).backward();
    FAIL("expected NonScalarLoss");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonScalarLoss);
  }
}

TEST_CASE("no-grad guard records no graph") {
  const Tensor p = Tensor::full({2}, 1.0, true);
  NoGradGuard guard;
  const Tensor y = mul(p, p);
  CHECK(!y.requires_grad());
  CHECK(!y.node());
}

TEST_CASE("element-wise and structural primitives pass gradient checks") {
  std::mt19937_64 rng(15);
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({3, 4}, rng);
  const Tensor bias = random_tensor({4}, rng);
  const Tensor w = random_tensor({4, 5}, rng);

  CHECK(max_grad_error({a, bias}, [](const auto& in) { return probe(add(in[0], in[1]), 1); }) <
        1e-6);
  CHECK(max_grad_error({a, b}, [](const auto& in) { return probe(sub(in[0], in[1]), 1); }) < 1e-6);
  CHECK(max_grad_error({a, b}, [](const auto& in) { return probe(mul(in[0], in[1]), 1); }) < 1e-6);
  const Tensor lb = random_tensor({5}, rng);
  CHECK(max_grad_error({a, w, lb}, [](const auto& in) {
          return probe(linear(in[0], in[1], in[2]), 1);
        }) < 1e-6);
  CHECK(max_grad_error({a}, [](const auto& in) { return probe(relu(in[0]), 1); }) < 1e-6);
  CHECK(max_grad_error({a}, [](const auto& in) { return probe(leaky_relu(in[0]), 1); }) < 1e-6);
  CHECK(max_grad_error({a, b}, [](const auto& in) { return probe(concat({in[0], in[1]}, 1), 1); }) <
        1e-6);
  CHECK(max_grad_error({a}, [](const auto& in) { return probe(slice(in[0], 1, 1, 2), 1); }) < 1e-6);
  CHECK(max_grad_error({a}, [](const auto& in) {
          return probe(permute(reshape(in[0], {3, 2, 2}), {2, 0, 1}), 1);
        }) < 1e-6);
  CHECK(max_grad_error({bias}, [](const auto& in) { return probe(expand_leading(in[0], 3), 1); }) <
        1e-6);
  CHECK(max_grad_error({a}, [](const auto& in) { return mean(in[0]); }) < 1e-6);

  const std::vector<int> labels{0, 1, 1};
  const Tensor logits = random_tensor({3, 2}, rng, -2, 2);
  CHECK(max_grad_error({logits}, [&](const auto& in) { return cross_entropy(in[0], labels); }) <
        1e-6);
}

TEST_CASE("primitive identities") {
  const Tensor x = Tensor::from({4}, {-2.0, -0.5, 0.0, 3.0});
  CHECK(vec(relu(x)) == std::vector<double>{0.0, 0.0, 0.0, 3.0});
  CHECK(vec(leaky_relu(x)) == std::vector<double>{-0.02, -0.005, 0.0, 3.0});
  CHECK(vec(add(x, Tensor::zeros({4}))) == vec(x));
  CHECK(vec(mul(x, Tensor::full({4}, 1.0))) == vec(x));
  CHECK(sum(x).item() == 0.5);
  CHECK(mean(x).item() == 0.125);
  const Tensor cat2 = concat({Tensor::from({1, 2}, {1, 2}), Tensor::from({1, 1}, {3})}, 1);
  CHECK(vec(cat2) == std::vector<double>{1, 2, 3});
  CHECK(cross_entropy(Tensor::zeros({2, 2}), std::vector<int>{0, 1}).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(cross_entropy(Tensor::from({1, 2}, {50.0, -50.0}), std::vector<int>{0}).item() < 1e-40);
  CHECK_THROWS_AS(slice(x, 0, 3, 2), Error);
  CHECK_THROWS_AS(add(x, Tensor::zeros({3})), Error);
}

TEST_CASE("leaky_relu fault injection breaks the gradient check") {
  std::mt19937_64 rng(16);
  const Tensor a = random_tensor({3, 4}, rng);
  auto loss = [](const auto& in) { return probe(leaky_relu(in[0]), 1); };
  set_fault(Fault::LeakyReluBackward);
  const double bad = max_grad_error({a}, loss);
  set_fault(Fault::None);
  CHECK(bad > 1e-2);
  CHECK(max_grad_error({a}, loss) < 1e-6);
}

TEST_CASE("forward and backward are deterministic") {
  auto run = [] {
    std::mt19937_64 rng(17);
    const auto p = random_attention(8, rng);
    const Tensor x = random_tensor({2, 5, 8}, rng);
    const Tensor loss = probe(multi_head_attention(x, x, x, 4, p).out, 3);
    loss.backward();
    return std::make_pair(loss.item(), vec(Tensor::from(p.wq.shape(), {p.wq.grad().begin(),
                                                                      p.wq.grad().end()})));
  };
  CHECK(run() == run());
}

TEST_CASE("adam_step") {
  Tensor p = Tensor::full({1}, 1.0, true);
  ParameterList params{{"p", p}};
  auto st = make_optimizer(params, 0.1, 0.0);
  p.mutable_grad()[0] = 0.0;
  adam_step(params, st, 0.1);
  CHECK(p.item() == 1.0);

  Tensor q = Tensor::full({1}, 1.0, true);
  ParameterList qp{{"q", q}};
  auto sq = make_optimizer(qp, 0.1, 0.0);
  q.mutable_grad()[0] = 1.0;
  adam_step(qp, sq, 0.1);
  // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
  CHECK(q.item() == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(q.item() == doctest::Approx(0.9).epsilon(1e-7));

  Tensor r = Tensor::full({2}, 2.0, true);
  ParameterList rp{{"r", r}};
  auto sr = make_optimizer(rp, 0.01, 0.05);
  r.mutable_grad();
  double expected = 2.0;
  for (int i = 0; i < 3; ++i) {
    adam_step(rp, sr, 0.01);
    expected *= 1.0 - 0.01 * 0.05;
  }
  CHECK(r.data()[0] == doctest::Approx(expected).epsilon(1e-15));

  ParameterList missing{{"enc.w", Tensor::zeros({2}, true)}};
  auto sm = make_optimizer(missing, 0.1, 0.0);
  try {
    adam_step(missing, sm, 0.1);
    FAIL("expected MissingGradient");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingGradient);
    CHECK(std::string(e.what()).find("enc.w") != std::string::npos);
  }
}

TEST_CASE("cosine_lr") {
  CHECK(cosine_lr(0, 100, 1e-3, 1e-5) == 1e-3);
  CHECK(cosine_lr(100, 100, 1e-3, 1e-5) == 1e-5);
  CHECK(cosine_lr(50, 100, 1e-3, 1e-5) == doctest::Approx((1e-3 + 1e-5) / 2).epsilon(1e-14));
  CHECK(cosine_lr(25, 100, 1.0, 0.0) ==
        doctest::Approx((1.0 + std::cos(std::numbers::pi / 4)) / 2).epsilon(1e-14));
}

TEST_CASE("checkpoint round trip and validation") {
  const auto dir = std::filesystem::temp_directory_path() / "cat_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = dir / "a.ckpt";
  std::mt19937_64 rng(18);
  ParameterList params{{"a.weight", random_tensor({3, 2}, rng)}, {"a.bias", random_tensor({2}, rng)}};
  auto opt = make_optimizer(params, 1e-3, 0.05);
  opt.step = 7;
  opt.m[0][1] = 0.25;
  save_checkpoint(path, "d = 8\n", params, &opt);

  const Checkpoint c = read_checkpoint(path);
  CHECK(c.config_text == "d = 8\n");
  REQUIRE(c.optimizer.has_value());
  CHECK(c.optimizer->step == 7);
  CHECK(c.optimizer->m[0][1] == 0.25);

  ParameterList fresh{{"a.bias", Tensor::zeros({2}, true)}, {"a.weight", Tensor::zeros({3, 2}, true)}};
  load_parameters(c, fresh);
  CHECK(vec(fresh[1].tensor) == vec(params[0].tensor));
  CHECK(vec(fresh[0].tensor) == vec(params[1].tensor));

  ParameterList wrong{{"a.bias", Tensor::zeros({3}, true)}, {"a.weight", Tensor::zeros({3, 2}, true)}};
  try {
    load_parameters(c, wrong);
    FAIL("expected CheckpointMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::CheckpointMismatch);
  }
  ParameterList renamed{{"b.bias", Tensor::zeros({2}, true)}, {"a.weight", Tensor::zeros({3, 2}, true)}};
  CHECK_THROWS_AS(load_parameters(c, renamed), Error);

  // Truncated copy.
  const auto size = std::filesystem::file_size(path);
  std::filesystem::copy_file(path, dir / "b.ckpt", std::filesystem::copy_options::overwrite_existing);
  std::filesystem::resize_file(dir / "b.ckpt", size - 5);
  try {
    read_checkpoint(dir / "b.ckpt");
    FAIL("expected TruncatedFile");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TruncatedFile);
  }
  std::filesystem::remove_all(dir);
}
