#include "cat/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cat/common/error.hpp"
#include "kernels.hpp"

namespace cat::tensor {

namespace {

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw Error(ErrorKind::ShapeMismatch, op + ": incompatible shapes " + shape_str(a) + " and " +
                                            shape_str(b));
}

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank, const char* op) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw Error(ErrorKind::RankMismatch, std::string(op) + ": axis " + std::to_string(axis) +
                                             " invalid for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

std::size_t prod(const Shape& s, std::size_t begin, std::size_t end) {
  std::size_t n = 1;
  for (std::size_t i = begin; i < end; ++i) n *= s[i];
  return n;
}

// Sum in ascending order: the result depends only on the multiset of values.
double sorted_sum(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  if (!any_requires_grad({&x})) return make_result(x.shape(), std::move(out), {}, nullptr);
  return make_result(x.shape(), std::move(out), {x}, [x, deriv](std::span<const double> g) {
    auto gx = x.mutable_grad();
    const auto xv = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    const auto ad = a.data(), bd = b.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  if (!is_suffix(a.shape(), b.shape())) shape_error("add", a.shape(), b.shape());
  const std::size_t inner = b.numel();
  const auto ad = a.data(), bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i % inner];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b, inner](std::span<const double> g) {
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  const auto ad = a.data(), bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    const auto av = a.data(), bv = b.data();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double v) { return v * factor; },
               [factor](double) { return factor; });
}

Tensor relu(const Tensor& x) {
  record_kinks(x.data());
  return unary(x, [](double v) { return v < 0.0 ? 0.0 : v; },
               [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  record_kinks(x.data());
  const double back_slope = current_fault() == Fault::LeakyReluBackward ? 0.5 : slope;
  return unary(x, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [back_slope](double v) { return v > 0.0 ? 1.0 : back_slope; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) shape_error("matmul", a.shape(), b.shape());
  const std::size_t M = a.dim(-2), K = a.dim(-1), N = b.dim(-1);
  if (b.dim(-2) != K) shape_error("matmul", a.shape(), b.shape());

  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const std::size_t rank = std::max(batch_a.size(), batch_b.size());
  Shape batch(rank);
  std::vector<std::size_t> stride_a(rank, 0), stride_b(rank, 0);
  {
    std::size_t sa = 1, sb = 1;
    for (std::size_t i = 0; i < rank; ++i) {
      const std::size_t r = rank - 1 - i;
      const std::size_t ea = i < batch_a.size() ? batch_a[batch_a.size() - 1 - i] : 1;
      const std::size_t eb = i < batch_b.size() ? batch_b[batch_b.size() - 1 - i] : 1;
      if (ea != eb && ea != 1 && eb != 1) shape_error("matmul", a.shape(), b.shape());
      batch[r] = std::max(ea, eb);
      stride_a[r] = ea == 1 ? 0 : sa;
      stride_b[r] = eb == 1 ? 0 : sb;
      sa *= ea;
      sb *= eb;
    }
  }
  const std::size_t nbatch = shape_numel(batch);
  std::vector<std::size_t> off_a(nbatch), off_b(nbatch);
  for (std::size_t flat = 0; flat < nbatch; ++flat) {
    std::size_t rem = flat, oa = 0, ob = 0;
    for (std::size_t r = rank; r-- > 0;) {
      const std::size_t idx = rem % batch[r];
      rem /= batch[r];
      oa += idx * stride_a[r];
      ob += idx * stride_b[r];
    }
    off_a[flat] = oa;
    off_b[flat] = ob;
  }

  Shape out_shape = batch;
  out_shape.push_back(M);
  out_shape.push_back(N);
  std::vector<double> out(nbatch * M * N);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t i = 0; i < nbatch; ++i) {
    kernels::gemm_nn(M, K, N, ad + off_a[i] * M * K, bd + off_b[i] * K * N, out.data() + i * M * N,
                     false);
  }
  return make_result(std::move(out_shape), std::move(out), {a, b},
                     [a, b, M, K, N, off_a, off_b](std::span<const double> g) {
                       const double* av = a.data().data();
                       const double* bv = b.data().data();
                       for (std::size_t i = 0; i < off_a.size(); ++i) {
                         const double* gi = g.data() + i * M * N;
                         if (a.requires_grad()) {
                           kernels::gemm_nt(M, N, K, gi, bv + off_b[i] * K * N,
                                            a.mutable_grad().data() + off_a[i] * M * K, true);
                         }
                         if (b.requires_grad()) {
                           kernels::gemm_tn_acc(M, K, N, av + off_a[i] * M * K, gi,
                                                b.mutable_grad().data() + off_b[i] * K * N);
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(0)) {
    shape_error("linear", x.shape(), weight.shape());
  }
  const std::size_t in = weight.dim(0), outf = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) {
    shape_error("linear(bias)", weight.shape(), bias.shape());
  }
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outf;
  std::vector<double> out(rows * outf);
  kernels::gemm_nn(rows, in, outf, x.data().data(), weight.data().data(), out.data(), false);
  if (bias.defined()) {
    const auto bd = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < outf; ++j) out[r * outf + j] += bd[j];
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(out_shape), std::move(out), std::move(inputs),
                     [x, weight, bias, rows, in, outf](std::span<const double> g) {
                       if (x.requires_grad()) {
                         kernels::gemm_nt(rows, outf, in, g.data(), weight.data().data(),
                                          x.mutable_grad().data(), true);
                       }
                       if (weight.requires_grad()) {
                         kernels::gemm_tn_acc(rows, in, outf, x.data().data(), g.data(),
                                              weight.mutable_grad().data());
                       }
                       if (bias.defined() && bias.requires_grad()) {
                         auto gb = bias.mutable_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < outf; ++j) gb[j] += g[r * outf + j];
                       }
                     });
}

Tensor softmax(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
  const std::size_t outer = prod(x.shape(), 0, ax);
  const std::size_t len = x.shape()[ax];
  const std::size_t inner = prod(x.shape(), ax + 1, x.rank());
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      double s = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xd[base + j * inner] - mx);
        out[base + j * inner] = e;
        s += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= s;
    }
  }
  if (!any_requires_grad({&x})) return make_result(x.shape(), std::move(out), {}, nullptr);
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result(x.shape(), std::move(out), {x},
                     [x, y, outer, len, inner](std::span<const double> g) {
                       auto gx = x.mutable_grad();
                       const auto& yv = *y;
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t in = 0; in < inner; ++in) {
                           const std::size_t base = o * len * inner + in;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < len; ++j)
                             dot += g[base + j * inner] * yv[base + j * inner];
                           for (std::size_t j = 0; j < len; ++j) {
                             const std::size_t p = base + j * inner;
                             gx[p] += yv[p] * (g[p] - dot);
                           }
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) shape_error("layer_norm", x.shape(), gain.shape());
  const std::size_t d = x.dim(-1);
  if (gain.numel() != d || bias.numel() != d) shape_error("layer_norm", x.shape(), gain.shape());
  const std::size_t rows = x.numel() / d;
  const auto xd = x.data(), gd = gain.data(), bd = bias.data();
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += row[j];
    m /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - m) * (row[j] - m);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - m) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gd[j] + bd[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias},
                     [x, gain, bias, xhat, rstd, rows, d](std::span<const double> g) {
                       const auto gd = gain.data();
                       const auto& h = *xhat;
                       if (gain.requires_grad() || bias.requires_grad()) {
                         auto gg = gain.mutable_grad();
                         auto gb = bias.mutable_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) {
                             gg[j] += g[r * d + j] * h[r * d + j];
                             gb[j] += g[r * d + j];
                           }
                       }
                       if (!x.requires_grad()) return;
                       auto gx = x.mutable_grad();
                       const double inv_d = 1.0 / static_cast<double>(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mean_dh = 0.0, mean_dh_h = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dh = g[r * d + j] * gd[j];
                           mean_dh += dh;
                           mean_dh_h += dh * h[r * d + j];
                         }
                         mean_dh *= inv_d;
                         mean_dh_h *= inv_d;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dh = g[r * d + j] * gd[j];
                           gx[r * d + j] +=
                               (*rstd)[r] * (dh - mean_dh - h[r * d + j] * mean_dh_h);
                         }
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis) {
  if (parts.empty()) throw Error(ErrorKind::ShapeMismatch, "concat of zero tensors");
  const Shape& first = parts.front().shape();
  const std::size_t ax = normalize_axis(axis, first.size(), "concat");
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) shape_error("concat", first, p.shape());
    for (std::size_t i = 0; i < first.size(); ++i)
      if (i != ax && p.shape()[i] != first[i]) shape_error("concat", first, p.shape());
    out_shape[ax] += p.shape()[ax];
  }
  const std::size_t outer = prod(first, 0, ax);
  const std::size_t inner = prod(first, ax + 1, first.size());
  const std::size_t out_chunk = out_shape[ax] * inner;
  std::vector<double> out(outer * out_chunk);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t chunk = p.shape()[ax] * inner;
    const auto pd = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pd.data() + o * chunk, chunk, out.data() + o * out_chunk + off);
    off += chunk;
  }
  return make_result(std::move(out_shape), std::move(out), parts,
                     [parts, offsets, outer, inner, out_chunk, ax](std::span<const double> g) {
                       for (std::size_t i = 0; i < parts.size(); ++i) {
                         if (!parts[i].requires_grad()) continue;
                         auto gp = parts[i].mutable_grad();
                         const std::size_t chunk = parts[i].shape()[ax] * inner;
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t j = 0; j < chunk; ++j)
                             gp[o * chunk + j] += g[o * out_chunk + offsets[i] + j];
                       }
                     });
}

Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "slice");
  if (start + length > x.shape()[ax]) {
    throw Error(ErrorKind::IndexOutOfRange, "slice [" + std::to_string(start) + ", " +
                                                std::to_string(start + length) + ") of axis " +
                                                std::to_string(ax) + " in " + shape_str(x.shape()));
  }
  const std::size_t outer = prod(x.shape(), 0, ax);
  const std::size_t inner = prod(x.shape(), ax + 1, x.rank());
  const std::size_t in_chunk = x.shape()[ax] * inner;
  const std::size_t out_chunk = length * inner;
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  std::vector<double> out(outer * out_chunk);
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xd.data() + o * in_chunk + start * inner, out_chunk, out.data() + o * out_chunk);
  return make_result(std::move(out_shape), std::move(out), {x},
                     [x, outer, inner, in_chunk, out_chunk, start](std::span<const double> g) {
                       auto gx = x.mutable_grad();
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t j = 0; j < out_chunk; ++j)
                           gx[o * in_chunk + start * inner + j] += g[o * out_chunk + j];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [x](std::span<const double> g) {
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const std::size_t rank = x.rank();
  if (order.size() != rank) {
    throw Error(ErrorKind::RankMismatch, "permute order of length " + std::to_string(order.size()) +
                                             " for shape " + shape_str(x.shape()));
  }
  std::vector<bool> seen(rank, false);
  for (std::size_t o : order) {
    if (o >= rank || seen[o]) throw Error(ErrorKind::RankMismatch, "permute order is not a permutation");
    seen[o] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.shape()[i];
  Shape out_shape(rank);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.shape()[order[i]];
    src_stride[i] = in_stride[order[i]];
  }
  // gather[i] = source offset of output element i
  auto gather = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    (*gather)[i] = src;
    for (std::size_t r = rank; r-- > 0;) {
      ++idx[r];
      src += src_stride[r];
      if (idx[r] < out_shape[r]) break;
      src -= src_stride[r] * out_shape[r];
      idx[r] = 0;
    }
  }
  const auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[(*gather)[i]];
  return make_result(std::move(out_shape), std::move(out), {x}, [x, gather](std::span<const double> g) {
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*gather)[i]] += g[i];
  });
}

Tensor transpose_batch_seq(const Tensor& x) {
  if (x.rank() != 3) {
    throw Error(ErrorKind::RankMismatch,
                "transpose_batch_seq expects rank 3, got " + shape_str(x.shape()));
  }
  return permute(x, {1, 0, 2});
}

Tensor expand_leading(const Tensor& x, std::size_t n) {
  Shape out_shape{n};
  out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
  const auto xd = x.data();
  std::vector<double> out;
  out.reserve(n * xd.size());
  for (std::size_t i = 0; i < n; ++i) out.insert(out.end(), xd.begin(), xd.end());
  return make_result(std::move(out_shape), std::move(out), {x}, [x, n](std::span<const double> g) {
    auto gx = x.mutable_grad();
    const std::size_t m = gx.size();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gx[j] += g[i * m + j];
  });
}

Tensor sum(const Tensor& x) {
  const auto xd = x.data();
  const double s = std::accumulate(xd.begin(), xd.end(), 0.0);
  return make_result({}, {s}, {x}, [x](std::span<const double> g) {
    auto gx = x.mutable_grad();
    for (double& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw Error(ErrorKind::ShapeMismatch, "cross_entropy: logits " + shape_str(logits.shape()) +
                                              " with " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  const auto ld = logits.data();
  auto probs = std::make_shared<std::vector<double>>(B * C);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= C) {
      throw Error(ErrorKind::IndexOutOfRange, "cross_entropy label " + std::to_string(label));
    }
    const double* row = ld.data() + b * C;
    const double mx = *std::max_element(row, row + C);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(row[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < C; ++c) (*probs)[b * C + c] = std::exp(row[c] - lse);
    total += lse - row[label];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result({}, {total / static_cast<double>(B)}, {logits},
                     [logits, probs, lab, B, C](std::span<const double> g) {
                       auto gl = logits.mutable_grad();
                       const double w = g[0] / static_cast<double>(B);
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t c = 0; c < C; ++c) {
                           const double target = static_cast<int>(c) == lab[b] ? 1.0 : 0.0;
                           gl[b * C + c] += w * ((*probs)[b * C + c] - target);
                         }
                     });
}

AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                             bool order_invariant) {
  if (q.rank() < 2 || k.rank() != q.rank() || v.rank() != q.rank()) {
    shape_error("attention", q.shape(), k.shape());
  }
  const std::size_t r = q.rank();
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (k.shape()[i] != q.shape()[i] || v.shape()[i] != q.shape()[i]) {
      shape_error("attention", q.shape(), k.shape());
    }
  }
  const std::size_t Lq = q.dim(-2), dh = q.dim(-1), Lk = k.dim(-2), dv = v.dim(-1);
  if (k.dim(-1) != dh || v.dim(-2) != Lk) shape_error("attention", k.shape(), v.shape());
  const std::size_t G = prod(q.shape(), 0, r - 2);
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  Shape w_shape(q.shape().begin(), q.shape().end() - 2);
  w_shape.push_back(Lq);
  w_shape.push_back(Lk);
  Shape o_shape(q.shape().begin(), q.shape().end() - 1);
  o_shape.push_back(dv);

  std::vector<double> w(G * Lq * Lk);
  std::vector<double> o(G * Lq * dv);
  const double* qd = q.data().data();
  const double* kd = k.data().data();
  const double* vd = v.data().data();
  std::vector<double> scratch;
  for (std::size_t g = 0; g < G; ++g) {
    double* wg = w.data() + g * Lq * Lk;
    kernels::gemm_nt(Lq, dh, Lk, qd + g * Lq * dh, kd + g * Lk * dh, wg, false);
    for (std::size_t i = 0; i < Lq; ++i) {
      double* row = wg + i * Lk;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < Lk; ++j) {
        row[j] *= sc;
        mx = std::max(mx, row[j]);
      }
      for (std::size_t j = 0; j < Lk; ++j) row[j] = std::exp(row[j] - mx);
      double s = 0.0;
      if (order_invariant) {
        scratch.assign(row, row + Lk);
        s = sorted_sum(scratch);
      } else {
        for (std::size_t j = 0; j < Lk; ++j) s += row[j];
      }
      for (std::size_t j = 0; j < Lk; ++j) row[j] /= s;
    }
    double* og = o.data() + g * Lq * dv;
    const double* vg = vd + g * Lk * dv;
    if (order_invariant) {
      for (std::size_t i = 0; i < Lq; ++i)
        for (std::size_t c = 0; c < dv; ++c) {
          scratch.resize(Lk);
          for (std::size_t j = 0; j < Lk; ++j) scratch[j] = wg[i * Lk + j] * vg[j * dv + c];
          og[i * dv + c] = sorted_sum(scratch);
        }
    } else {
      kernels::gemm_nn(Lq, Lk, dv, wg, vg, og, false);
    }
  }

  Tensor weights = Tensor::from(std::move(w_shape), std::move(w));
  Tensor out = make_result(
      std::move(o_shape), std::move(o), {q, k, v},
      [q, k, v, weights, G, Lq, Lk, dh, dv, sc](std::span<const double> gout) {
        const double* wd = weights.data().data();
        const double* qd = q.data().data();
        const double* kd = k.data().data();
        const double* vd = v.data().data();
        std::vector<double> dw(Lq * Lk);
        for (std::size_t g = 0; g < G; ++g) {
          const double* wg = wd + g * Lq * Lk;
          const double* go = gout.data() + g * Lq * dv;
          if (v.requires_grad()) {
            kernels::gemm_tn_acc(Lq, Lk, dv, wg, go, v.mutable_grad().data() + g * Lk * dv);
          }
          if (!q.requires_grad() && !k.requires_grad()) continue;
          kernels::gemm_nt(Lq, dv, Lk, go, vd + g * Lk * dv, dw.data(), false);
          for (std::size_t i = 0; i < Lq; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < Lk; ++j) dot += wg[i * Lk + j] * dw[i * Lk + j];
            for (std::size_t j = 0; j < Lk; ++j)
              dw[i * Lk + j] = wg[i * Lk + j] * (dw[i * Lk + j] - dot) * sc;
          }
          if (q.requires_grad()) {
            kernels::gemm_nn(Lq, Lk, dh, dw.data(), kd + g * Lk * dh,
                             q.mutable_grad().data() + g * Lq * dh, true);
          }
          if (k.requires_grad()) {
            kernels::gemm_tn_acc(Lq, Lk, dh, dw.data(), qd + g * Lq * dh,
                                 k.mutable_grad().data() + g * Lk * dh);
          }
        }
      });
  return {out, weights};
}

AttentionResult multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                     std::size_t heads, const AttentionParams& p,
                                     bool order_invariant) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw Error(ErrorKind::ShapeMismatch, "multi_head_attention expects rank-3 inputs, got " +
                                              shape_str(q.shape()) + ", " + shape_str(k.shape()) +
                                              ", " + shape_str(v.shape()));
  }
  const std::size_t B = q.dim(0), Lq = q.dim(1), d = q.dim(2), Lk = k.dim(1);
  if (k.dim(0) != B || v.dim(0) != B || k.dim(2) != d || v.dim(2) != d || v.dim(1) != Lk) {
    throw Error(ErrorKind::ShapeMismatch, "multi_head_attention: q " + shape_str(q.shape()) +
                                              ", k " + shape_str(k.shape()) + ", v " +
                                              shape_str(v.shape()));
  }
  if (heads == 0 || d % heads != 0) {
    throw Error(ErrorKind::HeadDivisibility, "width " + std::to_string(d) +
                                                 " is not divisible by " + std::to_string(heads) +
                                                 " heads");
  }
  const std::size_t dh = d / heads;
  auto split = [&](const Tensor& x, std::size_t L) {
    return permute(reshape(x, {B, L, heads, dh}), {0, 2, 1, 3});
  };
  const Tensor qh = split(linear(q, p.wq, p.bq), Lq);
  const Tensor kh = split(linear(k, p.wk, p.bk), Lk);
  const Tensor vh = split(linear(v, p.wv, p.bv), Lk);
  AttentionResult att = scaled_dot_product_attention(qh, kh, vh, order_invariant);
  const Tensor merged = reshape(permute(att.out, {0, 2, 1, 3}), {B, Lq, d});
  return {linear(merged, p.wo, p.bo), att.weights};
}

}  // namespace cat::tensor
