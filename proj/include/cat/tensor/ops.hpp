#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cat/tensor/tensor.hpp"

namespace cat::tensor {

// Element-wise. `b` may equal `a` in shape or match a trailing suffix of it
// (bias-style broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.01);

// a[..., m, k] x b[..., k, n]. Leading batch extents broadcast when one side
// has extent 1 or omits the axis.
Tensor matmul(const Tensor& a, const Tensor& b);
// x[..., in] * weight[in, out] + bias[out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax(const Tensor& x, std::ptrdiff_t axis);
// Normalizes over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-9);

Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis);
Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
// (B, L, d) -> (L, B, d)
Tensor transpose_batch_seq(const Tensor& x);
// x -> (n, x.shape...), repeating x along a new leading axis.
Tensor expand_leading(const Tensor& x, std::size_t n);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Mean negative log-likelihood of integer class labels under softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

struct AttentionResult {
  Tensor out;      // [..., Lq, dv]
  Tensor weights;  // [..., Lq, Lk], rows sum to 1; not differentiable
};

// Scaled dot-product attention over the last two axes with leading axes as
// independent groups. With `order_invariant`, sums over the key axis are
// taken in sorted order so that permuting the keys leaves every output bit
// unchanged.
AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                             bool order_invariant = false);

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // w*: [d, d], b*: [d]
};

// Standard multi-head attention with per-head projections and an output
// projection. q: [B, Lq, d]; k, v: [B, Lk, d]; weights: [B, heads, Lq, Lk].
AttentionResult multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                     std::size_t heads, const AttentionParams& params,
                                     bool order_invariant = false);

}  // namespace cat::tensor
