#pragma once

#include <span>
#include <vector>

#include "cat/geometry/types.hpp"
#include "cat/tensor/tensor.hpp"

namespace cat::objective {

using tensor::Tensor;

inline constexpr double kDefaultBoxWeight = 5.0;

struct LossBreakdown {
  Tensor total;  // differentiable, equals box_weight * box_loss + dir_loss
  double box_loss = 0.0;
  double dir_loss = 0.0;
  double total_value = 0.0;
  std::vector<double> ious;  // direction-invariant IoU per object
};

// Box decoded from a raw [7] row in the frustum frame: offset, log dims, yaw.
geom::Box3D decode_raw(const double* raw);

// Mean of 1 - IoU + center-distance penalty over matched pairs, with IoU
// taken as the larger of yaw and yaw + pi. Throws InvalidBox on
// non-positive predicted dimensions.
double diou_loss(std::span<const geom::Box3D> pred, std::span<const geom::Box3D> gt);

// Differentiable form on raw [B, 7] predictions. The clip structure is
// held fixed while differentiating.
Tensor diou_loss(const Tensor& pred_raw, std::span<const geom::Box3D> gt,
                 std::vector<double>* ious = nullptr);

// Mean cross-entropy of [B, 2] logits against the front/back label of each
// ground-truth yaw.
Tensor direction_loss(const Tensor& logits, std::span<const double> gt_yaw);

LossBreakdown total_loss(const Tensor& pred_raw, const Tensor& logits,
                         std::span<const geom::Box3D> gt, double box_weight = kDefaultBoxWeight);

}  // namespace cat::objective
