#include "cat/objective/loss.hpp"

#include <cmath>
#include <string>

#include "cat/common/error.hpp"
#include "cat/geometry/box_math.hpp"
#include "cat/geometry/dual.hpp"
#include "cat/geometry/geometry.hpp"
#include "cat/tensor/ops.hpp"

namespace cat::objective {

namespace {

using D7 = geom::Dual<7>;

template <class T>
geom::kernel::BoxT<T> lift(const geom::Box3D& b) {
  return {T(b.cx), T(b.cy), T(b.cz), T(b.width), T(b.length), T(b.height), T(b.yaw)};
}

template <class T>
T pair_loss(const geom::kernel::BoxT<T>& p, const geom::kernel::BoxT<T>& g, double* iou_out) {
  const T iou = geom::kernel::direction_invariant_iou(p, g);
  if (iou_out) *iou_out = geom::value_of(iou);
  return T(1.0) - iou + geom::kernel::diou_penalty(p, g);
}

void check_batch(std::size_t pred, std::size_t gt) {
  if (pred != gt) {
    throw Error(ErrorKind::ShapeMismatch, std::to_string(pred) + " predictions for " +
                                              std::to_string(gt) + " ground-truth boxes");
  }
  if (pred == 0) throw Error(ErrorKind::EmptySet, "loss over an empty batch");
}

}  // namespace

geom::Box3D decode_raw(const double* raw) {
  return {raw[0], raw[1], raw[2], std::exp(raw[3]), std::exp(raw[4]), std::exp(raw[5]), raw[6]};
}

double diou_loss(std::span<const geom::Box3D> pred, std::span<const geom::Box3D> gt) {
  check_batch(pred.size(), gt.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto& p = pred[i];
    if (!(p.width > 0.0 && p.length > 0.0 && p.height > 0.0)) {
      throw Error(ErrorKind::InvalidBox, "predicted box " + std::to_string(i) +
                                             " has non-positive dimensions");
    }
    total += pair_loss(lift<double>(p), lift<double>(gt[i]), nullptr);
  }
  return total / static_cast<double>(pred.size());
}

Tensor diou_loss(const Tensor& pred_raw, std::span<const geom::Box3D> gt,
                 std::vector<double>* ious) {
  if (pred_raw.rank() != 2 || pred_raw.dim(1) != 7) {
    throw Error(ErrorKind::ShapeMismatch,
                "box predictions must be (B, 7), got " + tensor::shape_str(pred_raw.shape()));
  }
  const std::size_t B = pred_raw.dim(0);
  check_batch(B, gt.size());
  const auto raw = pred_raw.data();
  std::vector<double> jac(B * 7);
  double total = 0.0;
  if (ious) ious->assign(B, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const double* r = raw.data() + b * 7;
    geom::kernel::BoxT<D7> p{D7::variable(r[0], 0),      D7::variable(r[1], 1),
                             D7::variable(r[2], 2),      exp(D7::variable(r[3], 3)),
                             exp(D7::variable(r[4], 4)), exp(D7::variable(r[5], 5)),
                             D7::variable(r[6], 6)};
    const D7 l = pair_loss(p, lift<D7>(gt[b]), ious ? &(*ious)[b] : nullptr);
    if (!std::isfinite(l.v)) {
      throw Error(ErrorKind::NonFiniteLoss, "box loss of object " + std::to_string(b) + " is " +
                                                std::to_string(l.v));
    }
    total += l.v;
    for (std::size_t k = 0; k < 7; ++k) jac[b * 7 + k] = l.d[k];
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  return tensor::make_result({}, {total * inv_b}, {pred_raw},
                             [pred_raw, jac, inv_b](std::span<const double> g) {
                               auto gp = pred_raw.mutable_grad();
                               for (std::size_t i = 0; i < jac.size(); ++i)
                                 gp[i] += g[0] * inv_b * jac[i];
                             });
}

Tensor direction_loss(const Tensor& logits, std::span<const double> gt_yaw) {
  std::vector<int> labels;
  labels.reserve(gt_yaw.size());
  for (double y : gt_yaw) labels.push_back(static_cast<int>(geom::direction_label(y)));
  return tensor::cross_entropy(logits, labels);
}

LossBreakdown total_loss(const Tensor& pred_raw, const Tensor& logits,
                         std::span<const geom::Box3D> gt, double box_weight) {
  LossBreakdown out;
  const Tensor box = diou_loss(pred_raw, gt, &out.ious);
  std::vector<double> yaws;
  for (const auto& g : gt) yaws.push_back(g.yaw);
  const Tensor dir = direction_loss(logits, yaws);
  out.total = tensor::add(tensor::scale(box, box_weight), dir);
  out.box_loss = box.item();
  out.dir_loss = dir.item();
  out.total_value = out.total.item();
  return out;
}

}  // namespace cat::objective
