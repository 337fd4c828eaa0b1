#pragma once

#include <cstdint>
#include <vector>

#include "cat/tensor/tensor.hpp"

namespace cat::tensor {

struct OptimizerState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// Moment buffers sized to `params`, all zero.
OptimizerState make_optimizer(const ParameterList& params, double lr, double weight_decay);

// Decoupled weight decay followed by a bias-corrected Adam update at `lr`.
// Gradients are left in place.
void adam_step(ParameterList& params, OptimizerState& state, double lr);

double cosine_lr(std::uint64_t step, std::uint64_t total, double lr_max, double lr_min);

}  // namespace cat::tensor
