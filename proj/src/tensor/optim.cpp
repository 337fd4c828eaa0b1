#include "cat/tensor/optim.hpp"

#include <cmath>
#include <numbers>

#include "cat/common/error.hpp"

namespace cat::tensor {

OptimizerState make_optimizer(const ParameterList& params, double lr, double weight_decay) {
  OptimizerState s;
  s.lr = lr;
  s.weight_decay = weight_decay;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.numel(), 0.0);
    s.v.emplace_back(p.tensor.numel(), 0.0);
  }
  return s;
}

void adam_step(ParameterList& params, OptimizerState& state, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorKind::ShapeMismatch, "optimizer state tracks " +
                                              std::to_string(state.m.size()) + " tensors, model has " +
                                              std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].tensor.has_grad()) {
      throw Error(ErrorKind::MissingGradient, "no gradient for parameter " + params[i].name);
    }
    if (state.m[i].size() != params[i].tensor.numel()) {
      throw Error(ErrorKind::ShapeMismatch, "moment buffer size mismatch for " + params[i].name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].tensor.mutable_data();
    const auto g = params[i].tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] -= lr * state.weight_decay * w[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double cosine_lr(std::uint64_t step, std::uint64_t total, double lr_max, double lr_min) {
  if (total == 0) return lr_max;
  if (step >= total) return lr_min;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return lr_min + (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

}  // namespace cat::tensor
