#pragma once

#include <algorithm>
#include <functional>
#include <random>
#include <vector>

#include "cat/tensor/ops.hpp"
#include "oracles.hpp"

namespace cat::test {

using tensor::Tensor;
using LossFn = std::function<Tensor(const std::vector<Tensor>&)>;

inline Tensor random_tensor(tensor::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0, bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(tensor::shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Scalar readout sum(out * w) with fixed random w, so every output element
// carries a distinct weight into the gradient.
inline Tensor probe(const Tensor& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return tensor::sum(tensor::mul(out, random_tensor(out.shape(), rng, -1.0, 1.0, false)));
}

// Largest relative error between backward() and central differences over
// every entry of every input.
inline double max_grad_error(const std::vector<Tensor>& inputs, const LossFn& loss,
                             double h = 1e-5, double floor = 1e-6) {
  for (auto t : inputs) t.zero_grad();
  loss(inputs).backward();
  double worst = 0.0;
  for (auto t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double x0 = t.data()[i];
      t.mutable_data()[i] = x0 + h;
      const double fp = loss(inputs).item();
      t.mutable_data()[i] = x0 - h;
      const double fm = loss(inputs).item();
      t.mutable_data()[i] = x0;
      worst = std::max(worst, relative_error(analytic[i], (fp - fm) / (2.0 * h), floor));
    }
  }
  return worst;
}

}  // namespace cat::test
