#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cat::tensor {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

using BackwardFn = std::function<void(std::span<const double> out_grad)>;

struct Node {
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

struct Storage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> node;
};

}  // namespace detail

// Handle to a shared n-dimensional array of doubles (row-major) that may
// carry a gradient and the record of the op that produced it. Copies alias.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  // Negative axes count from the back.
  std::size_t dim(std::ptrdiff_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Direct write access; bypasses graph tracking (optimizer updates, tests).
  std::span<double> mutable_data() { return impl_->data; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  // Allocates a zero gradient buffer on first use.
  std::span<double> mutable_grad() const;
  void zero_grad() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  // Copy of the values with no graph history.
  Tensor detach() const;

  // Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  // calls; intermediate gradients are recomputed each sweep.
  void backward() const;

  detail::Storage* storage() const { return impl_.get(); }
  const std::shared_ptr<detail::Node>& node() const { return impl_->node; }

 private:
  explicit Tensor(std::shared_ptr<detail::Storage> impl) : impl_(std::move(impl)) {}
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>, detail::BackwardFn);

  std::shared_ptr<detail::Storage> impl_;
};

// Builds an op output. When grad mode is on and any input requires grad, the
// result records `backward`, which receives the output gradient and must
// accumulate into the inputs' gradients.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   detail::BackwardFn backward);

bool any_requires_grad(std::initializer_list<const Tensor*> tensors);
bool grad_enabled();

// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Deliberate backward-rule corruption, used only as a negative control for
// the finite-difference harness.
enum class Fault { None, LeakyReluBackward };
void set_fault(Fault fault);
Fault current_fault();

// While enabled, folds the sign pattern of every piecewise-linear
// activation input into a hash, so a finite-difference probe can tell that
// it straddled a kink. Enabling resets the hash.
void set_kink_trace(bool enabled);
bool kink_trace_enabled();
std::uint64_t kink_trace();
void record_kinks(std::span<const double> inputs);

struct Parameter {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<Parameter>;

void zero_grads(ParameterList& params);
std::size_t count_elements(const ParameterList& params);

}  // namespace cat::tensor
