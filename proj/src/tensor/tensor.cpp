#include "cat/tensor/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "cat/common/error.hpp"

namespace cat::tensor {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<Fault> g_fault{Fault::None};

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto s = std::make_shared<detail::Storage>();
  s->data.assign(shape_numel(shape), value);
  s->shape = std::move(shape);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw Error(ErrorKind::ShapeMismatch, "shape " + shape_str(shape) + " needs " +
                                              std::to_string(shape_numel(shape)) + " values, got " +
                                              std::to_string(values.size()));
  }
  auto s = std::make_shared<detail::Storage>();
  s->shape = std::move(shape);
  s->data = std::move(values);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

std::size_t Tensor::dim(std::ptrdiff_t axis) const {
  const auto r = static_cast<std::ptrdiff_t>(rank());
  const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw Error(ErrorKind::RankMismatch,
                "axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(a)];
}

std::span<double> Tensor::mutable_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() const { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

double Tensor::item() const {
  if (numel() != 1) {
    throw Error(ErrorKind::ShapeMismatch, "item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) {
    throw Error(ErrorKind::RankMismatch, "index rank does not match shape " + shape_str(shape()));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= impl_->shape[axis]) {
      throw Error(ErrorKind::IndexOutOfRange, "index out of range for shape " + shape_str(shape()));
    }
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

Tensor Tensor::detach() const { return from(shape(), impl_->data); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw Error(ErrorKind::NonScalarLoss,
                "backward() needs a scalar loss, got shape " + shape_str(shape()));
  }
  // Post-order over the graph; reversed it is a valid topological order.
  std::vector<detail::Storage*> order;
  std::unordered_set<detail::Storage*> visited;
  struct Frame {
    detail::Storage* s;
    std::size_t next;
  };
  std::vector<Frame> stack{{impl_.get(), 0}};
  visited.insert(impl_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    const auto& node = f.s->node;
    if (node && f.next < node->inputs.size()) {
      detail::Storage* child = node->inputs[f.next++].storage();
      if (child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
      continue;
    }
    order.push_back(f.s);
    stack.pop_back();
  }
  for (detail::Storage* s : order) {
    if (s->node) s->grad.assign(s->data.size(), 0.0);
  }
  if (impl_->grad.empty()) impl_->grad.assign(1, 0.0);
  impl_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Storage* s = *it;
    if (s->node && s->node->backward) s->node->backward(s->grad);
  }
}

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   detail::BackwardFn backward) {
  auto s = std::make_shared<detail::Storage>();
  s->shape = std::move(shape);
  s->data = std::move(data);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) needs = needs || (t.defined() && t.requires_grad());
  }
  if (needs && backward) {
    s->requires_grad = true;
    s->node = std::make_shared<detail::Node>(detail::Node{std::move(inputs), std::move(backward)});
  }
  return Tensor(std::move(s));
}

bool any_requires_grad(std::initializer_list<const Tensor*> tensors) {
  if (!g_grad_enabled) return false;
  return std::any_of(tensors.begin(), tensors.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void set_fault(Fault fault) { g_fault.store(fault); }
Fault current_fault() { return g_fault.load(); }

namespace {
bool g_kink_trace = false;
std::uint64_t g_kink_hash = 0;
}  // namespace

void set_kink_trace(bool enabled) {
  g_kink_trace = enabled;
  g_kink_hash = 0;
}
bool kink_trace_enabled() { return g_kink_trace; }
std::uint64_t kink_trace() { return g_kink_hash; }

void record_kinks(std::span<const double> inputs) {
  if (!g_kink_trace) return;
  std::uint64_t h = g_kink_hash;
  for (double v : inputs) h = (h ^ (v > 0.0 ? 1u : 2u)) * 1099511628211ULL;
  g_kink_hash = h;
}

void zero_grads(ParameterList& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

std::size_t count_elements(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace cat::tensor
