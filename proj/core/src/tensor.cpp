#include "ssar/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "ssar/errors.hpp"

namespace ssar {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool enabled) { grad_mode_enabled = enabled; }

NoGradGuard::NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
NoGradGuard::~NoGradGuard() { GradMode::set_enabled(previous_); }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + to_string(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  }
  impl_ = std::make_shared<detail::TensorImpl<T>>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_impl(std::shared_ptr<detail::TensorImpl<T>> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

template <typename T>
void Tensor<T>::require_defined() const {
  if (!impl_) throw Error("use of an undefined tensor");
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  require_defined();
  return impl_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  }
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  require_defined();
  return impl_->data.size();
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  require_defined();
  return impl_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  require_defined();
  return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  require_defined();
  return impl_->requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool requires_grad) {
  require_defined();
  if (impl_->node) throw Error("requires_grad can only be changed on leaf tensors");
  impl_->requires_grad = requires_grad;
}

template <typename T>
bool Tensor<T>::is_leaf() const {
  require_defined();
  return impl_->node == nullptr && !impl_->graph_released;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  require_defined();
  return impl_->grad.size() == impl_->data.size();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw Error("tensor of shape " + to_string(shape()) + " has no gradient");
  return impl_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  require_defined();
  return impl_->ensure_grad();
}

template <typename T>
void Tensor<T>::zero_grad() {
  require_defined();
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
void Tensor<T>::backward() const {
  require_defined();
  if (impl_->graph_released) {
    throw Error("backward called twice on the same graph; double backward is unsupported");
  }
  if (numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(shape()));
  }
  if (!impl_->requires_grad) throw Error("backward on a tensor that does not require grad");
  ComputeGraph<T> graph(*this);
  graph.run_backward();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  require_defined();
  return Tensor(impl_->shape, impl_->data, false);
}

template <typename T>
ComputeGraph<T>::ComputeGraph(const Tensor<T>& root) : root_(root.impl()) {
  // Iterative post-order DFS; a node is emitted after all of its inputs.
  using Impl = detail::TensorImpl<T>;
  std::unordered_set<const Impl*> visited;
  std::vector<std::pair<std::shared_ptr<Impl>, std::size_t>> stack;
  stack.emplace_back(root_, 0);
  visited.insert(root_.get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->node.get();
    if (node && next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (visited.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
      continue;
    }
    order_.push_back(impl);
    stack.pop_back();
  }
}

template <typename T>
std::vector<std::string> ComputeGraph<T>::op_names() const {
  std::vector<std::string> names;
  for (const auto& impl : order_) {
    if (impl->node) names.push_back(impl->node->op);
  }
  return names;
}

template <typename T>
void ComputeGraph<T>::run_backward() {
  auto& seed = root_->ensure_grad();
  std::fill(seed.begin(), seed.end(), T(1));
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    auto& impl = *it;
    if (!impl->node) continue;
    if (impl->grad.size() == impl->data.size()) impl->node->backward(impl->data, impl->grad);
  }
  for (auto& impl : order_) {
    if (!impl->node) continue;
    impl->node.reset();
    impl->graph_released = true;
    std::vector<T>().swap(impl->grad);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class ComputeGraph<float>;
template class ComputeGraph<double>;

}  // namespace ssar
