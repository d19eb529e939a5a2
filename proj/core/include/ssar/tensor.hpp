#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ssar {

using Shape = std::vector<std::size_t>;

/// Product of the extents; 1 for a rank-0 (scalar) shape.
std::size_t shape_numel(const Shape& shape);

/// Formats as "[2, 3, 4]".
std::string to_string(const Shape& shape);

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct TensorImpl;

/// Backward rule of one executed operation. `backward` receives the
/// operation's output values and their gradient, and accumulates into the
/// inputs' grad buffers.
template <typename T>
struct GradNode {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::function<void(std::span<const T> out, std::span<const T> grad_out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool graph_released = false;
  std::shared_ptr<GradNode<T>> node;

  /// Grad buffer, zero-filled on first use.
  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Thread-local switch for graph recording. Inference paths disable it so no
/// backward closures are allocated.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major N-dimensional array with optional gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage. Values are
/// treated as immutable once a tensor has been consumed by an operation; only
/// parameter updates (between optimizer steps) and initialization write
/// through mutable_data().
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor from_impl(std::shared_ptr<detail::TensorImpl<T>> impl);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const T> data() const;
  std::span<T> mutable_data();
  /// Value of a single-element tensor.
  T item() const;

  bool requires_grad() const;
  void set_requires_grad(bool requires_grad);
  /// True for tensors not produced by a recorded operation.
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  /// Reverse-mode pass from this scalar. Leaf gradients accumulate additively;
  /// the recorded graph is released afterwards.
  void backward() const;

  /// Copy of the values with no graph attached.
  Tensor detach() const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(numel());
    auto src = data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
    return Tensor<U>(shape(), std::move(out), requires_grad());
  }

  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }

 private:
  void require_defined() const;

  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

/// Topologically ordered record of the operations reachable from a root
/// tensor. Every entry's inputs precede it.
template <typename T>
class ComputeGraph {
 public:
  explicit ComputeGraph(const Tensor<T>& root);

  const std::vector<std::shared_ptr<detail::TensorImpl<T>>>& order() const { return order_; }
  /// Operation names in execution order (leaves excluded).
  std::vector<std::string> op_names() const;

  /// Seeds d(root)/d(root) = 1, visits every recorded operation once in
  /// reverse order, then releases the graph.
  void run_backward();

 private:
  std::shared_ptr<detail::TensorImpl<T>> root_;
  std::vector<std::shared_ptr<detail::TensorImpl<T>>> order_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class ComputeGraph<float>;
extern template class ComputeGraph<double>;

}  // namespace ssar
