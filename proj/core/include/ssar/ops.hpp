#pragma once

#include <cstddef>
#include <vector>

#include "ssar/tensor.hpp"

namespace ssar {

enum class ElementwiseOp { Add, Sub, Mul, Neg, Sigmoid, Tanh, Relu };

/// Unary kinds ignore `b`; binary kinds require identical shapes.
template <typename T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, const Tensor<T>& b = Tensor<T>());

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(ElementwiseOp::Add, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(ElementwiseOp::Sub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(ElementwiseOp::Mul, a, b);
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return elementwise(ElementwiseOp::Sigmoid, x);
}
template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return elementwise(ElementwiseOp::Tanh, x);
}
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return elementwise(ElementwiseOp::Relu, x);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// x + b where b is rank 1 and matches x's trailing extent. The only
/// broadcasting the library performs.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b);

/// [M,K] x [K,N] -> [M,N]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// W·x + b for x of shape [in], W [out, in], b [out]. `b` may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = Tensor<T>());

/// Cross-correlation with zero padding. x is [C,H,W] or a batch [N,C,H,W];
/// weight is [C_out, C_in, k, k]. No bias term.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride, std::size_t pad);

/// Volumetric analogue: x is [C,D,H,W] or [N,C,D,H,W]; weight [C_out, C_in, k, k, k].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride, std::size_t pad);

/// Max pooling over the last two axes. Padded positions never win.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t pad);

/// Max pooling over the last three axes.
template <typename T>
Tensor<T> max_pool3d(const Tensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t pad);

enum class ReduceOp { Mean, Sum, Max };

/// Reduces over `axes` and removes them from the shape. An empty axis list
/// returns a copy; reducing every axis yields a rank-0 tensor. Max routes the
/// gradient to the first maximal element.
template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, std::vector<std::size_t> axes);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Per-group standardization y = (x - E[x]) / sqrt(Var[x] + eps), population
/// variance, no affine terms. The last `spatial_rank` axes form one group;
/// every combination of the leading axes (channel, and batch if present) is
/// normalized separately.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps, std::size_t spatial_rank);

/// Averages consecutive, non-overlapping windows of k rows of a [n, d]
/// sequence, producing [floor(n/k), d]. The trailing n mod k rows are dropped.
template <typename T>
Tensor<T> seq_avg_pool(const Tensor<T>& sequence, std::size_t k);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// x[index] along axis 0.
template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t index);

/// Joins along axis 0; trailing extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts);

/// Stacks equally shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts);

}  // namespace ssar
