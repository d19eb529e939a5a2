#pragma once

#include <cmath>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "ssar/errors.hpp"
#include "ssar/tensor.hpp"

namespace ssar::detail {

template <typename T>
using BackwardFn = std::function<void(std::span<const T> out, std::span<const T> grad_out)>;

template <typename T>
void check_finite(std::span<const T> values, const std::string& op) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericalError("non-finite value produced by " + op + " at element " + std::to_string(i));
    }
  }
}

/// Builds the output tensor of an operation and, when any input needs a
/// gradient and recording is enabled, attaches the backward rule.
template <typename T>
Tensor<T> record(Shape shape, std::vector<T> data, std::string op,
                 std::initializer_list<Tensor<T>> inputs, BackwardFn<T> backward) {
  check_finite<T>(data, op);
  Tensor<T> out(std::move(shape), std::move(data));
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  if (needs_grad && GradMode::enabled()) {
    auto node = std::make_shared<GradNode<T>>();
    node->op = std::move(op);
    for (const auto& in : inputs) node->inputs.push_back(in.impl());
    node->backward = std::move(backward);
    out.impl()->node = std::move(node);
    out.impl()->requires_grad = true;
  }
  return out;
}

template <typename T>
Tensor<T> record(Shape shape, std::vector<T> data, std::string op,
                 const std::vector<Tensor<T>>& inputs, BackwardFn<T> backward) {
  check_finite<T>(data, op);
  Tensor<T> out(std::move(shape), std::move(data));
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  if (needs_grad && GradMode::enabled()) {
    auto node = std::make_shared<GradNode<T>>();
    node->op = std::move(op);
    for (const auto& in : inputs) node->inputs.push_back(in.impl());
    node->backward = std::move(backward);
    out.impl()->node = std::move(node);
    out.impl()->requires_grad = true;
  }
  return out;
}

/// Grad buffer of an input, or nullptr when it takes no gradient.
template <typename T>
T* grad_target(const std::shared_ptr<TensorImpl<T>>& impl) {
  return impl->requires_grad ? impl->ensure_grad().data() : nullptr;
}

}  // namespace ssar::detail
