#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ssar/layers.hpp"
#include "ssar/tensor.hpp"

namespace ssar {

/// Denominator floor for the relative error. Below this magnitude central
/// differences are dominated by rounding noise (~1e-12 absolute).
inline constexpr double kGradCheckFloor = 1e-6;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Coordinates sampled per tensor; 0 checks every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 1;
  /// Negative control: corrupts one analytic gradient entry before comparing.
  bool inject_fault = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  std::string worst;  // "name[index]" of the worst coordinate
  bool passed = false;
};

/// Compares reverse-mode gradients of `loss_fn` with central differences
/// (f(x+h) - f(x-h)) / 2h. Relative error per coordinate is
/// |analytic - numeric| / max(kGradCheckFloor, |numeric|). `loss_fn` must rebuild its
/// graph from the current values of `wrt` on every call.
GradCheckResult check_gradients(const std::function<Tensor<double>()>& loss_fn,
                                 const ParamList<double>& wrt, const GradCheckOptions& options);

/// sum(x * weights): a scalar whose gradient with respect to x is `weights`.
Tensor<double> weighted_sum(const Tensor<double>& x, const Tensor<double>& weights);

enum class GradCheckScope { Op, Layer, Model };

GradCheckScope parse_gradcheck_scope(const std::string& text);

struct GradCheckRow {
  std::string name;
  std::size_t instances = 0;
  std::size_t coords = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Runs the built-in check table for a scope on random 64-bit instances.
/// `fault_target` names one row whose analytic gradient gets corrupted.
std::vector<GradCheckRow> run_gradcheck_suite(GradCheckScope scope, std::size_t instances,
                                              const GradCheckOptions& options,
                                              const std::string& fault_target = "");

}  // namespace ssar
