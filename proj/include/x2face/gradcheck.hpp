#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace x2face {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool nonfinite = false;
  bool passed = false;
  std::string message;
};

using ScalarFunction = std::function<double(std::span<const double>)>;
using GradientFunction = std::function<std::vector<double>(std::span<const double>)>;

// Compares the analytic gradient of f at x against central differences.
// Relative error per coordinate is |a - n| / max(|a|, |n|, denominator_floor).
// If `indices` is empty every coordinate is checked.
GradCheckReport grad_check(const ScalarFunction& f, const GradientFunction& gradient,
                           std::span<const double> x, double epsilon, double tolerance,
                           std::span<const std::size_t> indices = {},
                           double denominator_floor = 1e-6);

}  // namespace x2face
