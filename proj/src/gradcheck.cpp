#include "x2face/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "x2face/error.hpp"

namespace x2face {

GradCheckReport grad_check(const ScalarFunction& f, const GradientFunction& gradient,
                           std::span<const double> x, double epsilon, double tolerance,
                           std::span<const std::size_t> indices, double denominator_floor) {
  require(epsilon > 0.0, ErrorCode::kPrecondition, "grad_check: epsilon must be positive");
  GradCheckReport report;
  const std::vector<double> analytic = gradient(x);
  require(analytic.size() == x.size(), ErrorCode::kShapeMismatch,
          "grad_check: gradient length differs from input length");

  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(x.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    indices = all;
  }

  std::vector<double> probe(x.begin(), x.end());
  for (std::size_t idx : indices) {
    const double saved = probe[idx];
    probe[idx] = saved + epsilon;
    const double up = f(probe);
    probe[idx] = saved - epsilon;
    const double down = f(probe);
    probe[idx] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic[idx];
    ++report.checked;
    if (!std::isfinite(a) || !std::isfinite(numeric)) {
      report.nonfinite = true;
      report.worst_index = idx;
      report.message = "non-finite gradient at index " + std::to_string(idx);
      report.passed = false;
      return report;
    }
    const double abs_err = std::abs(a - numeric);
    const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), denominator_floor});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = idx;
    }
  }
  report.passed = report.max_rel_error <= tolerance;
  report.message = (report.passed ? "pass" : "fail") + std::string(": max relative error ") +
                   std::to_string(report.max_rel_error) + " at index " +
                   std::to_string(report.worst_index);
  return report;
}

}  // namespace x2face
