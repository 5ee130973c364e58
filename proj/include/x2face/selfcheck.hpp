#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace x2face {

struct OpCheck {
  std::string name;
  bool passed = false;
  double error = 0.0;      // max relative error for gradient checks, max abs otherwise
  double tolerance = 0.0;
  std::string detail;
};

struct OpsCheckReport {
  std::vector<OpCheck> checks;
  double seconds = 0.0;

  bool passed() const;
  nlohmann::json to_json() const;
};

// Exactness cases for the sampler, hand-computed values, finite-difference
// checks of every differentiable primitive (double precision, eps 1e-4) and
// agreement between the parallel kernels and the serial reference.
OpsCheckReport run_ops_checks(std::uint64_t seed = 0, double grad_tolerance = 1e-3,
                              double value_tolerance = 1e-6);

}  // namespace x2face
