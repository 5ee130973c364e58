#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "x2face/tensor.hpp"

namespace testing {

// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("x2face_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

template <typename T>
x2face::Tensor<T> random_tensor(x2face::Shape4 s, std::uint64_t seed, double lo = 0.0,
                                double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  x2face::Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

template <typename T>
bool bitwise_equal(const x2face::Tensor<T>& a, const x2face::Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace testing
