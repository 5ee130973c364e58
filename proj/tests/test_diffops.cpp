#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "x2face/diffops.hpp"
#include "x2face/diffops_reference.hpp"
#include "x2face/gradcheck.hpp"
#include "x2face/selfcheck.hpp"

using namespace x2face;

namespace {
SamplerGrid<double> one_point(double x, double y) {
  SamplerGrid<double> g(1, 1, 1);
  g.x(0, 0, 0) = x;
  g.y(0, 0, 0) = y;
  return g;
}
Tensor<double> img2x2() {
  Tensor<double> t(1, 1, 2, 2);
  t[0] = 0, t[1] = 1, t[2] = 2, t[3] = 3;
  return t;
}
}  // namespace

TEST_CASE("sampler hand values on a 2x2 image") {
  CHECK(ops::bilinear_sample(img2x2(), one_point(-1, -1))[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(ops::bilinear_sample(img2x2(), one_point(0, 0))[0] - 1.5) <= 1e-6);
  CHECK(ops::bilinear_sample(img2x2(), one_point(1, -1))[0] == 1.0);
  // Half a pixel outside: blends with zero padding.
  CHECK(std::abs(ops::bilinear_sample(img2x2(), one_point(2, -1))[0] - 0.5) <= 1e-12);
  CHECK(ops::bilinear_sample(img2x2(), one_point(5, 5))[0] == 0.0);
}

TEST_CASE("identity grid reproduces the input exactly") {
  auto f = testing::random_tensor<float>({2, 3, 9, 6}, 1);
  CHECK(testing::bitwise_equal(ops::bilinear_sample(f, identity_grid<float>(2, 9, 6)), f));
  auto d = testing::random_tensor<double>({1, 2, 4, 4}, 2);
  CHECK(testing::bitwise_equal(ops::bilinear_sample(d, identity_grid<double>(1, 4, 4)), d));
}

TEST_CASE("upsample2x is corner aligned") {
  Tensor<double> one(1, 1, 1, 1, 7.0);
  const auto up1 = ops::bilinear_upsample2x(one);
  for (double v : up1.data()) CHECK(v == 7.0);
  Tensor<double> row(1, 1, 1, 2);
  row[1] = 2;
  auto up = ops::bilinear_upsample2x(row);
  REQUIRE(up.width() == 4);
  CHECK(up(0, 0, 0, 1) == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(up(0, 0, 0, 2) == doctest::Approx(4.0 / 3).epsilon(1e-12));
  CHECK(up(0, 0, 0, 3) == doctest::Approx(2.0).epsilon(1e-12));
  Tensor<double> c(1, 2, 3, 5, 0.25);
  const auto upc = ops::bilinear_upsample2x(c);
  for (double v : upc.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("resize matches upsample2x at twice the size") {
  auto x = testing::random_tensor<double>({1, 2, 3, 4}, 3);
  auto a = ops::bilinear_upsample2x(x);
  auto b = ops::bilinear_resize(x, 6, 8);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("grad_check on sum of bilinear_sample wrt the input") {
  auto img = testing::random_tensor<double>({1, 1, 4, 4}, 4, -1, 1);
  SamplerGrid<double> grid(testing::random_tensor<double>({1, 3, 3, 2}, 5, -0.9, 0.9));
  auto as_img = [](std::span<const double> x) {
    Tensor<double> t(1, 1, 4, 4);
    std::copy(x.begin(), x.end(), t.data().begin());
    return t;
  };
  ScalarFunction f = [&](std::span<const double> x) {
    double s = 0;
    const auto out = ops::bilinear_sample(as_img(x), grid);
    for (double v : out.data()) s += v;
    return s;
  };
  GradientFunction g = [&](std::span<const double> x) {
    Tensor<double> go(1, 1, 3, 3, 1.0), gi;
    ops::bilinear_sample_backward(as_img(x), grid, go, &gi, static_cast<SamplerGrid<double>*>(nullptr));
    return std::vector<double>(gi.data().begin(), gi.data().end());
  };
  auto r = grad_check(f, g, img.data(), 1e-4, 1e-3);
  CHECK(r.passed);
  CHECK(r.max_rel_error <= 1e-3);
}

TEST_CASE("grad_check of a constant passes with zero gradients") {
  std::vector<double> x{1, 2, 3};
  auto r = grad_check([](std::span<const double>) { return 4.0; },
                      [](std::span<const double> v) { return std::vector<double>(v.size(), 0.0); },
                      x, 1e-4, 1e-3);
  CHECK(r.passed);
  CHECK(r.max_abs_error == 0.0);
}

TEST_CASE("grad_check flags a wrong gradient") {
  std::vector<double> x{0.5, -0.3};
  auto r = grad_check(
      [](std::span<const double> v) { return v[0] * v[0] + v[1]; },
      [](std::span<const double> v) { return std::vector<double>{v[0], 1.0}; },  // should be 2x
      x, 1e-4, 1e-3);
  CHECK_FALSE(r.passed);
  CHECK(r.worst_index == 0);
}

TEST_CASE("every primitive passes the self-check") {
  const auto rep = run_ops_checks(0);
  for (const auto& c : rep.checks) {
    INFO(c.name << ": " << c.detail);
    CHECK(c.passed);
  }
  CHECK(rep.seconds < 60.0);
}

TEST_CASE("parallel conv2d agrees with the serial reference in float") {
  auto x = testing::random_tensor<float>({2, 4, 16, 16}, 6, -1, 1);
  auto w = testing::random_tensor<float>({8, 4, 3, 3}, 7, -1, 1);
  auto b = testing::random_tensor<float>({8, 1, 1, 1}, 8, -1, 1);
  auto a = ops::conv2d(x, w, b, 2, 1), r = ops::reference::conv2d(x, w, b, 2, 1);
  REQUIRE(a.shape() == r.shape());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(r[i]).epsilon(1e-4));
}
