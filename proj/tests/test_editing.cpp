#include "doctest.h"
#include "helpers.hpp"
#include "x2face/editing.hpp"
#include "x2face/error.hpp"

using namespace x2face;

namespace {
Tensor<float> overlay_with_alpha(const Tensor<float>& rgb, float alpha) {
  Tensor<float> o(Shape4{1, 4, rgb.height(), rgb.width()});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < rgb.height(); ++y)
      for (int x = 0; x < rgb.width(); ++x) o(0, c, y, x) = rgb(0, c, y, x);
  for (int y = 0; y < rgb.height(); ++y)
    for (int x = 0; x < rgb.width(); ++x) o(0, 3, y, x) = alpha;
  return o;
}
}  // namespace

TEST_CASE("overlay compositing") {
  const auto e = testing::random_tensor<float>({1, 3, 8, 8}, 1);
  const auto rgb = testing::random_tensor<float>({1, 3, 8, 8}, 2);
  CHECK(testing::bitwise_equal(apply_overlay(e, overlay_with_alpha(rgb, 0.0f)), e));
  CHECK(testing::bitwise_equal(apply_overlay(e, overlay_with_alpha(rgb, 1.0f)), rgb));

  Tensor<float> zeros(Shape4{1, 3, 8, 8}), ones(Shape4{1, 3, 8, 8});
  ones.fill(1.0f);
  auto half = apply_overlay(zeros, overlay_with_alpha(ones, 0.5f));
  for (float v : half.data()) CHECK(v == doctest::Approx(0.5f));

  CHECK_THROWS_AS(apply_overlay(e, overlay_with_alpha(testing::random_tensor<float>({1, 3, 4, 4}, 3), 1.0f)),
                  Error);
  CHECK_THROWS_AS(apply_overlay(e, rgb), Error);  // no alpha channel
}

TEST_CASE("edited sequence under identity flow renders the modified face") {
  const NetConfig cfg{16, 4, 16, 8};
  X2FaceModel<float> m(cfg, 0);
  const auto modified = testing::random_tensor<float>({1, 3, 16, 16}, 4);
  const auto id = identity_grid<float>(1, 16, 16);
  std::vector<FaceFrame> driving{testing::random_tensor<float>({1, 3, 16, 16}, 5),
                                 testing::random_tensor<float>({1, 3, 16, 16}, 6)};
  auto frames = render_edited_sequence(m.driving, modified, driving, &id);
  REQUIRE(frames.size() == 2);
  for (const auto& f : frames) CHECK(testing::bitwise_equal(f, modified));
}

TEST_CASE("transparent overlay leaves the driven sequence unchanged") {
  const NetConfig cfg{16, 4, 16, 8};
  X2FaceModel<float> m(cfg, 0);
  const auto src = testing::random_tensor<float>({1, 3, 16, 16}, 7);
  const auto embedded = embed_source(m.embedding, src).image;
  const auto edited = apply_overlay(embedded, overlay_with_alpha(testing::random_tensor<float>({1, 3, 16, 16}, 8), 0.0f));
  std::vector<FaceFrame> driving{testing::random_tensor<float>({1, 3, 16, 16}, 9)};
  auto a = render_edited_sequence(m.driving, embedded, driving);
  auto b = render_edited_sequence(m.driving, edited, driving);
  CHECK(testing::bitwise_equal(a[0], b[0]));
  CHECK(testing::bitwise_equal(a[0], x2face_forward(m, {src}, driving[0])));
}
