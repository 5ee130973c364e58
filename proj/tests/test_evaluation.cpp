#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "x2face/evaluation.hpp"

using namespace x2face;

namespace {
const DatasetIndex& small_dataset() {
  static const DatasetIndex idx = [] {
    auto root = testing::scratch("eval_data");
    return generate_synthetic_dataset({8, 2, 6, 16, 0, true}, root);
  }();
  return idx;
}
}  // namespace

TEST_CASE("recon tuples respect the contract") {
  const auto& idx = small_dataset();
  auto t = sample_recon_tuples(idx, Split::kTrain, 50, 3, 1);
  REQUIRE(t.size() == 50);
  for (const auto& x : t) {
    REQUIRE(x.sources.size() == 3);
    std::set<int> frames{x.driving.frame};
    for (const auto& s : x.sources) {
      CHECK(s.identity == x.driving.identity);
      CHECK(s.video == x.driving.video);
      frames.insert(s.frame);
    }
    CHECK(frames.size() == 4);
    CHECK(x.other.identity != x.driving.identity);
  }
  auto again = sample_recon_tuples(idx, Split::kTrain, 50, 3, 1);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i].driving == again[i].driving);
}

TEST_CASE("a generator that returns the driving frame has zero L1") {
  const auto& idx = small_dataset();
  FrameCache cache(idx);
  auto t = sample_recon_tuples(idx, Split::kTrain, 20, 3, 0);
  Generator oracle = [](const std::vector<Tensor<float>>&, const Tensor<float>& d) { return d; };
  CHECK(mean_reconstruction_l1(oracle, cache, t, 1) == 0.0);
  CHECK(mean_reconstruction_l1(oracle, cache, t, 3) == 0.0);
  Generator first_source = [](const std::vector<Tensor<float>>& s, const Tensor<float>&) {
    return s.front();
  };
  CHECK(mean_reconstruction_l1(first_source, cache, t, 1) > 0.0);
}

TEST_CASE("identical checkpoints give identical rows and stable JSON") {
  const auto& idx = small_dataset();
  X2FaceModel<float> a(NetConfig{16, 4, 16, 8}, 0), b(NetConfig{16, 4, 16, 8}, 0);
  ReconEvalConfig cfg;
  cfg.split = Split::kTrain;
  cfg.n_pairs = 12;
  auto r = eval_reconstruction(a, &b, idx, cfg);
  REQUIRE(r.settings.size() == 4);
  CHECK(r.settings[0].l1 == r.settings[1].l1);
  CHECK(r.settings[2].l1 == r.settings[3].l1);
  CHECK(r.settings[0].improvement_pct == 0.0);
  auto r2 = eval_reconstruction(a, &b, idx, cfg);
  CHECK(r.to_json().dump() == r2.to_json().dump());
  CHECK(r.table().find("0.0632") != std::string::npos);
}

TEST_CASE("pose errors") {
  Mat truth(4, 3), pred(4, 3);
  truth.setRandom();
  pred = truth.array() + 5.0;
  auto r = pose_errors(pred, truth);
  REQUIRE(r.mae.size() == 3);
  for (double m : r.mae) CHECK(m == doctest::Approx(5.0));
  CHECK(r.mean_mae == doctest::Approx(5.0));
  CHECK(r.n == 4);
  auto z = pose_errors(truth, truth);
  CHECK(z.mean_mae == 0.0);
  CHECK_THROWS(pose_errors(truth, Mat(3, 3)));
}

TEST_CASE("spearman") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman({1, 2, 3, 4}, {1, 4, 9, 100}) == doctest::Approx(1.0));
  // Ties use average ranks: x ranks (1, 2.5, 2.5, 4).
  CHECK(spearman({1, 2, 2, 3}, {1, 2, 3, 4}) == doctest::Approx(0.9486833).epsilon(1e-6));
}

TEST_CASE("image probes") {
  Tensor<float> img(Shape4{1, 3, 10, 10}, 1.0f);
  for (int c = 0; c < 3; ++c)
    for (int y = 2; y < 4; ++y)
      for (int x = 6; x < 8; ++x) img(0, c, y, x) = 0.0f;
  auto c = foreground_centroid(img, {1, 1, 1});
  CHECK(c[0] == doctest::Approx(6.5));
  CHECK(c[1] == doctest::Approx(2.5));
  CHECK(dark_pixel_count(img, 0, 0, 10, 10) == 4);
  CHECK(dark_pixel_count(img, 0, 0, 7, 10) == 2);

  Tensor<float> dot(Shape4{1, 3, 20, 20}, 0.5f);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x)
      if ((x - 12) * (x - 12) + (y - 7) * (y - 7) <= 4) {
        dot(0, 0, y, x) = 1.0f;
        dot(0, 1, y, x) = 0.0f;
        dot(0, 2, y, x) = 0.0f;
      }
  auto m = match_disk(dot, {1, 0, 0}, 2, 10, 10, 5);
  CHECK(m.x == 12);
  CHECK(m.y == 7);
  CHECK(m.score == doctest::Approx(1.0));
}

TEST_CASE("reference constants") {
  CHECK(kReconReference[3].l1 == 0.0521);
  CHECK(kPoseReference[0].mae == 9.36);
}
