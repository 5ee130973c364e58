#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "x2face/error.hpp"
#include "x2face/losses.hpp"

using namespace x2face;

namespace {

// One 1x1 conv stage with weight 2 on the diagonal, bias 0, no centering.
IdentityComparator<double> doubling_stub() {
  ComparatorConfig cfg;
  cfg.in_channels = 3;
  cfg.stages = {{3, 1, false}};
  cfg.input_offset = 0.0;
  IdentityComparator<double> cmp(cfg);
  auto params = cmp.parameters();
  params[0]->value.zero();
  for (int c = 0; c < 3; ++c) params[0]->value(c, c, 0, 0) = 2.0;
  params[1]->value.zero();
  return cmp;
}

IdentityComparator<double> random_comparator(std::uint64_t seed) {
  IdentityComparator<double> cmp(ComparatorConfig::standard());
  std::mt19937_64 rng(seed);
  cmp.init(rng);
  return cmp;
}

}  // namespace

TEST_CASE("photometric L1") {
  auto a = testing::random_tensor<float>({2, 3, 4, 4}, 1);
  CHECK(photometric_l1(a, a) == 0.0);
  Tensor<float> b = a;
  for (auto& v : b.data()) v += 0.1f;
  CHECK(photometric_l1(a, b) == doctest::Approx(0.1).epsilon(1e-5));
  auto c = testing::random_tensor<float>({2, 3, 4, 4}, 2);
  double brute = 0;
  for (std::size_t i = 0; i < a.size(); ++i) brute += std::abs(double(a[i]) - double(c[i]));
  CHECK(photometric_l1(a, c) == doctest::Approx(brute / a.size()).epsilon(1e-9));
}

TEST_CASE("content loss through a hand-computable stub") {
  auto cmp = doubling_stub();
  Tensor<double> ones(1, 3, 4, 4, 1.0), zeros(1, 3, 4, 4, 0.0);
  auto l = content_loss(cmp, ones, zeros, {"Conv1"});
  REQUIRE(l.size() == 1);
  CHECK(l["Conv1"] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(content_loss(cmp, ones, ones, {"Conv1"})["Conv1"] == 0.0);
  CHECK(content_loss(cmp, ones, zeros, {}).empty());
  CHECK_THROWS_AS(content_loss(cmp, ones, zeros, {"Conv9"}), Error);
}

TEST_CASE("standard comparator layout") {
  auto cfg = ComparatorConfig::standard();
  REQUIRE(cfg.stages.size() == 7);
  const int widths[7] = {16, 32, 64, 128, 128, 128, 128};
  for (int i = 0; i < 7; ++i) {
    CHECK(cfg.stages[i].out_channels == widths[i]);
    CHECK(cfg.stages[i].pool == (i == 1 || i == 3 || i == 5));
  }
  CHECK(comparator_config_from_json(to_json(cfg)) == cfg);
  CHECK(low_high_layers().size() == 5);
  CHECK(high_layers() == std::vector<std::string>{"Conv6", "Conv7"});
}

TEST_CASE("EMA arithmetic") {
  LossWeightState s;
  s.ema["x"] = 1.0;
  CHECK(s.update("x", 2.0) == doctest::Approx(1.01).epsilon(1e-12));
  LossWeightState fresh;
  CHECK(fresh.update("y", 3.0) == 3.0);
  CHECK(fresh.update("z", 0.0) > 0.0);
  auto back = LossWeightState::from_json(s.to_json());
  CHECK(back.ema == s.ema);
  CHECK(back.decay == s.decay);
}

TEST_CASE("stage-2 loss vanishes at the targets") {
  auto cmp = random_comparator(1);
  auto s_A = testing::random_tensor<double>({2, 3, 16, 16}, 3);
  auto d_A = testing::random_tensor<double>({2, 3, 16, 16}, 4);
  LossWeightState st;
  auto r = stage2_loss(cmp, s_A, d_A, d_A, s_A, st);
  CHECK(r.total == 0.0);
  for (double v : r.grad_same.data()) CHECK(v == 0.0);
}

TEST_CASE("stage-2 weighting with freshly seeded averages") {
  auto cmp = random_comparator(2);
  auto s_A = testing::random_tensor<double>({2, 3, 16, 16}, 5);
  auto d_A = testing::random_tensor<double>({2, 3, 16, 16}, 6);
  auto g_dA = testing::random_tensor<double>({2, 3, 16, 16}, 7);
  auto g_dR = testing::random_tensor<double>({2, 3, 16, 16}, 8);
  LossWeightState st;
  auto r = stage2_loss(cmp, s_A, d_A, g_dA, g_dR, st, false);
  REQUIRE(r.components.size() == 8);
  const double photo = r.components["photometric"];
  int same = 0, diff = 0;
  for (const auto& [k, v] : r.components) {
    if (k.rfind("same.", 0) == 0) {
      ++same;
      CHECK(v == doctest::Approx(photo).epsilon(1e-9));
    } else if (k.rfind("diff.", 0) == 0) {
      ++diff;
      CHECK(v == doctest::Approx(photo / 10).epsilon(1e-9));
    }
  }
  CHECK(same == 5);
  CHECK(diff == 2);
  CHECK(r.components.count("same.Conv7") == 1);
  CHECK(r.components.count("diff.Conv6") == 1);
}

TEST_CASE("stage-2 gradients match finite differences") {
  auto cmp = random_comparator(3);
  auto s_A = testing::random_tensor<double>({1, 3, 16, 16}, 9);
  auto d_A = testing::random_tensor<double>({1, 3, 16, 16}, 10);
  auto g_dA = testing::random_tensor<double>({1, 3, 16, 16}, 11);
  auto g_dR = testing::random_tensor<double>({1, 3, 16, 16}, 12);
  // Decay 1 freezes the averages so the weights are constants.
  LossWeightState st;
  stage2_loss(cmp, s_A, d_A, g_dA, g_dR, st, false);
  st.decay = 1.0;
  auto r = stage2_loss(cmp, s_A, d_A, g_dA, g_dR, st, true);
  double worst = 0;
  for (int which = 0; which < 2; ++which) {
    Tensor<double>& x = which == 0 ? g_dA : g_dR;
    const Tensor<double>& g = which == 0 ? r.grad_same : r.grad_other;
    for (std::size_t k = 0; k < x.size(); k += 37) {
      const double saved = x[k];
      x[k] = saved + 1e-6;
      const double up = stage2_loss(cmp, s_A, d_A, g_dA, g_dR, st, false).total;
      x[k] = saved - 1e-6;
      const double down = stage2_loss(cmp, s_A, d_A, g_dA, g_dR, st, false).total;
      x[k] = saved;
      const double num = (up - down) / 2e-6;
      worst = std::max(worst, std::abs(num - g[k]) / std::max({std::abs(num), std::abs(g[k]), 1e-3}));
    }
  }
  CHECK(worst < 1e-3);
}
