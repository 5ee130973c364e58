#include "x2face/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "x2face/diffops.hpp"
#include "x2face/diffops_reference.hpp"
#include "x2face/gradcheck.hpp"

namespace x2face {

namespace {

using TD = Tensor<double>;
using Rng = std::mt19937_64;

TD random_tensor(Shape4 s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TD t(s);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Values bounded away from zero, for kinked activations.
TD away_from_zero(Shape4 s, Rng& rng) {
  TD t = random_tensor(s, rng, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.data())
    if (sign(rng)) v = -v;
  return t;
}

// Distinct, well-separated values so max pooling never switches under probing.
TD spaced_values(Shape4 s, Rng& rng) {
  TD t(s);
  std::vector<double> vals(t.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.01 * static_cast<double>(i);
  std::shuffle(vals.begin(), vals.end(), rng);
  std::copy(vals.begin(), vals.end(), t.data().begin());
  return t;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

using Forward = std::function<TD(const TD&)>;
using Backward = std::function<TD(const TD& x, const TD& grad_out)>;

// Checks d/dx sum(w * forward(x)) for a fixed random w.
OpCheck grad_case(const std::string& name, const TD& x0, const Forward& fwd, const Backward& bwd,
                  Rng& rng, double tol) {
  const TD w = random_tensor(fwd(x0).shape(), rng);
  auto as_tensor = [&](std::span<const double> x) {
    TD t(x0.shape());
    std::copy(x.begin(), x.end(), t.data().begin());
    return t;
  };
  ScalarFunction f = [&](std::span<const double> x) {
    const TD y = fwd(as_tensor(x));
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
    return s;
  };
  GradientFunction g = [&](std::span<const double> x) {
    const TD gx = bwd(as_tensor(x), w);
    return std::vector<double>(gx.data().begin(), gx.data().end());
  };
  const GradCheckReport r = grad_check(f, g, x0.data(), 1e-4, tol);
  return {"grad." + name, r.passed, r.max_rel_error, tol, r.message};
}

OpCheck value_case(const std::string& name, double got, double want, double tol) {
  const double err = std::abs(got - want);
  return {"value." + name, err <= tol, err, tol,
          "got " + std::to_string(got) + ", expected " + std::to_string(want)};
}

SamplerGrid<double> grid_at(const std::vector<std::array<double, 2>>& pts) {
  SamplerGrid<double> g(1, 1, static_cast<int>(pts.size()));
  for (std::size_t k = 0; k < pts.size(); ++k) {
    g.x(0, 0, static_cast<int>(k)) = pts[k][0];
    g.y(0, 0, static_cast<int>(k)) = pts[k][1];
  }
  return g;
}

// Sampling coordinates whose pixel-space fractional part stays in [0.15, 0.85]
// so finite differences never straddle a bilinear kink.
SamplerGrid<double> interior_grid(int n, int h, int w, int in_h, int in_w, Rng& rng) {
  SamplerGrid<double> g(n, h, w);
  std::uniform_int_distribution<int> cx(0, in_w - 2), cy(0, in_h - 2);
  std::uniform_real_distribution<double> frac(0.15, 0.85);
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const double px = cx(rng) + frac(rng), py = cy(rng) + frac(rng);
        g.x(b, i, j) = 2.0 * px / (in_w - 1) - 1.0;
        g.y(b, i, j) = 2.0 * py / (in_h - 1) - 1.0;
      }
  return g;
}

}  // namespace

bool OpsCheckReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const OpCheck& c) { return c.passed; });
}

nlohmann::json OpsCheckReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : checks)
    arr.push_back({{"name", c.name},
                   {"passed", c.passed},
                   {"error", c.error},
                   {"tolerance", c.tolerance},
                   {"detail", c.detail}});
  return {{"passed", passed()}, {"seconds", seconds}, {"checks", arr}};
}

OpsCheckReport run_ops_checks(std::uint64_t seed, double tol, double value_tol) {
  const auto t0 = std::chrono::steady_clock::now();
  OpsCheckReport rep;
  auto& out = rep.checks;
  Rng rng(seed);

  // --- exactness
  {
    const TD img = random_tensor({2, 3, 5, 7}, rng, 0.0, 1.0);
    const TD warped = ops::bilinear_sample(img, identity_grid<double>(2, 5, 7));
    const double e = max_abs_diff(img.data(), warped.data());
    out.push_back({"exact.identity_warp_double", e == 0.0, e, 0.0, "max |out - in|"});
    const Tensor<float> imgf = img.cast<float>();
    const Tensor<float> wf = ops::bilinear_sample(imgf, identity_grid<float>(2, 5, 7));
    bool same = std::equal(imgf.data().begin(), imgf.data().end(), wf.data().begin());
    out.push_back({"exact.identity_warp_float", same, same ? 0.0 : 1.0, 0.0, "bitwise"});
  }

  // --- hand values
  {
    TD img(1, 1, 2, 2);
    img[0] = 0, img[1] = 1, img[2] = 2, img[3] = 3;
    const TD s = ops::bilinear_sample(img, grid_at({{-1, -1}, {0, 0}, {1, 1}, {1, -1}, {3, 0}}));
    out.push_back(value_case("sample_corner", s[0], 0.0, value_tol));
    out.push_back(value_case("sample_center", s[1], 1.5, value_tol));
    out.push_back(value_case("sample_far_corner", s[2], 3.0, value_tol));
    out.push_back(value_case("sample_top_right", s[3], 1.0, value_tol));
    out.push_back(value_case("sample_outside", s[4], 0.0, value_tol));

    TD row(1, 1, 1, 2);
    row[0] = 0, row[1] = 2;
    const TD up = ops::bilinear_upsample2x(row);
    const double want[4] = {0, 2.0 / 3, 4.0 / 3, 2};
    double e = 0;
    for (int i = 0; i < 4; ++i) e = std::max(e, std::abs(up(0, 0, 1, i) - want[i]));
    out.push_back({"value.upsample_row", e <= value_tol, e, value_tol, "[0,2] -> [0,2/3,4/3,2]"});
    TD one(1, 1, 1, 1, 7.0);
    const TD up1 = ops::bilinear_upsample2x(one);
    e = 0;
    for (double v : up1.data()) e = std::max(e, std::abs(v - 7.0));
    out.push_back({"value.upsample_constant", e <= value_tol, e, value_tol, "1x1 of 7"});
  }

  // --- gradients
  {
    const TD img = random_tensor({2, 2, 4, 5}, rng);
    const auto grid = interior_grid(2, 3, 4, 4, 5, rng);
    out.push_back(grad_case(
        "bilinear_sample.input", img, [&](const TD& x) { return ops::bilinear_sample(x, grid); },
        [&](const TD& x, const TD& go) {
          TD gi;
          ops::bilinear_sample_backward(x, grid, go, &gi, static_cast<SamplerGrid<double>*>(nullptr));
          return gi;
        },
        rng, tol));
    // Grid as a tensor (n, h, w, 2).
    auto to_grid = [](const TD& t) { return SamplerGrid<double>(t); };
    out.push_back(grad_case(
        "bilinear_sample.grid", grid.coords,
        [&](const TD& g) { return ops::bilinear_sample(img, to_grid(g)); },
        [&](const TD& g, const TD& go) {
          SamplerGrid<double> gg(g.shape().d0, g.shape().d1, g.shape().d2);
          ops::bilinear_sample_backward(img, to_grid(g), go, static_cast<TD*>(nullptr), &gg);
          return gg.coords;
        },
        rng, tol));
    // Grid points partly outside the image exercise the zero padding.
    SamplerGrid<double> edge = interior_grid(1, 2, 3, 4, 5, rng);
    edge.x(0, 0, 0) = 1.0 + 2.0 * 0.4 / 4;   // 0.4 px right of the last column
    edge.y(0, 1, 2) = -1.0 - 2.0 * 0.6 / 3;  // 0.6 px above the first row
    const TD img1 = random_tensor({1, 1, 4, 5}, rng);
    out.push_back(grad_case(
        "bilinear_sample.grid_border", edge.coords,
        [&](const TD& g) { return ops::bilinear_sample(img1, to_grid(g)); },
        [&](const TD& g, const TD& go) {
          SamplerGrid<double> gg(g.shape().d0, g.shape().d1, g.shape().d2);
          ops::bilinear_sample_backward(img1, to_grid(g), go, static_cast<TD*>(nullptr), &gg);
          return gg.coords;
        },
        rng, tol));
  }
  {
    const TD x = random_tensor({2, 3, 3, 4}, rng);
    out.push_back(grad_case(
        "upsample2x", x, [](const TD& v) { return ops::bilinear_upsample2x(v); },
        [&](const TD&, const TD& go) { return ops::bilinear_upsample2x_backward(go, x.shape()); },
        rng, tol));
  }
  for (int stride : {1, 2}) {
    const std::string tag = "conv2d.s" + std::to_string(stride);
    const TD x = random_tensor({2, 3, 6, 6}, rng);
    const TD w = random_tensor({4, 3, 3, 3}, rng);
    const TD b = random_tensor({4, 1, 1, 1}, rng);
    out.push_back(grad_case(
        tag + ".input", x, [&](const TD& v) { return ops::conv2d(v, w, b, stride, 1); },
        [&](const TD& v, const TD& go) {
          TD gi, gw(w.shape()), gb(b.shape());
          ops::conv2d_backward(v, w, go, stride, 1, &gi, gw, gb);
          return gi;
        },
        rng, tol));
    out.push_back(grad_case(
        tag + ".weight", w, [&](const TD& v) { return ops::conv2d(x, v, b, stride, 1); },
        [&](const TD& v, const TD& go) {
          TD gw(w.shape()), gb(b.shape());
          ops::conv2d_backward(x, v, go, stride, 1, static_cast<TD*>(nullptr), gw, gb);
          return gw;
        },
        rng, tol));
    out.push_back(grad_case(
        tag + ".bias", b, [&](const TD& v) { return ops::conv2d(x, w, v, stride, 1); },
        [&](const TD&, const TD& go) {
          TD gw(w.shape()), gb(b.shape());
          ops::conv2d_backward(x, w, go, stride, 1, static_cast<TD*>(nullptr), gw, gb);
          return gb;
        },
        rng, tol));
    out.push_back(grad_case(
        tag + ".input_only", x, [&](const TD& v) { return ops::conv2d(v, w, b, stride, 1); },
        [&](const TD& v, const TD& go) {
          return ops::conv2d_backward_input(w, go, v.shape(), stride, 1);
        },
        rng, tol));
  }
  {
    const TD x = random_tensor({4, 3, 2, 2}, rng);
    const TD gamma = random_tensor({1, 3, 1, 1}, rng, 0.5, 1.5);
    const TD beta = random_tensor({1, 3, 1, 1}, rng);
    auto bn = [](const TD& v, const TD& g, const TD& b, ops::BatchNormCache<double>* cache) {
      TD rm(g.shape()), rv(g.shape(), 1.0);
      return ops::batch_norm_train(v, g, b, rm, rv, 0.1, 1e-5, cache);
    };
    auto bn_back = [&](const TD& v, const TD& g, const TD& b, const TD& go, int which) {
      ops::BatchNormCache<double> cache;
      bn(v, g, b, &cache);
      TD gg(g.shape()), gb(b.shape());
      TD gi = ops::batch_norm_backward(go, cache, g, gg, gb);
      return which == 0 ? gi : which == 1 ? gg : gb;
    };
    out.push_back(grad_case(
        "batch_norm.input", x, [&](const TD& v) { return bn(v, gamma, beta, nullptr); },
        [&](const TD& v, const TD& go) { return bn_back(v, gamma, beta, go, 0); }, rng, tol));
    out.push_back(grad_case(
        "batch_norm.gamma", gamma, [&](const TD& g) { return bn(x, g, beta, nullptr); },
        [&](const TD& g, const TD& go) { return bn_back(x, g, beta, go, 1); }, rng, tol));
    out.push_back(grad_case(
        "batch_norm.beta", beta, [&](const TD& b) { return bn(x, gamma, b, nullptr); },
        [&](const TD& b, const TD& go) { return bn_back(x, gamma, b, go, 2); }, rng, tol));
  }
  {
    const TD x = away_from_zero({2, 3, 3, 3}, rng);
    out.push_back(grad_case(
        "leaky_relu", x, [](const TD& v) { return ops::leaky_relu(v, 0.2); },
        [](const TD& v, const TD& go) { return ops::leaky_relu_backward(v, go, 0.2); }, rng, tol));
    out.push_back(grad_case(
        "relu", x, [](const TD& v) { return ops::relu(v); },
        [](const TD& v, const TD& go) { return ops::relu_backward(v, go); }, rng, tol));
    out.push_back(grad_case(
        "tanh", x, [](const TD& v) { return ops::tanh(v); },
        [](const TD& v, const TD& go) { return ops::tanh_backward(ops::tanh(v), go); }, rng, tol));
  }
  {
    const TD x = random_tensor({3, 5, 1, 1}, rng);
    const TD w = random_tensor({4, 5, 1, 1}, rng);
    const TD b = random_tensor({4, 1, 1, 1}, rng);
    auto back = [&](const TD& xv, const TD& wv, const TD& go, int which) {
      TD gi, gw(w.shape()), gb(b.shape());
      ops::linear_backward(xv, wv, go, &gi, gw, gb);
      return which == 0 ? gi : which == 1 ? gw : gb;
    };
    out.push_back(grad_case(
        "linear.input", x, [&](const TD& v) { return ops::linear(v, w, b); },
        [&](const TD& v, const TD& go) { return back(v, w, go, 0); }, rng, tol));
    out.push_back(grad_case(
        "linear.weight", w, [&](const TD& v) { return ops::linear(x, v, b); },
        [&](const TD& v, const TD& go) { return back(x, v, go, 1); }, rng, tol));
    out.push_back(grad_case(
        "linear.bias", b, [&](const TD& v) { return ops::linear(x, w, v); },
        [&](const TD&, const TD& go) { return back(x, w, go, 2); }, rng, tol));
  }
  {
    const TD x = spaced_values({2, 2, 4, 6}, rng);
    out.push_back(grad_case(
        "max_pool2x", x, [](const TD& v) { return ops::max_pool2x(v, nullptr); },
        [](const TD& v, const TD& go) {
          std::vector<std::size_t> am;
          ops::max_pool2x(v, &am);
          return ops::max_pool2x_backward(go, am, v.shape());
        },
        rng, tol));
  }
  {
    const TD a = random_tensor({2, 2, 3, 3}, rng);
    const TD b = random_tensor({2, 3, 3, 3}, rng);
    out.push_back(grad_case(
        "concat_channels", a, [&](const TD& v) { return ops::concat_channels(v, b); },
        [&](const TD&, const TD& go) {
          TD ga, gb;
          ops::split_channels(go, 2, ga, gb);
          return ga;
        },
        rng, tol));
  }

  // --- parallel kernels vs serial reference
  {
    const TD img = random_tensor({2, 3, 8, 9}, rng);
    SamplerGrid<double> grid(random_tensor({2, 6, 7, 2}, rng, -1.2, 1.2));
    const TD a = ops::bilinear_sample(img, grid), b = ops::reference::bilinear_sample(img, grid);
    double e = max_abs_diff(a.data(), b.data());
    out.push_back({"reference.bilinear_sample", e <= 1e-12, e, 1e-12, "parallel vs serial"});
    const TD go = random_tensor(a.shape(), rng);
    TD gi1, gi2;
    SamplerGrid<double> gg1(2, 6, 7), gg2(2, 6, 7);
    ops::bilinear_sample_backward(img, grid, go, &gi1, &gg1);
    ops::reference::bilinear_sample_backward(img, grid, go, gi2, gg2);
    e = std::max(max_abs_diff(gi1.data(), gi2.data()), max_abs_diff(gg1.coords.data(), gg2.coords.data()));
    out.push_back({"reference.bilinear_sample_backward", e <= 1e-12, e, 1e-12, "parallel vs serial"});
    const TD u1 = ops::bilinear_upsample2x(img), u2 = ops::reference::bilinear_upsample2x(img);
    e = max_abs_diff(u1.data(), u2.data());
    out.push_back({"reference.upsample2x", e <= 1e-12, e, 1e-12, "parallel vs serial"});

    const TD w = random_tensor({5, 3, 3, 3}, rng), bias = random_tensor({5, 1, 1, 1}, rng);
    const TD c1 = ops::conv2d(img, w, bias, 2, 1), c2 = ops::reference::conv2d(img, w, bias, 2, 1);
    e = max_abs_diff(c1.data(), c2.data());
    out.push_back({"reference.conv2d", e <= 1e-10, e, 1e-10, "GEMM vs direct loops"});
    const TD cg = random_tensor(c1.shape(), rng);
    TD i1, i2, w1(w.shape()), w2(w.shape()), b1(bias.shape()), b2(bias.shape());
    ops::conv2d_backward(img, w, cg, 2, 1, &i1, w1, b1);
    ops::reference::conv2d_backward(img, w, cg, 2, 1, i2, w2, b2);
    e = std::max({max_abs_diff(i1.data(), i2.data()), max_abs_diff(w1.data(), w2.data()),
                  max_abs_diff(b1.data(), b2.data())});
    out.push_back({"reference.conv2d_backward", e <= 1e-10, e, 1e-10, "GEMM vs direct loops"});
  }

  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace x2face
