// Serial reference kernels against the OpenMP paths at training-sized shapes.
#include <benchmark/benchmark.h>

#include <random>

#include "x2face/diffops.hpp"
#include "x2face/diffops_reference.hpp"

using namespace x2face;

namespace {

Tensor<float> noise(Shape4 s, std::uint64_t seed, float lo = 0.f, float hi = 1.f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor<float> t(s);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

SamplerGrid<float> jittered_grid(int n, int r) {
  auto g = identity_grid<float>(n, r, r);
  auto j = noise(g.coords.shape(), 7, -0.05f, 0.05f);
  for (std::size_t i = 0; i < g.coords.data().size(); ++i) g.coords.data()[i] += j.data()[i];
  return g;
}

void BM_SampleParallel(benchmark::State& st) {
  const int r = static_cast<int>(st.range(0));
  const auto in = noise({8, 3, r, r}, 1);
  const auto g = jittered_grid(8, r);
  for (auto _ : st) benchmark::DoNotOptimize(ops::bilinear_sample(in, g));
}
void BM_SampleReference(benchmark::State& st) {
  const int r = static_cast<int>(st.range(0));
  const auto in = noise({8, 3, r, r}, 1);
  const auto g = jittered_grid(8, r);
  for (auto _ : st) benchmark::DoNotOptimize(ops::reference::bilinear_sample(in, g));
}

void BM_SampleBackwardParallel(benchmark::State& st) {
  const int r = static_cast<int>(st.range(0));
  const auto in = noise({8, 3, r, r}, 1);
  const auto g = jittered_grid(8, r);
  const auto go = noise({8, 3, r, r}, 2);
  Tensor<float> gi;
  SamplerGrid<float> gg;
  for (auto _ : st) {
    ops::bilinear_sample_backward(in, g, go, &gi, &gg);
    benchmark::ClobberMemory();
  }
}
void BM_SampleBackwardReference(benchmark::State& st) {
  const int r = static_cast<int>(st.range(0));
  const auto in = noise({8, 3, r, r}, 1);
  const auto g = jittered_grid(8, r);
  const auto go = noise({8, 3, r, r}, 2);
  Tensor<float> gi;
  SamplerGrid<float> gg;
  for (auto _ : st) {
    ops::reference::bilinear_sample_backward(in, g, go, gi, gg);
    benchmark::ClobberMemory();
  }
}

void BM_UpsampleParallel(benchmark::State& st) {
  const auto in = noise({8, 32, 32, 32}, 3);
  for (auto _ : st) benchmark::DoNotOptimize(ops::bilinear_upsample2x(in));
}
void BM_UpsampleReference(benchmark::State& st) {
  const auto in = noise({8, 32, 32, 32}, 3);
  for (auto _ : st) benchmark::DoNotOptimize(ops::reference::bilinear_upsample2x(in));
}

// Encoder level 2 of the desk model: 16 -> 32 channels, 4x4 stride 2.
void BM_ConvParallel(benchmark::State& st) {
  const auto in = noise({8, 16, 32, 32}, 4);
  const auto w = noise({32, 16, 4, 4}, 5, -0.1f, 0.1f);
  const auto b = noise({32, 1, 1, 1}, 6);
  for (auto _ : st) benchmark::DoNotOptimize(ops::conv2d(in, w, b, 2, 1));
}
void BM_ConvReference(benchmark::State& st) {
  const auto in = noise({8, 16, 32, 32}, 4);
  const auto w = noise({32, 16, 4, 4}, 5, -0.1f, 0.1f);
  const auto b = noise({32, 1, 1, 1}, 6);
  for (auto _ : st) benchmark::DoNotOptimize(ops::reference::conv2d(in, w, b, 2, 1));
}

void BM_ConvBackwardParallel(benchmark::State& st) {
  const auto in = noise({8, 16, 32, 32}, 4);
  const auto w = noise({32, 16, 4, 4}, 5, -0.1f, 0.1f);
  const auto go = noise({8, 32, 16, 16}, 6);
  Tensor<float> gi, gw(w.shape()), gb(Shape4{32, 1, 1, 1});
  for (auto _ : st) {
    ops::conv2d_backward(in, w, go, 2, 1, &gi, gw, gb);
    benchmark::ClobberMemory();
  }
}
void BM_ConvBackwardReference(benchmark::State& st) {
  const auto in = noise({8, 16, 32, 32}, 4);
  const auto w = noise({32, 16, 4, 4}, 5, -0.1f, 0.1f);
  const auto go = noise({8, 32, 16, 16}, 6);
  Tensor<float> gi, gw(w.shape()), gb(Shape4{32, 1, 1, 1});
  for (auto _ : st) {
    ops::reference::conv2d_backward(in, w, go, 2, 1, gi, gw, gb);
    benchmark::ClobberMemory();
  }
}

}  // namespace

BENCHMARK(BM_SampleParallel)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_SampleReference)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_SampleBackwardParallel)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_SampleBackwardReference)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_UpsampleParallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_UpsampleReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvParallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvBackwardParallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvBackwardReference)->Unit(benchmark::kMicrosecond);
BENCHMARK_MAIN();
