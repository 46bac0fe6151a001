#include <benchmark/benchmark.h>

#include <random>

#include "fseg/layers.hpp"

using namespace fseg;

namespace {

Tensor<float> random_input(std::size_t c, std::size_t d, std::size_t h, std::size_t w) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor<float> t(c, d, h, w);
  for (auto& v : t.v) v = u(rng);
  return t;
}

nn::ConvWeights<float> random_weights(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(-0.1f, 0.1f);
  nn::ConvWeights<float> p(cin, cout, k, stride);
  for (auto& v : p.w) v = u(rng);
  return p;
}

// Arg: channels in = out, at the stride-2 resolution of a 96x32x32 input.
void BM_Conv3dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = random_input(c, 48, 16, 16);
  const auto p = random_weights(c, c, 3, 1);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv3d(x, p));
  state.counters["FLOP/s"] = benchmark::Counter(2.0 * 27 * static_cast<double>(c * c) * 48 * 16 * 16,
                                                benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3dForward)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Conv3dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = random_input(c, 48, 16, 16);
  const auto p = random_weights(c, c, 3, 1);
  const auto dy = random_input(c, 48, 16, 16);
  for (auto _ : state) {
    nn::ConvWeights<float> g(c, c, 3, 1);
    benchmark::DoNotOptimize(nn::conv3d_backward(x, dy, p, g));
  }
}
BENCHMARK(BM_Conv3dBackward)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_GroupNorm(benchmark::State& state) {
  const auto x = random_input(16, 48, 16, 16);
  nn::GroupNormWeights<float> p(16, 4);
  for (auto _ : state) {
    nn::GroupNormCache<float> cache;
    benchmark::DoNotOptimize(nn::group_norm(x, p, cache));
  }
}
BENCHMARK(BM_GroupNorm)->Unit(benchmark::kMicrosecond);

}  // namespace
