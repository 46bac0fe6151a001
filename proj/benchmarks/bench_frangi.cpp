#include <benchmark/benchmark.h>

#include <random>

#include "fseg/frangi.hpp"

using namespace fseg;

namespace {

FloatGrid random_volume(Shape3 s) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  FloatGrid g(s);
  for (auto& v : g.values()) v = u(rng);
  return g;
}

void BM_GaussianSmooth(benchmark::State& state) {
  const auto g = random_volume({96, 32, 32});
  const auto sigma = static_cast<float>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(gaussian_smooth(g, sigma));
}
BENCHMARK(BM_GaussianSmooth)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_Vesselness(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto g = random_volume({n * 3, n, n});
  for (auto _ : state) benchmark::DoNotOptimize(vesselness(g));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * g.size()));
}
BENCHMARK(BM_Vesselness)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
