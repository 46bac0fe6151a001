#include <benchmark/benchmark.h>

#include <random>

#include "fseg/densecrf.hpp"

using namespace fseg;

namespace {

// A bbox-sized crop: the CRF runs on the loose box plus a halo.
void BM_MeanField(benchmark::State& state) {
  const auto radius = static_cast<std::uint32_t>(state.range(0));
  const Shape3 s{40, 24, 24};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  FloatGrid prob(s), image(s);
  for (auto& v : prob.values()) v = u(rng) * 0.05f;
  for (auto& v : image.values()) v = 255.0f * u(rng);
  const auto unary = unary_from_probability(prob, 0.01f);
  CrfParams p;
  p.window_radius_vox = radius;
  p.iterations = 10;
  for (auto _ : state) benchmark::DoNotOptimize(mean_field(unary, image, p));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * s.count()));
}
BENCHMARK(BM_MeanField)->Arg(2)->Arg(3)->Arg(5)->Unit(benchmark::kMillisecond);

}  // namespace
