#include <benchmark/benchmark.h>

#include "fseg/geometry.hpp"
#include "fseg/network.hpp"
#include "fseg/phantom.hpp"
#include "fseg/weaksup.hpp"

using namespace fseg;

namespace {

const Phantom& phantom() {
  static const Phantom p = [] {
    PhantomSpec s;
    s.control_points = random_centerline(s, 5);
    s.rng_seed = 5;
    return generate_phantom(s);
  }();
  return p;
}

void BM_PhantomGenerate(benchmark::State& state) {
  PhantomSpec s;
  s.control_points = random_centerline(s, 6);
  for (auto _ : state) benchmark::DoNotOptimize(generate_phantom(s));
}
BENCHMARK(BM_PhantomGenerate)->Unit(benchmark::kMillisecond);

void BM_Encode(benchmark::State& state) {
  const Network<float> net(NetworkConfig{.rng_seed = 1});
  const auto x = network_input(phantom().volume);
  for (auto _ : state) benchmark::DoNotOptimize(net.encode(x));
}
BENCHMARK(BM_Encode)->Unit(benchmark::kMillisecond);

void BM_Infer(benchmark::State& state) {
  const Network<float> net(NetworkConfig{.rng_seed = 1});
  for (auto _ : state) benchmark::DoNotOptimize(infer(net, phantom().volume));
}
BENCHMARK(BM_Infer)->Unit(benchmark::kMillisecond);

void BM_ScanConvert(benchmark::State& state) {
  const auto& v = phantom().volume;
  const auto g = ProbeGeometry::for_volume(v);
  for (auto _ : state) benchmark::DoNotOptimize(frustum_to_cartesian(v, g, v.radial_step_mm));
}
BENCHMARK(BM_ScanConvert)->Unit(benchmark::kMillisecond);

}  // namespace
