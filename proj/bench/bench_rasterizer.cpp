// Tiled OpenMP renderer against the serial per-pixel reference, forward and backward.
// Scene: a synthetic frame (textured floor plus two blob clusters) at the given size.

#include "gs4d/dataset.hpp"
#include "gs4d/rasterizer.hpp"

#include <benchmark/benchmark.h>
#include <omp.h>

#include <map>
#include <random>

using namespace gs4d;

namespace {

struct Fixture {
  std::vector<GaussianPrimitive> prims;
  Camera camera;
  RenderUpstream up;
};

const Fixture& fixture(int size) {
  static std::map<int, Fixture> cache;
  auto it = cache.find(size);
  if (it != cache.end()) return it->second;
  SyntheticSpec spec;
  spec.views = 1;
  spec.frames = 1;
  spec.width = spec.height = size;
  spec.holdout = false;
  const SyntheticScene s = build_synthetic_scene(spec);
  Fixture f;
  f.prims = s.frame_scene(0).combined();
  f.camera = s.cameras[0];
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  f.up.color = Image(size, size, 3);
  f.up.feature = Image(size, size, kFeatureDim);
  f.up.alpha = Image(size, size, 1);
  for (auto* im : {&f.up.color, &f.up.feature, &f.up.alpha})
    for (auto& x : im->data) x = n(rng);
  return cache.emplace(size, std::move(f)).first->second;
}

void set_threads(benchmark::State& st) {
  // arg 1: 0 = all cores
  if (st.range(1) > 0) omp_set_num_threads(static_cast<int>(st.range(1)));
  else omp_set_num_threads(omp_get_num_procs());
}

void BM_ForwardTiled(benchmark::State& st) {
  const Fixture& f = fixture(static_cast<int>(st.range(0)));
  set_threads(st);
  for (auto _ : st) benchmark::DoNotOptimize(rasterize(f.prims, f.camera));
  st.counters["primitives"] = static_cast<double>(f.prims.size());
}

void BM_ForwardReference(benchmark::State& st) {
  const Fixture& f = fixture(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(rasterize_reference(f.prims, f.camera));
}

void BM_BackwardTiled(benchmark::State& st) {
  const Fixture& f = fixture(static_cast<int>(st.range(0)));
  set_threads(st);
  const RenderTarget t = rasterize(f.prims, f.camera);
  for (auto _ : st) benchmark::DoNotOptimize(rasterize_backward(t, f.up));
}

void BM_BackwardReference(benchmark::State& st) {
  const Fixture& f = fixture(static_cast<int>(st.range(0)));
  const RenderTarget t = rasterize_reference(f.prims, f.camera);
  for (auto _ : st) benchmark::DoNotOptimize(rasterize_backward_reference(t, f.up));
}

}  // namespace

BENCHMARK(BM_ForwardTiled)->Args({64, 0})->Args({128, 0})->Args({128, 1})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardReference)->Args({64, 1})->Args({128, 1})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardTiled)->Args({64, 0})->Args({128, 0})->Args({128, 1})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardReference)->Args({64, 1})->Args({128, 1})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
