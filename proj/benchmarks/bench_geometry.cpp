#include <benchmark/benchmark.h>

#include "lepa/geometry.hpp"
#include "lepa/rng.hpp"

using namespace lepa;

namespace {

ImageTensor make_image(int channels, int side) {
  ImageTensor img = ImageTensor::zeros(channels, side, side);
  Rng rng(1);
  for (auto& v : img.values) v = static_cast<float>(rng.uniform());
  return img;
}

TransformParams bench_params() {
  TransformParams p;
  p.tx = 0.1;
  p.ty = -0.05;
  p.angle = 0.6;
  p.scale = 0.9;
  return p;
}

}  // namespace

static void BM_warp_image(benchmark::State& state) {
  const ImageTensor img = make_image(1, static_cast<int>(state.range(0)));
  const TransformParams p = bench_params();
  for (auto _ : state) {
    benchmark::DoNotOptimize(warp_image(img, p));
  }
}
BENCHMARK(BM_warp_image)->Arg(32)->Arg(64)->Arg(128);

static void BM_resample_grid(benchmark::State& state) {
  EmbeddingGrid g = EmbeddingGrid::zeros(4, 4, static_cast<int>(state.range(0)));
  Rng rng(2);
  for (auto& v : g.data) v = static_cast<float>(rng.uniform(-1, 1));
  const TransformParams p = bench_params();
  for (auto _ : state) {
    benchmark::DoNotOptimize(resample_grid(g, p, Interp::kBilinear));
  }
}
BENCHMARK(BM_resample_grid)->Arg(64)->Arg(256);

static void BM_rot90_grid(benchmark::State& state) {
  EmbeddingGrid g = EmbeddingGrid::zeros(8, 8, 64);
  Rng rng(3);
  for (auto& v : g.data) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto _ : state) {
    benchmark::DoNotOptimize(rot90_grid(g, 1));
  }
}
BENCHMARK(BM_rot90_grid);

BENCHMARK_MAIN();
