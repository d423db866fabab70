#include <benchmark/benchmark.h>

#include <numeric>

#include "lepa/data_io.hpp"
#include "lepa/nn.hpp"
#include "lepa/training.hpp"

using namespace lepa;

namespace {

nn::ModelState<float>& desk_state() {
  static nn::ModelState<float> state = nn::init_model<float>(nn::ModelConfig{}, 7);
  return state;
}

std::vector<ImageTensor>& desk_images() {
  static std::vector<ImageTensor> images = [] {
    DatasetSpec spec;
    spec.n_images = 16;
    spec.seed = 11;
    auto data = generate_dataset(spec);
    normalize(data.images, compute_channel_stats(data.images));
    return data.images;
  }();
  return images;
}

}  // namespace

static void BM_encode_image(benchmark::State& state) {
  auto& model = desk_state();
  const auto& img = desk_images()[0];
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::encode_image(model, model.params, img));
  }
}
BENCHMARK(BM_encode_image);

static void BM_lepa_step(benchmark::State& state) {
  auto model = desk_state();
  const auto& images = desk_images();
  const int batch_size = static_cast<int>(state.range(0));
  std::vector<const ImageTensor*> batch;
  for (int i = 0; i < batch_size; ++i) batch.push_back(&images[i]);

  train::MaskSamplingConfig mask_cfg;
  train::AdamW opt;
  train::StepContext ctx;
  ctx.lr = 1e-3;
  ctx.momentum = 0.996;
  int step = 0;
  for (auto _ : state) {
    std::vector<train::MaskSpec> masks;
    Rng mask_rng(step);
    for (int i = 0; i < batch_size; ++i) {
      masks.push_back(train::sample_masks(mask_rng, 4, 4, mask_cfg));
    }
    Rng rng(1000 + step++);
    benchmark::DoNotOptimize(
        train::lepa_step(model, batch, masks, opt, rng, TransformRanges{}, ctx));
  }
}
BENCHMARK(BM_lepa_step)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

static void BM_grad_check_eval(benchmark::State& state) {
  const nn::ModelConfig tiny = nn::tiny_gradcheck_config();
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::grad_check_lepa<float>(tiny, 1e-3, 7));
  }
}
BENCHMARK(BM_grad_check_eval)->Unit(benchmark::kMillisecond)->Iterations(1);
