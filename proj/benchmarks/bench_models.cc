// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "mvdiff/common/random.h"
#include "mvdiff/diffusion/pipeline.h"
#include "mvdiff/scenes/dataset.h"
#include "mvdiff/srt/srt.h"

namespace mvdiff {
namespace {

scenes::SceneData scene() {
  scenes::DatasetOptions o;
  o.train_views = 8;
  return scenes::make_scene(o, scenes::Split::kTrain, 0);
}

std::vector<srt::PosedImage> posed_views(const scenes::SceneData& s, std::size_t n) {
  std::vector<srt::PosedImage> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(srt::posed(s.views[i]));
  return out;
}

void BM_SrtRenderView(benchmark::State& state) {
  const srt::SRTConfig config;
  const auto params = srt::init_params<float>(config, 1);
  const auto s = scene();
  const auto inputs = posed_views(s, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(srt::render_view(params, config, inputs, s.views[7].camera).rgb[0]);
  }
}
BENCHMARK(BM_SrtRenderView)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_SrtTrainStep(benchmark::State& state) {
  const srt::SRTConfig config;
  auto params = srt::init_params<float>(config, 1);
  const auto s = scene();
  const auto views = posed_views(s, 6);
  const std::vector<srt::Example> batch(static_cast<std::size_t>(state.range(0)),
                                        {{views[0], views[1], views[2]}, {views[3], views[4], views[5]}});
  std::uint64_t step = 0;
  for (auto _ : state) srt::train_step(params, config, batch, {}, step++, 512);
}
BENCHMARK(BM_SrtTrainStep)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_UNetForward(benchmark::State& state) {
  const diffusion::UNetConfig config;
  const auto params = diffusion::init_unet_params<float>(config, 2);
  const auto v = static_cast<std::size_t>(state.range(0));
  const auto noisy = diffusion::gaussian<float>({v, 3, 32, 32}, 3);
  const auto latent = diffusion::gaussian<float>({v, 3, 32, 32}, 4);
  const auto z = diffusion::gaussian<float>({3 * 64, 64}, 5);
  for (auto _ : state) {
    diff::Tape<float> tape;
    benchmark::DoNotOptimize(
        diffusion::unet_forward(tape, params, config, tape.constant(noisy), tape.constant(latent), tape.constant(z), 100)
            .value()[0]);
  }
}
BENCHMARK(BM_UNetForward)->Arg(1)->Arg(3)->Arg(6)->Unit(benchmark::kMillisecond);

void BM_GenerateMultiview(benchmark::State& state) {
  const srt::SRTConfig srt_config;
  const auto srt_params = srt::init_params<float>(srt_config, 1);
  const diffusion::UNetConfig unet_config;
  const auto unet_params = diffusion::init_unet_params<float>(unet_config, 2);
  const auto sched =
      diffusion::schedule_linear(diffusion::kDefaultSteps, diffusion::kDefaultBetaStart, diffusion::kDefaultBetaEnd);
  const diffusion::Models models{srt_params, srt_config, unet_params, unet_config, sched};
  const auto s = scene();
  const auto inputs = posed_views(s, 1);
  const std::vector<camera::CameraSpec> targets{s.views[3].camera, s.views[5].camera};
  diffusion::GenerateOptions opts;
  opts.candidates = 1;
  opts.sampler.steps = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(diffusion::generate_multiview(models, inputs, targets, opts).best().score);
}
BENCHMARK(BM_GenerateMultiview)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace mvdiff
