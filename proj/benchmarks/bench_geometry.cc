// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>

#include "mvdiff/camera/camera.h"
#include "mvdiff/metrics/metrics.h"
#include "mvdiff/recon/recon.h"
#include "mvdiff/scenes/scene.h"

namespace mvdiff {
namespace {

scenes::SceneSpec sphere() {
  scenes::SceneSpec s;
  scenes::Primitive p;
  p.size = Eigen::Vector3d::Constant(0.5);
  s.primitives.push_back(p);
  return s;
}

void BM_EpipolarBias(benchmark::State& state) {
  const auto intr = camera::Intrinsics::centered(32, 32, 32.0);
  const auto a = camera::look_at_pose(0, 20, 3.5), b = camera::look_at_pose(70, 10, 3.5);
  for (auto _ : state) benchmark::DoNotOptimize(camera::epipolar_bias(a, b, intr, intr, {}).values[0]);
}
BENCHMARK(BM_EpipolarBias);

void BM_RenderView(benchmark::State& state) {
  const auto spec = scenes::generate_scene(1, 3);
  const auto cam = scenes::test_rig()[0];
  for (auto _ : state) benchmark::DoNotOptimize(scenes::render_view(spec, cam).image.rgb[0]);
}
BENCHMARK(BM_RenderView);

void BM_SpaceCarve(benchmark::State& state) {
  const int res = static_cast<int>(state.range(0));
  std::vector<recon::Silhouette> views;
  for (const auto& cam : scenes::test_rig()) views.push_back({recon::foreground_mask(scenes::render_view(sphere(), cam)), cam});
  for (auto _ : state) benchmark::DoNotOptimize(recon::space_carve(views, res).count());
}
BENCHMARK(BM_SpaceCarve)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_MarchingCubes(benchmark::State& state) {
  const VoxelGrid grid = scenes::voxelize(sphere(), static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(recon::marching_cubes(grid).triangles.size());
}
BENCHMARK(BM_MarchingCubes)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Chamfer(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Eigen::Vector3d> a(n), b(n);
  for (auto& p : a) p = {u(rng), u(rng), u(rng)};
  for (auto& p : b) p = {u(rng), u(rng), u(rng)};
  for (auto _ : state) benchmark::DoNotOptimize(metrics::chamfer(a, b));
}
BENCHMARK(BM_Chamfer)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0, 1);
  Image a(32, 32), b(32, 32);
  for (float& v : a.rgb) v = u(rng);
  for (float& v : b.rgb) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::ssim(a, b));
}
BENCHMARK(BM_Ssim);

}  // namespace
}  // namespace mvdiff
