// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>

#include "mvdiff/diffcore/ops.h"

namespace mvdiff::diff {
namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n;
  Tensor<float> t(std::move(shape));
  for (float& v : t.storage()) v = n(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    Tape<float> tape;
    benchmark::DoNotOptimize(matmul(tape.constant(a), tape.constant(b)).value()[0]);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor({3, c, 32, 32}, 3);
  const auto k = random_tensor({c, c, 3, 3}, 4);
  for (auto _ : state) {
    Tape<float> tape;
    Var<float> kv = tape.variable(k);
    tape.backward(mean(conv2d(tape.constant(x), kv, 1, 1)));
    benchmark::DoNotOptimize((*tape.grad(kv))[0]);
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(8)->Arg(32);

void BM_AttentionBlock(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto q = random_tensor({4, n, 16}, 5), k = random_tensor({4, n, 16}, 6);
  const auto bias = random_tensor({n, n}, 7);
  for (auto _ : state) {
    Tape<float> tape;
    const auto logits = matmul(tape.constant(q), tape.constant(k), true);
    benchmark::DoNotOptimize(softmax_rows(logits, tape.constant(bias)).value()[0]);
  }
}
BENCHMARK(BM_AttentionBlock)->Arg(64)->Arg(192);

}  // namespace
}  // namespace mvdiff::diff
