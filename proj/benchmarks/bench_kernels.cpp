// Copyright 2026  muquant authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <benchmark/benchmark.h>

#include <vector>

#include "muquant/kernels.hpp"
#include "muquant/model.hpp"
#include "muquant/ops.hpp"
#include "muquant/random.hpp"

using namespace muquant;

static void BM_GemmNN(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  std::vector<float> a(n * n), b(n * n), c(n * n);
  for (auto& v : a) v = static_cast<float>(rng.normal());
  for (auto& v : b) v = static_cast<float>(rng.normal());
  for (auto _ : state) {
    kernels::gemm_nn<float>(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_GemmNN)->Arg(64)->Arg(256)->Arg(512);

static void BM_Conv1d(benchmark::State& state) {
  const auto length = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  auto x = Tensor<float>::zeros({64, length});
  auto k = Tensor<float>::zeros({64, 64, 8});
  for (auto& v : x.mutable_data()) v = static_cast<float>(rng.normal());
  for (auto& v : k.mutable_data()) v = static_cast<float>(rng.normal());
  NoGradGuard guard;
  for (auto _ : state) {
    auto y = conv1d(x, k, Tensor<float>(), {8, 0, 1});
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_Conv1d)->Arg(800)->Arg(3200);

// One desk-preset pre-training forward/backward on a 2 s segment.
static void BM_DeskPretrainStep(benchmark::State& state) {
  Model<float> model(ModelConfig::desk(), 3);
  Waveform wave;
  Rng rng(4);
  wave.samples.resize(32000);
  for (auto& s : wave.samples) s = static_cast<float>(0.3 * rng.normal());
  ObjectiveSettings settings;
  settings.num_negatives = 10;
  std::uint64_t step = 0;
  for (auto _ : state) {
    auto clone = model.clone();
    auto out = clone.pretrain_forward(wave, settings, 2.0f, step++);
    backward(out.loss.total);
  }
}
BENCHMARK(BM_DeskPretrainStep)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
