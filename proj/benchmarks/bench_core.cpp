// Copyright 2026 The ovfsim Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <benchmark/benchmark.h>

#include <memory>
#include <random>
#include <vector>

#include "ovfsim/autodiff.hpp"
#include "ovfsim/device_model.hpp"
#include "ovfsim/evaluation.hpp"
#include "ovfsim/models.hpp"
#include "ovfsim/training.hpp"

using namespace ovfsim;

namespace {

Tensor uniform(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (Real& v : t.data()) v = rng.uniform(-1, 1);
  return t;
}

Batch mnist_like_batch(std::size_t n) {
  Batch b{uniform({n, 1, 28, 28}, 3), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) b.labels[i] = static_cast<int>(i % 10);
  return b;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = uniform({n, n}, 1), b = uniform({n, n}, 2);
  for (auto _ : state) {
    Graph g(GradMode::kDisabled);
    benchmark::DoNotOptimize(matmul(g.constant(a), g.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  Tensor x = uniform({32, 8, 13, 13}, 1);
  Tensor k = uniform({16, 8, 3, 3}, 2);
  for (auto _ : state) {
    k.clear_grad();
    Graph g;
    const Var y = conv2d(g.constant(x), g.parameter(k));
    g.backward(sum(y));
    benchmark::DoNotOptimize(k.grad().data());
  }
}
BENCHMARK(BM_Conv2dForwardBackward);

void BM_PerturbLayer(benchmark::State& state) {
  DeviceConfig d;
  d.sigma_d = 0.3;
  const QuantizedLayer q = quantize(uniform({400, 10}, 1), d);
  Rng rng(2);
  for (auto _ : state) benchmark::DoNotOptimize(perturb(q, d, rng).data().data());
  state.SetItemsProcessed(state.iterations() * 4000);
}
BENCHMARK(BM_PerturbLayer);

void BM_TrainStep(benchmark::State& state) {
  const auto regime = static_cast<Regime>(state.range(0));
  const ModelSpec spec = ModelSpec::small_cnn();
  Rng rng(1);
  ParamSet params = build(spec, rng);
  const Batch batch = mnist_like_batch(32);
  TrainConfig c;
  c.regime = regime;
  c.device.sigma_d = regime == Regime::kVanilla ? 0.0 : 0.3;
  if (regime == Regime::kOvf) c.ovf = OvfConfig{};
  DeviceNoise noise(c.device, NoiseSpace::kDeviceModel, NoiseSharing::kIndependent, 4);
  Sgd sgd;
  for (auto _ : state) benchmark::DoNotOptimize(train_step(params, spec, batch, c, noise, sgd, 1e-4).loss);
  state.SetLabel(std::string(to_string(regime)));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_MonteCarloRun(benchmark::State& state) {
  const ModelSpec spec = ModelSpec::small_cnn();
  Rng rng(1);
  const ParamSet params = build(spec, rng);
  Dataset data;
  data.inputs = uniform({500, 1, 28, 28}, 5);
  data.labels.assign(500, 0);
  data.num_classes = 10;
  DeviceConfig d;
  d.sigma_d = 0.3;
  EvalOptions o;
  o.runs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(monte_carlo_eval(params, spec, data, d, o).mean_accuracy);
  state.SetItemsProcessed(state.iterations() * 500);
}
BENCHMARK(BM_MonteCarloRun)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
