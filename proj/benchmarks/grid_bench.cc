// Copyright 2026 The twoway Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <benchmark/benchmark.h>

#include <vector>

#include "twoway/decoding.h"
#include "twoway/grid.h"
#include "twoway/model.h"
#include "twoway/ops.h"
#include "twoway/rng.h"

namespace twoway {
namespace {

constexpr std::size_t kDModel = 32;

EncodedSequence<float> RandomStates(std::size_t len, Rng& rng) {
  EncodedSequence<float> seq{Tensor<float>(Shape{len + 1, kDModel}, 0.0f),
                             std::vector<bool>(len + 1, true)};
  for (auto& v : seq.states.mutable_data()) v = float(rng.uniform(-1.0, 1.0));
  return seq;
}

template <GridState<float> (*Forward)(const TwoDLSTMParams<float>&,
                                      const EncodedSequence<float>&,
                                      const EncodedSequence<float>&)>
void BM_Grid(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  const auto d_cell = std::size_t(state.range(1));
  Rng rng(1);
  const auto params = TwoDLSTMParams<float>::Init(kDModel, d_cell, rng);
  const auto src = RandomStates(n, rng), tgt = RandomStates(n, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(Forward(params, src, tgt));
  state.SetItemsProcessed(state.iterations() * std::int64_t(n * n));
}

void GridArgs(benchmark::internal::Benchmark* b) {
  for (int n : {8, 16, 32}) b->Args({n, 32});
  b->Args({32, 64});
}

BENCHMARK(BM_Grid<forward_diagonal<float>>)->Name("grid/diagonal")->Apply(GridArgs);
BENCHMARK(BM_Grid<forward_naive<float>>)->Name("grid/naive")->Apply(GridArgs);
BENCHMARK(BM_Grid<forward_rows<float>>)->Name("grid/row")->Apply(GridArgs);
BENCHMARK(BM_Grid<forward_columns<float>>)->Name("grid/column")->Apply(GridArgs);

void BM_Matmul(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  Rng rng(2);
  Tensor<float> a(Shape{n, n}, 0.0f), b(Shape{n, n}, 0.0f);
  for (auto& v : a.mutable_data()) v = float(rng.uniform(-1.0, 1.0));
  for (auto& v : b.mutable_data()) v = float(rng.uniform(-1.0, 1.0));
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128);

void BM_Decode(benchmark::State& state) {
  ModelConfig config;
  config.src_vocab = 24;
  config.tgt_vocab = 24;
  config.d_model = kDModel;
  config.d_ff = 64;
  config.heads = 4;
  config.layers = 2;
  config.d_cell = 32;
  Rng rng(3);
  const auto params = BidirModelParams<float>::Init(config, rng);
  std::vector<int> cond;
  for (int k = 0; k < 10; ++k) cond.push_back(int(rng.uniform_int(kNumReserved, 23)));
  const BeamConfig beam{std::size_t(state.range(0)), 12, 0.0};
  const auto dir = state.range(1) ? Direction::kBackward : Direction::kForward;
  for (auto _ : state) benchmark::DoNotOptimize(decode(params, cond, dir, beam));
}
BENCHMARK(BM_Decode)->Args({1, 0})->Args({4, 0})->Args({4, 1})->Args({12, 0});

}  // namespace
}  // namespace twoway

BENCHMARK_MAIN();
