// Copyright 2026 The xgrain Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reference loops against the engine kernels on shapes from the default
// training configuration (batch 32, hidden 64, 4 heads, 64 patches).

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "xgrain/kernels.hpp"

namespace {

using namespace xgrain;

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d;
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <bool Ref>
void BM_Gemm(benchmark::State& state) {
  const std::size_t m = static_cast<std::size_t>(state.range(0)), n = 256, k = 64;
  auto a = noise(m * k, 1), b = noise(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Ref) {
      kernels::reference::gemm<float>(false, false, m, n, k, 1.f, a.data(), k, b.data(), n, 0.f, c.data(), n);
    } else {
      kernels::gemm<float>(false, false, m, n, k, 1.f, a.data(), k, b.data(), n, 0.f, c.data(), n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * m * n * k));
}

template <bool Ref>
void BM_Softmax(benchmark::State& state) {
  const std::size_t rows = static_cast<std::size_t>(state.range(0)), cols = 65;
  auto x = noise(rows * cols, 3);
  std::vector<float> y(x.size());
  for (auto _ : state) {
    if constexpr (Ref) {
      kernels::reference::softmax_rows(x.data(), y.data(), rows, cols);
    } else {
      kernels::softmax_rows(x.data(), y.data(), rows, cols);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Ref>
void BM_LayerNorm(benchmark::State& state) {
  const std::size_t rows = static_cast<std::size_t>(state.range(0)), cols = 64;
  auto x = noise(rows * cols, 4);
  std::vector<float> g(cols, 1.f), b(cols, 0.f), y(x.size()), mean(rows), rstd(rows);
  for (auto _ : state) {
    if constexpr (Ref) {
      kernels::reference::layer_norm_forward(x.data(), g.data(), b.data(), y.data(), mean.data(), rstd.data(),
                                             rows, cols, 1e-5f);
    } else {
      kernels::layer_norm_forward(x.data(), g.data(), b.data(), y.data(), mean.data(), rstd.data(), rows,
                                  cols, 1e-5f);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

kernels::AttentionLayout image_layout(std::size_t images, std::size_t tokens, std::size_t heads) {
  std::vector<kernels::AttentionSegment> segs;
  for (std::size_t i = 0; i < images; ++i) segs.push_back({i * tokens, tokens, i * tokens, tokens});
  return kernels::AttentionLayout(segs, heads);
}

template <bool Ref>
void BM_AttentionForward(benchmark::State& state) {
  const std::size_t images = static_cast<std::size_t>(state.range(0)), tokens = 64, hidden = 64;
  const auto layout = image_layout(images, tokens, 4);
  auto q = noise(images * tokens * hidden, 5), k = noise(images * tokens * hidden, 6);
  auto v = noise(images * tokens * hidden, 7);
  std::vector<float> probs(layout.prob_size()), out(q.size());
  for (auto _ : state) {
    if constexpr (Ref) {
      kernels::reference::attention_probs_forward(q.data(), k.data(), hidden, layout, probs.data());
      kernels::reference::attention_apply_forward(probs.data(), v.data(), hidden, layout, out.data());
    } else {
      kernels::attention_probs_forward(q.data(), k.data(), hidden, layout, probs.data());
      kernels::attention_apply_forward(probs.data(), v.data(), hidden, layout, out.data());
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Ref>
void BM_AttentionBackward(benchmark::State& state) {
  const std::size_t images = static_cast<std::size_t>(state.range(0)), tokens = 64, hidden = 64;
  const auto layout = image_layout(images, tokens, 4);
  auto q = noise(images * tokens * hidden, 5), k = noise(images * tokens * hidden, 6);
  auto v = noise(images * tokens * hidden, 7), dout = noise(images * tokens * hidden, 8);
  std::vector<float> probs(layout.prob_size()), dprobs(layout.prob_size());
  std::vector<float> dq(q.size()), dk(q.size()), dv(q.size());
  kernels::attention_probs_forward(q.data(), k.data(), hidden, layout, probs.data());
  for (auto _ : state) {
    std::fill(dprobs.begin(), dprobs.end(), 0.f);
    if constexpr (Ref) {
      kernels::reference::attention_apply_backward(dout.data(), probs.data(), v.data(), hidden, layout,
                                                   dprobs.data(), dv.data());
      kernels::reference::attention_probs_backward(dprobs.data(), probs.data(), q.data(), k.data(), hidden,
                                                   layout, dq.data(), dk.data());
    } else {
      kernels::attention_apply_backward(dout.data(), probs.data(), v.data(), hidden, layout, dprobs.data(),
                                        dv.data());
      kernels::attention_probs_backward(dprobs.data(), probs.data(), q.data(), k.data(), hidden, layout,
                                        dq.data(), dk.data());
    }
    benchmark::DoNotOptimize(dq.data());
  }
}

BENCHMARK(BM_Gemm<true>)->Name("gemm/reference")->Arg(512)->Arg(2048);
BENCHMARK(BM_Gemm<false>)->Name("gemm/engine")->Arg(512)->Arg(2048);
BENCHMARK(BM_Softmax<true>)->Name("softmax/reference")->Arg(8192);
BENCHMARK(BM_Softmax<false>)->Name("softmax/engine")->Arg(8192);
BENCHMARK(BM_LayerNorm<true>)->Name("layer_norm/reference")->Arg(2048);
BENCHMARK(BM_LayerNorm<false>)->Name("layer_norm/engine")->Arg(2048);
BENCHMARK(BM_AttentionForward<true>)->Name("attention_fwd/reference")->Arg(32);
BENCHMARK(BM_AttentionForward<false>)->Name("attention_fwd/engine")->Arg(32);
BENCHMARK(BM_AttentionBackward<true>)->Name("attention_bwd/reference")->Arg(32);
BENCHMARK(BM_AttentionBackward<false>)->Name("attention_bwd/engine")->Arg(32);

}  // namespace

int main(int argc, char** argv) {
  kernels::configure_threads();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
