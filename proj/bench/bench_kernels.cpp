// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

// Serial reference kernels vs the OpenMP versions, plus a full denoiser
// forward pass. Run with OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include <vector>

#include "lrd/denoiser.hpp"
#include "lrd/kernels.hpp"

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  lrd::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = lrd::normal01(rng);
  return v;
}

void BM_MatmulReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    lrd::kernels::reference::matmul(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_MatmulParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    lrd::kernels::matmul(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_SoftmaxReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto src = random_vec(n * n, 3);
  std::vector<double> x(src);
  for (auto _ : state) {
    x = src;
    lrd::kernels::reference::softmax_rows(x, n, n);
    benchmark::DoNotOptimize(x.data());
  }
}

void BM_SoftmaxParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto src = random_vec(n * n, 3);
  std::vector<double> x(src);
  for (auto _ : state) {
    x = src;
    lrd::kernels::softmax_rows(x, n, n);
    benchmark::DoNotOptimize(x.data());
  }
}

void BM_Forward(benchmark::State& state) {
  lrd::DenoiserConfig cfg;
  cfg.d = static_cast<std::size_t>(state.range(0));
  cfg.d_ff = 2 * cfg.d;
  cfg.L_max = 16;
  lrd::Rng rng(4);
  const auto model = lrd::DenoiserModel::init(cfg, rng);
  const lrd::TokenSeq tokens(cfg.L_max, static_cast<lrd::TokenId>(cfg.V));
  const lrd::Matrix x = model.embed_tokens(tokens);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x));
}

}  // namespace

BENCHMARK(BM_MatmulReference)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_MatmulParallel)->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_SoftmaxReference)->Arg(64)->Arg(512);
BENCHMARK(BM_SoftmaxParallel)->Arg(64)->Arg(512);
BENCHMARK(BM_Forward)->Arg(32)->Arg(128);

BENCHMARK_MAIN();
