#include <benchmark/benchmark.h>

#include <random>

#include "skf/ops.hpp"

using namespace skf;

namespace {

Tensor<float> rand_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return uniform_tensor<float>(std::move(shape), -1.0f, 1.0f, rng);
}

}  // namespace

static void BM_contract_matmul_fastpath(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  auto a = rand_tensor({n, n}, 1);
  auto b = rand_tensor({n, n}, 2);
  for (auto _ : state) {
    auto c = contract(a, b, "ij,jk->ik", ContractPath::fastpath);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_contract_matmul_fastpath)->Arg(32)->Arg(128)->Arg(256);

static void BM_contract_matmul_loopnest(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  auto a = rand_tensor({n, n}, 1);
  auto b = rand_tensor({n, n}, 2);
  for (auto _ : state) {
    auto c = contract(a, b, "ij,jk->ik", ContractPath::loopnest);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_contract_matmul_loopnest)->Arg(32)->Arg(128);

static void BM_contract_attention_scores(benchmark::State& state) {
  // per-head score contraction at a desk-scale shape
  const std::size_t s = static_cast<std::size_t>(state.range(0));
  auto q = rand_tensor({8, s, 4, 16}, 3);
  auto k = rand_tensor({8, s, 4, 16}, 4);
  for (auto _ : state) {
    auto scores = contract(q, k, "bsnd,brnd->bnsr");
    benchmark::DoNotOptimize(scores.data());
  }
  state.SetItemsProcessed(state.iterations() * 8 * 4 * s * s * 16);
}
BENCHMARK(BM_contract_attention_scores)->Arg(17)->Arg(65);

static void BM_softmax_rows(benchmark::State& state) {
  const std::size_t s = static_cast<std::size_t>(state.range(0));
  auto x = rand_tensor({8, 4, s, s}, 5);
  for (auto _ : state) {
    auto y = softmax_lastaxis(x);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_softmax_rows)->Arg(17)->Arg(65);

BENCHMARK_MAIN();
