#include <benchmark/benchmark.h>

#include <random>

#include "skf/superposition.hpp"

using namespace skf;

namespace {

SuperpositionLayer<float> make_layer(std::size_t s, std::size_t d,
                                     std::size_t h, bool materialize,
                                     KernelKind kind) {
  std::mt19937_64 rng(7);
  SuperpositionLayer<float> layer;
  layer.inner_spec =
      kind == KernelKind::gaussian ? KernelSpec::gaussian(1.0)
                                   : KernelSpec::linear();
  layer.w_inner = uniform_tensor<float>({h, s, d, d}, -1.0f, 1.0f, rng);
  layer.plan.materialize = materialize;
  layer.plan.block_rows = 16;
  layer.plan.block_refs = 16;
  return layer;
}

Tensor<float> make_input(std::size_t b, std::size_t s, std::size_t d) {
  std::mt19937_64 rng(8);
  return uniform_tensor<float>({b, s, d}, -1.0f, 1.0f, rng);
}

}  // namespace

static void BM_kernel_tensor_materialized(benchmark::State& state) {
  const std::size_t s = static_cast<std::size_t>(state.range(0));
  const std::size_t d = static_cast<std::size_t>(state.range(1));
  auto layer = make_layer(s, d, 4, true, KernelKind::linear);
  auto x = make_input(2, s, d);
  for (auto _ : state) {
    auto psi = inner_apply(layer, x);
    benchmark::DoNotOptimize(psi.data());
  }
  state.SetBytesProcessed(state.iterations() *
                          kernel_tensor_bytes<float>(2, s, s, d));
}
BENCHMARK(BM_kernel_tensor_materialized)
    ->Args({16, 16})
    ->Args({32, 32})
    ->Args({64, 32});

static void BM_kernel_tensor_streamed(benchmark::State& state) {
  const std::size_t s = static_cast<std::size_t>(state.range(0));
  const std::size_t d = static_cast<std::size_t>(state.range(1));
  auto layer = make_layer(s, d, 4, false, KernelKind::linear);
  auto x = make_input(2, s, d);
  for (auto _ : state) {
    auto psi = inner_apply(layer, x);
    benchmark::DoNotOptimize(psi.data());
  }
  state.SetBytesProcessed(state.iterations() *
                          kernel_tensor_bytes<float>(2, s, s, d));
}
BENCHMARK(BM_kernel_tensor_streamed)
    ->Args({16, 16})
    ->Args({32, 32})
    ->Args({64, 32});

static void BM_gaussian_scores(benchmark::State& state) {
  const std::size_t s = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(9);
  auto xh = uniform_tensor<float>({4, s, 4, 8}, -1.0f, 1.0f, rng);
  for (auto _ : state) {
    auto scores = gaussian_score_matrix(xh, 1.0f);
    benchmark::DoNotOptimize(scores.data());
  }
  state.SetItemsProcessed(state.iterations() * 4 * 4 * s * s * 64);
}
BENCHMARK(BM_gaussian_scores)->Arg(17)->Arg(65);

BENCHMARK_MAIN();
