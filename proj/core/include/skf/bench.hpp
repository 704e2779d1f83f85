#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skf/kernels.hpp"

namespace skf {

struct BenchPoint {
  std::size_t b = 1, s = 8, d = 8;
};

struct BenchOptions {
  std::vector<BenchPoint> grid;
  KernelSpec kernel = KernelSpec::linear();
  std::size_t repetitions = 3;
  std::size_t byte_budget = std::size_t(2) << 30;
  // streamed evaluation skipped above this much kernel work (bytes-equivalent)
  std::size_t max_streamed_bytes = std::size_t(256) << 20;
  std::size_t weight_rows = 4;  // H of the contracted weight tensor
  std::uint64_t seed = 0;
};

struct BenchRow {
  BenchPoint point;
  std::size_t estimate_bytes = 0;
  bool materialized_refused = false;
  bool streamed_skipped = false;
  double mat_min_ms = 0.0, mat_median_ms = 0.0;
  double str_min_ms = 0.0, str_median_ms = 0.0;
  double max_abs_diff = 0.0;  // materialized vs streamed, when both ran
};

/// Times materialized vs streamed kernel-tensor contraction across a grid.
/// Grid points whose materialized tensor would exceed the byte budget are
/// recorded as refused (with the size estimate), not run.
std::vector<BenchRow> run_kernel_bench(const BenchOptions& options);

void write_bench_csv(const std::string& path,
                     const std::vector<BenchRow>& rows);

}  // namespace skf
