#include "skf/bench.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>

#include "skf/superposition.hpp"

namespace skf {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <class F>
std::pair<double, double> time_reps(std::size_t reps, F&& fn) {
  std::vector<double> samples;
  samples.reserve(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(
        std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return {*std::min_element(samples.begin(), samples.end()), median(samples)};
}

}  // namespace

std::vector<BenchRow> run_kernel_bench(const BenchOptions& options) {
  if (options.repetitions == 0) throw Error("bench: repetitions must be >= 1");
  std::vector<BenchRow> rows;
  std::mt19937_64 rng(options.seed);
  for (const BenchPoint& pt : options.grid) {
    BenchRow row;
    row.point = pt;
    row.estimate_bytes =
        kernel_tensor_bytes<float>(pt.b, pt.s, pt.s, pt.d);

    SuperpositionLayer<float> layer;
    layer.inner_spec = options.kernel;
    layer.plan.byte_budget = options.byte_budget;
    layer.plan.block_rows = 16;
    layer.plan.block_refs = 16;
    const std::size_t h = options.weight_rows;

    row.materialized_refused = row.estimate_bytes > options.byte_budget;
    row.streamed_skipped = row.estimate_bytes > options.max_streamed_bytes;

    if (row.materialized_refused && row.streamed_skipped) {
      rows.push_back(row);
      continue;
    }
    auto x = uniform_tensor<float>({pt.b, pt.s, pt.d}, -1.0f, 1.0f, rng);
    layer.w_inner =
        uniform_tensor<float>({h, pt.s, pt.d, pt.d}, -1.0f, 1.0f, rng);

    Tensor<float> mat_out, str_out;
    if (!row.materialized_refused) {
      layer.plan.materialize = true;
      auto [mn, md] = time_reps(options.repetitions,
                                [&] { mat_out = inner_apply(layer, x); });
      row.mat_min_ms = mn;
      row.mat_median_ms = md;
    }
    if (!row.streamed_skipped) {
      layer.plan.materialize = false;
      auto [mn, md] = time_reps(options.repetitions,
                                [&] { str_out = inner_apply(layer, x); });
      row.str_min_ms = mn;
      row.str_median_ms = md;
    }
    if (!row.materialized_refused && !row.streamed_skipped) {
      row.max_abs_diff = max_abs_diff(mat_out, str_out);
    }
    rows.push_back(row);
  }
  return rows;
}

void write_bench_csv(const std::string& path,
                     const std::vector<BenchRow>& rows) {
  std::filesystem::create_directories(
      std::filesystem::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw Error("bench: cannot write " + path);
  out << "B,S,D,estimate_bytes,materialized,mat_min_ms,mat_median_ms,"
         "streamed,str_min_ms,str_median_ms,max_abs_diff\n";
  for (const auto& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "%zu,%zu,%zu,%zu,%s,%.4f,%.4f,%s,%.4f,%.4f,%.3e\n",
                  r.point.b, r.point.s, r.point.d, r.estimate_bytes,
                  r.materialized_refused ? "refused" : "ok", r.mat_min_ms,
                  r.mat_median_ms, r.streamed_skipped ? "skipped" : "ok",
                  r.str_min_ms, r.str_median_ms, r.max_abs_diff);
    out << buf;
  }
}

}  // namespace skf
