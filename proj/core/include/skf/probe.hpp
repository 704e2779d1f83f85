#pragma once

#include <cstdint>
#include <string>

namespace skf {

struct ProbeOptions {
  std::string checkpoint_dir;
  std::string images = "synthetic";  // "synthetic" or a CIFAR-10 directory
  std::size_t image_index = 0;
  std::size_t layer_begin = 0;
  std::size_t layer_end = SIZE_MAX;  // exclusive; clamped to model depth
  bool raw_scores = false;
  std::string out_dir;
  std::uint64_t seed = 0;
};

struct ProbeSummary {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t files_written = 0;
};

/// Loads an encoder from a checkpoint, runs one image through it, and writes
/// per-layer per-head attention maps plus the head-averaged map as CSV and
/// 8-bit PGM. Class-token rows are additionally written as a patch-grid map.
/// --raw-scores also dumps the scaled pre-softmax scores.
ProbeSummary run_probe(const ProbeOptions& options);

/// Plain (P2) 8-bit PGM, values scaled so the map maximum lands at 255.
void write_pgm(const std::string& path, const float* data, std::size_t rows,
               std::size_t cols);

}  // namespace skf
