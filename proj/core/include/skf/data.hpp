#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "skf/tensor.hpp"

namespace skf {

struct ChannelStats {
  std::array<double, 3> mean{};
  std::array<double, 3> stddev{};
};

/// Image classification dataset stored as raw bytes (planar RGB, one label
/// byte per example). Batches are materialized on demand as standardized
/// float tensors: pixel/255 scaled to [0,1], then per-channel standardized
/// with the stats attached to the dataset (computed from the train split).
class Dataset {
public:
  Dataset() = default;

  static Dataset from_records(std::size_t width, std::size_t height,
                              std::vector<std::uint8_t> pixels,
                              std::vector<std::uint8_t> labels);

  std::size_t size() const { return count_; }
  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  static constexpr std::size_t channels() { return 3; }
  std::size_t pixels_per_image() const { return 3 * width_ * height_; }

  std::uint8_t label(std::size_t i) const;
  std::span<const std::uint8_t> raw_image(std::size_t i) const;

  const ChannelStats& stats() const { return stats_; }
  void set_stats(const ChannelStats& s) { stats_ = s; }

  /// Shares the underlying bytes; keeps the parent's standardization stats.
  Dataset subset(std::size_t offset, std::size_t count) const;

  template <class T>
  Tensor<T> batch_images(std::span<const std::size_t> indices) const {
    const std::size_t ppc = width_ * height_;
    Tensor<T> out = Tensor<T>::zeros({indices.size(), 3, height_, width_});
    T* o = out.mutable_data();
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const auto img = raw_image(indices[b]);
      for (std::size_t c = 0; c < 3; ++c) {
        const double mean = stats_.mean[c];
        const double inv = 1.0 / stats_.stddev[c];
        for (std::size_t i = 0; i < ppc; ++i) {
          const double v = static_cast<double>(img[c * ppc + i]) / 255.0;
          o[(b * 3 + c) * ppc + i] = static_cast<T>((v - mean) * inv);
        }
      }
    }
    return out;
  }

  std::vector<int> batch_labels(std::span<const std::size_t> indices) const {
    std::vector<int> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      out[i] = static_cast<int>(label(indices[i]));
    }
    return out;
  }

  /// Raw byte content (pixels of every record in order), for determinism
  /// checks and serialization.
  std::span<const std::uint8_t> raw_bytes() const;
  std::span<const std::uint8_t> raw_labels() const;

private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::size_t offset_ = 0;
  std::size_t count_ = 0;
  std::shared_ptr<const std::vector<std::uint8_t>> pixels_;
  std::shared_ptr<const std::vector<std::uint8_t>> labels_;
  ChannelStats stats_;
};

struct Cifar10 {
  Dataset train;
  Dataset test;
};

/// Loads the standard CIFAR-10 binary batches (3073-byte records, one label
/// byte + 3072 planar RGB bytes) from a directory holding data_batch_*.bin
/// and test_batch.bin. Standardization constants come from the train split;
/// the test split reuses them.
Cifar10 load_cifar10(const std::string& dir);

/// Deterministic RGB images of parametric shapes, 10 classes with exactly
/// balanced counts (round-robin assignment, shuffled). image_size is 8 or 32.
Dataset synthetic_dataset(std::size_t n, std::uint64_t seed,
                          std::size_t image_size = 32);

/// Writes a dataset pair in the CIFAR-10 binary batch format (up to 10000
/// records per data_batch file).
void write_cifar_batches(const Dataset& train, const Dataset& test,
                         const std::string& dir);

/// Epoch shuffling as a pure function of (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed,
                                           std::size_t epoch);

/// splitmix64; used to derive independent streams from (seed, counter).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t counter);

}  // namespace skf
