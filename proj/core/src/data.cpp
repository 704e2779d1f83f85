#include "skf/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

namespace skf {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarPixels = 3072;

ChannelStats compute_stats(const std::vector<std::uint8_t>& pixels,
                           std::size_t n, std::size_t per_channel) {
  ChannelStats st;
  if (n == 0) {
    st.stddev = {1.0, 1.0, 1.0};
    return st;
  }
  std::array<double, 3> sum{}, sum_sq{};
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* img = pixels.data() + i * 3 * per_channel;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t k = 0; k < per_channel; ++k) {
        const double v = static_cast<double>(img[c * per_channel + k]) / 255.0;
        sum[c] += v;
        sum_sq[c] += v * v;
      }
    }
  }
  const double denom = static_cast<double>(n * per_channel);
  for (std::size_t c = 0; c < 3; ++c) {
    st.mean[c] = sum[c] / denom;
    const double var = std::max(0.0, sum_sq[c] / denom - st.mean[c] * st.mean[c]);
    st.stddev[c] = std::sqrt(var) > 1e-8 ? std::sqrt(var) : 1.0;
  }
  return st;
}

}  // namespace

Dataset Dataset::from_records(std::size_t width, std::size_t height,
                              std::vector<std::uint8_t> pixels,
                              std::vector<std::uint8_t> labels) {
  const std::size_t per_image = 3 * width * height;
  if (per_image == 0 || pixels.size() != labels.size() * per_image) {
    throw Error("dataset: pixel byte count does not match label count");
  }
  Dataset d;
  d.width_ = width;
  d.height_ = height;
  d.count_ = labels.size();
  d.offset_ = 0;
  d.stats_ = compute_stats(pixels, labels.size(), width * height);
  d.pixels_ =
      std::make_shared<const std::vector<std::uint8_t>>(std::move(pixels));
  d.labels_ =
      std::make_shared<const std::vector<std::uint8_t>>(std::move(labels));
  return d;
}

std::uint8_t Dataset::label(std::size_t i) const {
  if (i >= count_) throw Error("dataset: index out of range");
  return (*labels_)[offset_ + i];
}

std::span<const std::uint8_t> Dataset::raw_image(std::size_t i) const {
  if (i >= count_) throw Error("dataset: index out of range");
  const std::size_t per_image = pixels_per_image();
  return {pixels_->data() + (offset_ + i) * per_image, per_image};
}

Dataset Dataset::subset(std::size_t offset, std::size_t count) const {
  if (offset + count > count_) throw Error("dataset: subset out of range");
  Dataset d = *this;
  d.offset_ = offset_ + offset;
  d.count_ = count;
  return d;
}

std::span<const std::uint8_t> Dataset::raw_bytes() const {
  const std::size_t per_image = pixels_per_image();
  return {pixels_->data() + offset_ * per_image, count_ * per_image};
}

std::span<const std::uint8_t> Dataset::raw_labels() const {
  return {labels_->data() + offset_, count_};
}

namespace {

void read_cifar_file(const fs::path& path, std::vector<std::uint8_t>& pixels,
                     std::vector<std::uint8_t>& labels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cifar10: cannot open " + path.string());
  }
  in.seekg(0, std::ios::end);
  const std::streamoff bytes = in.tellg();
  in.seekg(0);
  if (bytes <= 0 || static_cast<std::size_t>(bytes) % kCifarRecord != 0) {
    throw Error("cifar10: " + path.string() + " is truncated: " +
                std::to_string(bytes) + " bytes is not a multiple of the " +
                std::to_string(kCifarRecord) + "-byte record size");
  }
  const std::size_t n = static_cast<std::size_t>(bytes) / kCifarRecord;
  std::vector<std::uint8_t> record(kCifarRecord);
  for (std::size_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(record.data()), kCifarRecord);
    if (!in) {
      throw Error("cifar10: short read in " + path.string());
    }
    if (record[0] > 9) {
      throw Error("cifar10: " + path.string() + " record " +
                  std::to_string(i) + " has label byte " +
                  std::to_string(record[0]) + " > 9");
    }
    labels.push_back(record[0]);
    pixels.insert(pixels.end(), record.begin() + 1, record.end());
  }
}

}  // namespace

Cifar10 load_cifar10(const std::string& dir) {
  const fs::path root(dir);
  std::vector<std::uint8_t> train_pixels, train_labels;
  std::size_t train_files = 0;
  for (int i = 1; i <= 5; ++i) {
    const fs::path p = root / ("data_batch_" + std::to_string(i) + ".bin");
    if (!fs::exists(p)) continue;
    read_cifar_file(p, train_pixels, train_labels);
    ++train_files;
  }
  if (train_files == 0) {
    throw Error("cifar10: no data_batch_*.bin found in " + dir);
  }
  const fs::path test_path = root / "test_batch.bin";
  if (!fs::exists(test_path)) {
    throw Error("cifar10: missing " + test_path.string());
  }
  std::vector<std::uint8_t> test_pixels, test_labels;
  read_cifar_file(test_path, test_pixels, test_labels);

  Cifar10 out;
  out.train = Dataset::from_records(32, 32, std::move(train_pixels),
                                    std::move(train_labels));
  out.test = Dataset::from_records(32, 32, std::move(test_pixels),
                                   std::move(test_labels));
  out.test.set_stats(out.train.stats());
  return out;
}

namespace {

struct ShapePainter {
  std::size_t w;
  std::vector<std::uint8_t>& img;  // 3 planes

  void put(std::size_t x, std::size_t y, const std::array<int, 3>& rgb) {
    for (std::size_t c = 0; c < 3; ++c) {
      img[c * w * w + y * w + x] =
          static_cast<std::uint8_t>(std::clamp(rgb[c], 0, 255));
    }
  }
};

void draw_shape(int cls, std::size_t w, std::vector<std::uint8_t>& img,
                std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dark(0, 90);
  std::uniform_int_distribution<int> bright(160, 255);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::array<int, 3> bg{dark(rng), dark(rng), dark(rng)};
  std::array<int, 3> fg{bright(rng), bright(rng), bright(rng)};

  ShapePainter p{w, img};
  for (std::size_t y = 0; y < w; ++y) {
    for (std::size_t x = 0; x < w; ++x) p.put(x, y, bg);
  }

  const double wd = static_cast<double>(w);
  const double cx = wd * (0.4 + 0.2 * unit(rng));
  const double cy = wd * (0.4 + 0.2 * unit(rng));
  const double radius = wd * (0.22 + 0.12 * unit(rng));
  const int period = 2 + static_cast<int>(unit(rng) * 2.0);

  auto inside = [&](std::size_t x, std::size_t y) -> bool {
    const double dx = static_cast<double>(x) + 0.5 - cx;
    const double dy = static_cast<double>(y) + 0.5 - cy;
    switch (cls) {
      case 0:  // filled rectangle
        return std::abs(dx) < radius && std::abs(dy) < radius * 0.8;
      case 1:  // hollow rectangle
        return std::abs(dx) < radius && std::abs(dy) < radius &&
               !(std::abs(dx) < radius * 0.55 && std::abs(dy) < radius * 0.55);
      case 2:  // disc
        return dx * dx + dy * dy < radius * radius;
      case 3: {  // ring
        const double r2 = dx * dx + dy * dy;
        return r2 < radius * radius && r2 > radius * radius * 0.3;
      }
      case 4:  // plus
        return (std::abs(dx) < radius * 0.3 && std::abs(dy) < radius) ||
               (std::abs(dy) < radius * 0.3 && std::abs(dx) < radius);
      case 5:  // diagonal cross
        return (std::abs(dx - dy) < radius * 0.35 ||
                std::abs(dx + dy) < radius * 0.35) &&
               std::abs(dx) < radius && std::abs(dy) < radius;
      case 6:  // horizontal stripes
        return (y / static_cast<std::size_t>(period)) % 2 == 0;
      case 7:  // vertical stripes
        return (x / static_cast<std::size_t>(period)) % 2 == 0;
      case 8:  // checkerboard
        return ((x / static_cast<std::size_t>(period)) +
                (y / static_cast<std::size_t>(period))) % 2 == 0;
      case 9:  // triangle
        return dy > -radius && dy < radius &&
               std::abs(dx) < (dy + radius) * 0.5;
      default:
        return false;
    }
  };
  for (std::size_t y = 0; y < w; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (inside(x, y)) p.put(x, y, fg);
    }
  }
  // mild pixel noise
  std::uniform_int_distribution<int> noise(-8, 8);
  for (auto& b : img) {
    b = static_cast<std::uint8_t>(std::clamp(static_cast<int>(b) + noise(rng),
                                             0, 255));
  }
}

}  // namespace

Dataset synthetic_dataset(std::size_t n, std::uint64_t seed,
                          std::size_t image_size) {
  if (n == 0) throw Error("synthetic_dataset: n must be >= 1");
  if (image_size != 8 && image_size != 32) {
    throw Error("synthetic_dataset: image_size must be 8 or 32");
  }
  std::mt19937_64 rng(mix_seed(seed, 0xdadaF00dULL));
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<std::uint8_t>(i % 10);
  }
  for (std::size_t i = n; i-- > 1;) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(labels[i], labels[pick(rng)]);
  }
  const std::size_t per_image = 3 * image_size * image_size;
  std::vector<std::uint8_t> pixels(n * per_image);
  std::vector<std::uint8_t> img(per_image);
  for (std::size_t i = 0; i < n; ++i) {
    draw_shape(labels[i], image_size, img, rng);
    std::copy(img.begin(), img.end(), pixels.begin() + i * per_image);
  }
  return Dataset::from_records(image_size, image_size, std::move(pixels),
                               std::move(labels));
}

void write_cifar_batches(const Dataset& train, const Dataset& test,
                         const std::string& dir) {
  if (train.width() != 32 || train.height() != 32 || test.width() != 32 ||
      test.height() != 32) {
    throw Error("write_cifar_batches: 32x32 images required");
  }
  fs::create_directories(dir);
  auto write_split = [&](const Dataset& d, std::size_t offset,
                         std::size_t count, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("write_cifar_batches: cannot write " + path.string());
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint8_t lbl = d.label(offset + i);
      out.put(static_cast<char>(lbl));
      const auto img = d.raw_image(offset + i);
      out.write(reinterpret_cast<const char*>(img.data()),
                static_cast<std::streamsize>(img.size()));
    }
  };
  const std::size_t per_file = 10000;
  std::size_t written = 0;
  int file_idx = 1;
  while (written < train.size()) {
    if (file_idx > 5) {
      throw Error("write_cifar_batches: train split exceeds 5 batch files");
    }
    const std::size_t count = std::min(per_file, train.size() - written);
    write_split(train, written,
                count, fs::path(dir) / ("data_batch_" +
                                        std::to_string(file_idx) + ".bin"));
    written += count;
    ++file_idx;
  }
  if (test.size() > per_file) {
    throw Error("write_cifar_batches: test split exceeds one batch file");
  }
  write_split(test, 0, test.size(), fs::path(dir) / "test_batch.bin");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t counter) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (counter + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed,
                                           std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(mix_seed(seed, (1ULL << 32) + epoch));
  for (std::size_t i = n; i-- > 1;) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(order[i], order[pick(rng)]);
  }
  return order;
}

}  // namespace skf
