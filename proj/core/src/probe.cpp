#include "skf/probe.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "skf/checkpoint.hpp"
#include "skf/data.hpp"
#include "skf/train.hpp"
#include "skf/vit.hpp"

namespace skf {

namespace fs = std::filesystem;

void write_pgm(const std::string& path, const float* data, std::size_t rows,
               std::size_t cols) {
  float mx = 0.0f;
  for (std::size_t i = 0; i < rows * cols; ++i) mx = std::max(mx, data[i]);
  if (mx <= 0.0f) mx = 1.0f;
  std::ofstream out(path);
  if (!out) throw Error("probe: cannot write " + path);
  out << "P2\n" << cols << " " << rows << "\n255\n";
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const float v = std::clamp(data[r * cols + c] / mx, 0.0f, 1.0f);
      out << static_cast<int>(v * 255.0f + 0.5f);
      out << (c + 1 == cols ? '\n' : ' ');
    }
  }
}

namespace {

void write_csv(const std::string& path, const float* data, std::size_t rows,
               std::size_t cols) {
  std::ofstream out(path);
  if (!out) throw Error("probe: cannot write " + path);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.8g", data[r * cols + c]);
      out << buf << (c + 1 == cols ? '\n' : ',');
    }
  }
}

std::size_t discover_layers(const LoadedCheckpoint& ckpt) {
  std::size_t layers = 0;
  for (const auto& rec : ckpt.manifest.params) {
    if (rec.path.rfind("enc.", 0) != 0) continue;
    const std::size_t layer = std::stoul(rec.path.substr(4));
    layers = std::max(layers, layer + 1);
  }
  if (layers == 0) throw Error("probe: checkpoint holds no encoder blocks");
  return layers;
}

}  // namespace

ProbeSummary run_probe(const ProbeOptions& options) {
  LoadedCheckpoint ckpt = read_checkpoint(options.checkpoint_dir);
  EncoderConfig cfg = encoder_config_from(ckpt.manifest.config);
  cfg.n_layers = discover_layers(ckpt);

  std::mt19937_64 rng(mix_seed(options.seed, 0x9c0beULL));
  EncoderParams<float> params = EncoderParams<float>::init(cfg, rng);
  std::vector<ParamRef<float>> refs;
  params.visit("", [&](const std::string& path, Tensor<float>& t) {
    refs.push_back(ParamRef<float>{path, &t});
  });
  assign_params(ckpt, refs, /*require_all=*/true);

  Dataset images;
  if (options.images.empty() || options.images == "synthetic") {
    images = synthetic_dataset(std::max<std::size_t>(options.image_index + 1,
                                                     16),
                               mix_seed(options.seed, 0x1337ULL),
                               cfg.image_h);
  } else {
    images = load_cifar10(options.images).test;
  }
  if (options.image_index >= images.size()) {
    throw Error("probe: image index out of range");
  }
  const std::size_t idx[] = {options.image_index};
  Tensor<float> batch = images.batch_images<float>(idx);

  const std::size_t layer_end = std::min(options.layer_end, cfg.n_layers);
  if (options.layer_begin >= cfg.n_layers || options.layer_begin >= layer_end) {
    throw Error("probe: layer range [" + std::to_string(options.layer_begin) +
                ", " + std::to_string(options.layer_end) +
                ") out of range for " + std::to_string(cfg.n_layers) +
                " layers");
  }

  std::vector<AttentionTrace<float>> traces;
  Tensor<float> emb = patch_embed(cfg, params, batch);
  encoder_forward(cfg, params, emb, {}, &traces);

  fs::create_directories(options.out_dir);
  ProbeSummary summary;
  summary.layers = layer_end - options.layer_begin;
  summary.heads = cfg.n_heads;
  const std::size_t S = cfg.seq_len();
  const std::size_t n = cfg.n_heads;
  std::vector<float> mean(S * S);
  for (std::size_t layer = options.layer_begin; layer < layer_end; ++layer) {
    const Tensor<float>& maps = traces[layer].maps;    // (1,n,S,S)
    const Tensor<float>& scores = traces[layer].scores;
    std::fill(mean.begin(), mean.end(), 0.0f);
    for (std::size_t h = 0; h < n; ++h) {
      const float* m = maps.data() + h * S * S;
      const std::string stem = (fs::path(options.out_dir) /
                                ("layer" + std::to_string(layer) + "_head" +
                                 std::to_string(h)))
                                   .string();
      write_csv(stem + ".csv", m, S, S);
      write_pgm(stem + ".pgm", m, S, S);
      summary.files_written += 2;
      if (options.raw_scores) {
        write_csv(stem + "_raw.csv", scores.data() + h * S * S, S, S);
        ++summary.files_written;
      }
      for (std::size_t i = 0; i < S * S; ++i) {
        mean[i] += m[i] / static_cast<float>(n);
      }
    }
    const std::string mean_stem =
        (fs::path(options.out_dir) / ("layer" + std::to_string(layer) +
                                      "_mean"))
            .string();
    write_csv(mean_stem + ".csv", mean.data(), S, S);
    write_pgm(mean_stem + ".pgm", mean.data(), S, S);
    summary.files_written += 2;
    if (cfg.with_class_token) {
      // class-token attention over patches, reshaped to the patch grid
      std::vector<float> grid(cfg.num_patches());
      for (std::size_t p = 0; p < cfg.num_patches(); ++p) {
        grid[p] = mean[p + 1];
      }
      const std::string grid_stem =
          (fs::path(options.out_dir) / ("layer" + std::to_string(layer) +
                                        "_cls_grid"))
              .string();
      write_csv(grid_stem + ".csv", grid.data(), cfg.patches_h(),
                cfg.patches_w());
      write_pgm(grid_stem + ".pgm", grid.data(), cfg.patches_h(),
                cfg.patches_w());
      summary.files_written += 2;
    }
  }
  return summary;
}

}  // namespace skf
