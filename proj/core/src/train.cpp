#include "skf/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "skf/checkpoint.hpp"
#include "skf/optim.hpp"

namespace skf {

namespace fs = std::filesystem;

FlatConfig default_run_config() {
  FlatConfig c;
  c.set("seed", std::int64_t{0});
  c.set("model.variant", std::string("pseudo"));
  c.set("model.d_model", std::int64_t{256});
  c.set("model.mlp_dim", std::int64_t{512});
  c.set("model.layers", std::int64_t{6});
  c.set("model.heads", std::int64_t{8});
  c.set("model.sigma", 1.0);
  c.set("model.patch_size", std::int64_t{4});
  c.set("model.image_size", std::int64_t{32});
  c.set("mae.encoder_layers", std::int64_t{8});
  c.set("mae.decoder_dim", std::int64_t{192});
  c.set("mae.decoder_mlp_dim", std::int64_t{384});
  c.set("mae.decoder_layers", std::int64_t{6});
  c.set("mae.mask_ratio", 0.75);
  c.set("train.lr", 1e-3);
  c.set("train.beta1", 0.9);
  c.set("train.beta2", 0.95);
  c.set("train.weight_decay", 1e-4);
  c.set("train.batch_size", std::int64_t{100});
  c.set("train.epochs", std::int64_t{-1});  // -1: 1600 pretrain, 800 finetune
  c.set("train.steps", std::int64_t{-1});   // -1: derive from epochs
  c.set("train.warmup_ratio", 0.05);
  c.set("train.checkpoint_interval", std::int64_t{0});  // 0: final only
  c.set("train.eval_interval", std::int64_t{100});
  c.set("train.grad_clip", false);
  c.set("train.clip_norm", 1.0);
  c.set("data.source", std::string("synthetic"));
  c.set("data.dir", std::string(""));
  c.set("data.n", std::int64_t{2000});
  c.set("data.image_size", std::int64_t{32});
  c.set("data.train_count", std::int64_t{0});
  c.set("data.test_count", std::int64_t{0});
  c.set("finetune.init_layers", std::int64_t{6});
  return c;
}

EncoderConfig encoder_config_from(const FlatConfig& cfg) {
  EncoderConfig e;
  e.d_model = static_cast<std::size_t>(cfg.get_int("model.d_model", 256));
  e.mlp_dim = static_cast<std::size_t>(cfg.get_int("model.mlp_dim", 512));
  e.n_layers = static_cast<std::size_t>(cfg.get_int("model.layers", 6));
  e.n_heads = static_cast<std::size_t>(cfg.get_int("model.heads", 8));
  e.variant = variant_from_string(cfg.get_string("model.variant", "pseudo"));
  e.sigma = cfg.get_double("model.sigma", 1.0);
  e.patch_size = static_cast<std::size_t>(cfg.get_int("model.patch_size", 4));
  const std::size_t img =
      static_cast<std::size_t>(cfg.get_int("model.image_size", 32));
  e.image_h = img;
  e.image_w = img;
  e.validate();
  return e;
}

MAEConfig mae_config_from(const FlatConfig& cfg) {
  MAEConfig m;
  m.encoder = encoder_config_from(cfg);
  m.encoder.n_layers =
      static_cast<std::size_t>(cfg.get_int("mae.encoder_layers", 8));
  m.decoder = m.encoder;
  m.decoder.d_model =
      static_cast<std::size_t>(cfg.get_int("mae.decoder_dim", 192));
  m.decoder.mlp_dim =
      static_cast<std::size_t>(cfg.get_int("mae.decoder_mlp_dim", 384));
  m.decoder.n_layers =
      static_cast<std::size_t>(cfg.get_int("mae.decoder_layers", 6));
  m.mask_ratio = cfg.get_double("mae.mask_ratio", 0.75);
  m.validate();
  return m;
}

DataSplits load_data(const FlatConfig& cfg) {
  const std::string source = cfg.get_string("data.source", "synthetic");
  const std::size_t train_count =
      static_cast<std::size_t>(cfg.get_int("data.train_count", 0));
  const std::size_t test_count =
      static_cast<std::size_t>(cfg.get_int("data.test_count", 0));
  DataSplits out;
  if (source == "cifar10") {
    const std::string dir = cfg.get_string("data.dir", "");
    if (dir.empty()) {
      throw Error("data.source=cifar10 requires data.dir");
    }
    Cifar10 c = load_cifar10(dir);
    out.train = train_count > 0 ? c.train.subset(0, train_count) : c.train;
    out.test = test_count > 0 ? c.test.subset(0, test_count) : c.test;
    return out;
  }
  if (source == "synthetic") {
    const std::size_t n =
        static_cast<std::size_t>(cfg.get_int("data.n", 2000));
    const std::size_t img =
        static_cast<std::size_t>(cfg.get_int("data.image_size", 32));
    const std::uint64_t seed =
        static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    Dataset all = synthetic_dataset(n, mix_seed(seed, 0xda7aULL), img);
    std::size_t tr = train_count > 0 ? train_count : (n * 4) / 5;
    std::size_t te = test_count > 0 ? test_count : n - tr;
    if (tr + te > n) {
      throw Error("data: train_count + test_count exceeds data.n");
    }
    out.train = all.subset(0, tr);
    out.test = all.subset(tr, te);
    return out;
  }
  throw Error("data.source must be 'synthetic' or 'cifar10'");
}

namespace {

class MetricsWriter {
public:
  explicit MetricsWriter(const std::string& path) {
    const bool fresh = !fs::exists(path);
    out_.open(path, std::ios::app);
    if (!out_) throw Error("metrics: cannot open " + path);
    if (fresh) out_ << "step,lr,loss,split\n";
  }

  void row(std::size_t step, double lr, double loss, const std::string& split) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%s\n", step, lr, loss,
                  split.c_str());
    out_ << buf;
    out_.flush();
  }

private:
  std::ofstream out_;
};

struct LossGuard {
  int consecutive = 0;

  void check(double loss, std::size_t step) {
    if (std::isfinite(loss)) {
      consecutive = 0;
      return;
    }
    if (++consecutive >= 2) {
      throw Error("training aborted: non-finite loss at two consecutive "
                  "steps (last step " + std::to_string(step) + ")");
    }
  }
};

double grad_scale_for_clip(const FlatConfig& cfg,
                           const std::vector<ParamRef<float>>& params,
                           const Gradients<float>& grads) {
  if (!cfg.get_bool("train.grad_clip", false)) return 1.0;
  const double clip = cfg.get_double("train.clip_norm", 1.0);
  double norm_sq = 0.0;
  for (const auto& p : params) {
    const Tensor<float>* g = grads.find(*p.tensor);
    if (!g) continue;
    for (float v : g->values()) {
      norm_sq += static_cast<double>(v) * static_cast<double>(v);
    }
  }
  const double norm = std::sqrt(norm_sq);
  return (norm > clip && norm > 0.0) ? clip / norm : 1.0;
}

std::size_t resolve_total_steps(const FlatConfig& cfg, std::size_t train_n,
                                std::size_t batch,
                                std::int64_t default_epochs) {
  const std::int64_t steps = cfg.get_int("train.steps", -1);
  if (steps >= 0) return static_cast<std::size_t>(steps);
  std::int64_t epochs = cfg.get_int("train.epochs", -1);
  if (epochs < 0) epochs = default_epochs;
  const std::size_t bpe = std::max<std::size_t>(1, train_n / batch);
  return static_cast<std::size_t>(epochs) * bpe;
}

AdamWConfig adamw_config_from(const FlatConfig& cfg) {
  AdamWConfig a;
  a.beta1 = cfg.get_double("train.beta1", 0.9);
  a.beta2 = cfg.get_double("train.beta2", 0.95);
  a.weight_decay = cfg.get_double("train.weight_decay", 1e-4);
  return a;
}

std::vector<std::size_t> batch_indices(std::size_t train_n, std::size_t batch,
                                       std::uint64_t seed, std::size_t step) {
  const std::size_t bpe = std::max<std::size_t>(1, train_n / batch);
  const std::size_t epoch = step / bpe;
  const std::size_t bidx = step % bpe;
  const auto perm = epoch_permutation(train_n, seed, epoch);
  const std::size_t lo = bidx * batch;
  const std::size_t hi = std::min(train_n, lo + batch);
  return std::vector<std::size_t>(perm.begin() + lo, perm.begin() + hi);
}

}  // namespace

TrainResult run_pretrain(const FlatConfig& cfg, const std::string& out_dir,
                         const std::string& resume_from) {
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  const MAEConfig mae_cfg = mae_config_from(cfg);
  DataSplits data = load_data(cfg);
  const std::size_t batch =
      static_cast<std::size_t>(cfg.get_int("train.batch_size", 100));
  if (data.train.size() < batch) {
    throw Error("pretrain: train split smaller than one batch");
  }
  const std::size_t total_steps =
      resolve_total_steps(cfg, data.train.size(), batch, 1600);
  const double base_lr = cfg.get_double("train.lr", 1e-3);
  const double warmup = cfg.get_double("train.warmup_ratio", 0.05);
  const std::size_t ckpt_interval = static_cast<std::size_t>(
      cfg.get_int("train.checkpoint_interval", 0));

  std::mt19937_64 init_rng(mix_seed(seed, 0x1417ULL));
  MAEParams<float> params = MAEParams<float>::init(mae_cfg, init_rng);
  auto refs = collect_params<float>(params);
  AdamW<float> opt(adamw_config_from(cfg));

  std::size_t start_step = 0;
  if (!resume_from.empty()) {
    LoadedCheckpoint ckpt = read_checkpoint(resume_from);
    if (ckpt.manifest.arch_hash != arch_hash(cfg)) {
      throw Error("pretrain resume refused: architecture hash mismatch, "
                  "checkpoint " + std::to_string(ckpt.manifest.arch_hash) +
                  " vs config " + std::to_string(arch_hash(cfg)));
    }
    assign_params(ckpt, refs, /*require_all=*/true);
    restore_optimizer(ckpt, opt);
    start_step = static_cast<std::size_t>(ckpt.manifest.step);
  }

  fs::create_directories(out_dir);
  MetricsWriter metrics((fs::path(out_dir) / "metrics.csv").string());
  auto save = [&](std::size_t step, const std::string& name) {
    const std::string dir = (fs::path(out_dir) / name).string();
    save_checkpoint(dir, cfg, step, seed, refs, &opt);
    return dir;
  };
  save(start_step, "ckpt-" + std::to_string(start_step));

  TrainResult result;
  LossGuard guard;
  for (std::size_t step = start_step; step < total_steps; ++step) {
    const auto idx = batch_indices(data.train.size(), batch, seed, step);
    Tensor<float> images = data.train.batch_images<float>(idx);
    std::mt19937_64 step_rng(mix_seed(seed, step));

    Tape<float> tape;
    Tape<float>::Scope scope(tape);
    for (auto& p : refs) tape.watch(*p.tensor);
    ForwardMode mode{true, &step_rng};
    auto fwd = mae_forward(mae_cfg, params, images, step_rng, mode);
    const double loss = static_cast<double>(fwd.loss.item());
    guard.check(loss, step);
    if (result.steps == 0) result.first_loss = loss;
    result.final_loss = loss;
    ++result.steps;

    const double lr_t =
        cosine_warmup_lr(step + 1, total_steps, base_lr, warmup);
    auto grads = backward(tape, fwd.loss);
    const double gs = grad_scale_for_clip(cfg, refs, grads);
    if (gs != 1.0) {
      // clip by scaling lr; decoupled decay is tiny relative to the clip
      opt.step(refs, grads, lr_t * gs);
    } else if (!opt.step(refs, grads, lr_t)) {
      std::fprintf(stderr, "[skf] step %zu rejected: non-finite gradients\n",
                   step);
    }
    metrics.row(step, lr_t, loss, "train");
    if (ckpt_interval > 0 && (step + 1) % ckpt_interval == 0) {
      save(step + 1, "ckpt-" + std::to_string(step + 1));
    }
  }
  result.checkpoint_dir = save(total_steps, "ckpt-final");
  result.rejected_steps = opt.rejected_steps();

  {
    std::ofstream out(fs::path(out_dir) / "result.json");
    out << "{\n  \"steps\": " << result.steps
        << ",\n  \"first_loss\": " << result.first_loss
        << ",\n  \"final_loss\": " << result.final_loss << "\n}\n";
  }
  return result;
}

double evaluate_classifier(const EncoderConfig& config,
                           ClassifierParams<float>& params,
                           const Dataset& split, std::size_t batch_size) {
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < split.size(); lo += batch_size) {
    const std::size_t hi = std::min(split.size(), lo + batch_size);
    idx.clear();
    for (std::size_t i = lo; i < hi; ++i) idx.push_back(i);
    Tensor<float> images = split.batch_images<float>(idx);
    Tensor<float> logits = classify_forward(config, params, images);
    const auto labels = split.batch_labels(idx);
    const std::size_t classes = logits.extent(1);
    const float* p = logits.data();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (p[b * classes + c] > p[b * classes + best]) best = c;
      }
      if (static_cast<int>(best) == labels[b]) ++correct;
    }
  }
  return split.size() > 0
             ? static_cast<double>(correct) / static_cast<double>(split.size())
             : 0.0;
}

TrainResult run_finetune(const FlatConfig& cfg,
                         const std::string& checkpoint_dir,
                         const std::string& out_dir) {
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  const EncoderConfig enc_cfg = encoder_config_from(cfg);
  DataSplits data = load_data(cfg);
  const std::size_t batch =
      static_cast<std::size_t>(cfg.get_int("train.batch_size", 100));
  if (data.train.size() < batch) {
    throw Error("finetune: train split smaller than one batch");
  }
  const std::size_t total_steps =
      resolve_total_steps(cfg, data.train.size(), batch, 800);
  const double base_lr = cfg.get_double("train.lr", 1e-3);
  const double warmup = cfg.get_double("train.warmup_ratio", 0.05);
  const std::size_t eval_interval = static_cast<std::size_t>(
      cfg.get_int("train.eval_interval", 100));

  std::mt19937_64 init_rng(mix_seed(seed, 0x2417ULL));
  ClassifierParams<float> params =
      ClassifierParams<float>::init(enc_cfg, 10, init_rng);
  auto refs = collect_params<float>(params);

  if (!checkpoint_dir.empty()) {
    LoadedCheckpoint ckpt = read_checkpoint(checkpoint_dir);
    const std::uint64_t want = arch_hash(cfg);
    if (ckpt.manifest.arch_hash != want) {
      throw Error("finetune refused: architecture hash mismatch, checkpoint " +
                  std::to_string(ckpt.manifest.arch_hash) + " vs config " +
                  std::to_string(want));
    }
    const std::size_t init_layers = std::min<std::size_t>(
        static_cast<std::size_t>(cfg.get_int("finetune.init_layers", 6)),
        enc_cfg.n_layers);
    std::vector<ParamRef<float>> transfer;
    for (auto& p : refs) {
      if (p.path.rfind("embed.", 0) == 0) {
        transfer.push_back(p);
        continue;
      }
      if (p.path.rfind("enc.", 0) == 0) {
        const std::size_t layer = std::stoul(p.path.substr(4));
        if (layer < init_layers) transfer.push_back(p);
      }
    }
    assign_params(ckpt, transfer, /*require_all=*/true);
  }

  fs::create_directories(out_dir);
  MetricsWriter metrics((fs::path(out_dir) / "metrics.csv").string());
  AdamW<float> opt(adamw_config_from(cfg));
  auto save = [&](std::size_t step, const std::string& name) {
    const std::string dir = (fs::path(out_dir) / name).string();
    save_checkpoint(dir, cfg, step, seed, refs, &opt);
    return dir;
  };
  save(0, "ckpt-0");

  TrainResult result;
  LossGuard guard;
  for (std::size_t step = 0; step < total_steps; ++step) {
    const auto idx = batch_indices(data.train.size(), batch, seed, step);
    Tensor<float> images = data.train.batch_images<float>(idx);
    const auto labels = data.train.batch_labels(idx);
    std::mt19937_64 step_rng(mix_seed(seed, step));

    Tape<float> tape;
    Tape<float>::Scope scope(tape);
    for (auto& p : refs) tape.watch(*p.tensor);
    ForwardMode mode{true, &step_rng};
    Tensor<float> logits = classify_forward(enc_cfg, params, images, mode);
    Tensor<float> loss_t = cross_entropy(logits, labels);
    const double loss = static_cast<double>(loss_t.item());
    guard.check(loss, step);
    if (result.steps == 0) result.first_loss = loss;
    result.final_loss = loss;
    ++result.steps;

    const double lr_t =
        cosine_warmup_lr(step + 1, total_steps, base_lr, warmup);
    auto grads = backward(tape, loss_t);
    const double gs = grad_scale_for_clip(cfg, refs, grads);
    if (gs != 1.0) {
      opt.step(refs, grads, lr_t * gs);
    } else if (!opt.step(refs, grads, lr_t)) {
      std::fprintf(stderr, "[skf] step %zu rejected: non-finite gradients\n",
                   step);
    }
    metrics.row(step, lr_t, loss, "train");

    if (eval_interval > 0 && (step + 1) % eval_interval == 0) {
      const double acc =
          evaluate_classifier(enc_cfg, params, data.test, batch);
      metrics.row(step, lr_t, acc, "test_acc");
    }
  }
  result.checkpoint_dir = save(total_steps, "ckpt-final");
  result.test_accuracy =
      evaluate_classifier(enc_cfg, params, data.test, batch);
  result.rejected_steps = opt.rejected_steps();
  {
    std::ofstream out(fs::path(out_dir) / "result.json");
    out << "{\n  \"steps\": " << result.steps
        << ",\n  \"first_loss\": " << result.first_loss
        << ",\n  \"final_loss\": " << result.final_loss
        << ",\n  \"test_accuracy\": " << result.test_accuracy << "\n}\n";
  }
  return result;
}

}  // namespace skf
