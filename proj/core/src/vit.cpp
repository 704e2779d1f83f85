#include "skf/vit.hpp"

#include <algorithm>
#include <cmath>

namespace skf {

void EncoderConfig::validate() const {
  if (d_model == 0 || mlp_dim == 0 || n_heads == 0) {
    throw Error("encoder config: zero extent");
  }
  if (patch_size == 0 || image_h % patch_size != 0 ||
      image_w % patch_size != 0) {
    throw Error("encoder config: image " + std::to_string(image_h) + "x" +
                std::to_string(image_w) + " not tiled by patch size " +
                std::to_string(patch_size));
  }
  attention_config();  // validates divisibility and variant fields
}

MAEConfig MAEConfig::defaults() {
  MAEConfig c;
  c.encoder.d_model = 256;
  c.encoder.mlp_dim = 512;
  c.encoder.n_layers = 8;
  c.encoder.n_heads = 8;
  c.decoder = c.encoder;
  c.decoder.d_model = 192;
  c.decoder.mlp_dim = 384;
  c.decoder.n_layers = 6;
  c.mask_ratio = 0.75;
  return c;
}

void MAEConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (!encoder.with_class_token) {
    throw Error("mae config: encoder requires the class token");
  }
  if (decoder.patch_size != encoder.patch_size ||
      decoder.image_h != encoder.image_h ||
      decoder.image_w != encoder.image_w) {
    throw Error("mae config: decoder patch grid must match the encoder");
  }
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
    throw Error("mae config: mask_ratio must lie in (0,1)");
  }
}

ParamBreakdown count_model_params(const EncoderConfig& config,
                                  std::size_t n_classes, bool with_head) {
  config.validate();
  const std::size_t d = config.d_model;
  ParamBreakdown b;
  b.embedding = config.patch_dim() * d + d + config.seq_len() * d +
                (config.with_class_token ? d : 0);
  b.attention_per_block = count_params(config.attention_config());
  b.mlp_per_block =
      d * config.mlp_dim + config.mlp_dim + config.mlp_dim * d + d;
  b.norm_per_block = 4 * d;
  b.per_block = b.attention_per_block + b.mlp_per_block + b.norm_per_block;
  b.head = with_head ? d * n_classes + n_classes : 0;
  b.total = b.embedding + config.n_layers * b.per_block + b.head;
  return b;
}

std::size_t count_mae_params(const MAEConfig& config) {
  config.validate();
  const auto enc = count_model_params(config.encoder, 0, false);
  const auto dec_block = count_model_params(config.decoder, 0, false);
  const std::size_t d_enc = config.encoder.d_model;
  const std::size_t d_dec = config.decoder.d_model;
  std::size_t total = enc.total;
  total += d_enc * d_dec + d_dec;                        // adapter
  total += d_dec;                                        // mask token
  total += config.encoder.seq_len() * d_dec;             // decoder positions
  total += config.decoder.n_layers * dec_block.per_block;
  total += d_dec * config.encoder.patch_dim() + config.encoder.patch_dim();
  return total;
}

MaskPartition mae_mask(std::size_t n_patches, double mask_ratio,
                       std::mt19937_64& rng) {
  if (n_patches < 2) {
    throw Error("mae_mask: at least two patches required");
  }
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
    throw Error("mae_mask: mask_ratio must lie in (0,1)");
  }
  std::size_t n_masked = static_cast<std::size_t>(
      std::llround(mask_ratio * static_cast<double>(n_patches)));
  n_masked = std::clamp<std::size_t>(n_masked, 1, n_patches - 1);

  std::vector<std::size_t> order(n_patches);
  for (std::size_t i = 0; i < n_patches; ++i) order[i] = i;
  for (std::size_t i = n_patches; i-- > 1;) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(order[i], order[pick(rng)]);
  }
  MaskPartition part;
  part.masked.assign(order.begin(), order.begin() + n_masked);
  part.visible.assign(order.begin() + n_masked, order.end());
  std::sort(part.masked.begin(), part.masked.end());
  std::sort(part.visible.begin(), part.visible.end());
  return part;
}

std::shared_ptr<const std::vector<std::size_t>> patch_gather_map(
    const EncoderConfig& config, std::size_t batch, bool inverse) {
  const std::size_t C = config.in_channels, H = config.image_h,
                    W = config.image_w, ps = config.patch_size;
  const std::size_t ph = config.patches_h(), pw = config.patches_w();
  const std::size_t P = ph * pw;
  const std::size_t q = config.patch_dim();
  auto map = std::make_shared<std::vector<std::size_t>>(batch * P * q);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t p = 0; p < P; ++p) {
      const std::size_t py = p / pw, px = p % pw;
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < ps; ++i) {
          for (std::size_t j = 0; j < ps; ++j) {
            const std::size_t patch_flat =
                ((b * P + p) * C + c) * ps * ps + i * ps + j;
            const std::size_t image_flat =
                ((b * C + c) * H + py * ps + i) * W + px * ps + j;
            if (inverse) {
              (*map)[image_flat] = patch_flat;
            } else {
              (*map)[patch_flat] = image_flat;
            }
          }
        }
      }
    }
  }
  return map;
}

namespace {

template <class T>
Tensor<T> xavier2(Shape shape, std::size_t fan_in, std::size_t fan_out,
                  std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_tensor<T>(std::move(shape), static_cast<T>(-limit),
                           static_cast<T>(limit), rng);
}

}  // namespace

template <class T>
BlockParams<T> BlockParams<T>::init(const EncoderConfig& config,
                                    std::mt19937_64& rng) {
  const std::size_t d = config.d_model, m = config.mlp_dim;
  BlockParams<T> b;
  b.ln1_g = Tensor<T>::full({d}, T(1));
  b.ln1_b = Tensor<T>::zeros({d});
  b.attn = AttentionParams<T>::init(config.attention_config(), rng);
  b.ln2_g = Tensor<T>::full({d}, T(1));
  b.ln2_b = Tensor<T>::zeros({d});
  b.mlp_w1 = xavier2<T>({d, m}, d, m, rng);
  b.mlp_b1 = Tensor<T>::zeros({m});
  b.mlp_w2 = xavier2<T>({m, d}, m, d, rng);
  b.mlp_b2 = Tensor<T>::zeros({d});
  return b;
}

template <class T>
void BlockParams<T>::visit(
    const std::string& prefix,
    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  fn(prefix + "ln1_g", ln1_g);
  fn(prefix + "ln1_b", ln1_b);
  attn.visit([&](const std::string& name, Tensor<T>& t) {
    fn(prefix + "attn." + name, t);
  });
  fn(prefix + "ln2_g", ln2_g);
  fn(prefix + "ln2_b", ln2_b);
  fn(prefix + "mlp_w1", mlp_w1);
  fn(prefix + "mlp_b1", mlp_b1);
  fn(prefix + "mlp_w2", mlp_w2);
  fn(prefix + "mlp_b2", mlp_b2);
}

template <class T>
EncoderParams<T> EncoderParams<T>::init(const EncoderConfig& config,
                                        std::mt19937_64& rng) {
  config.validate();
  const std::size_t d = config.d_model;
  EncoderParams<T> p;
  p.patch_w = xavier2<T>({config.patch_dim(), d}, config.patch_dim(), d, rng);
  p.patch_b = Tensor<T>::zeros({d});
  if (config.with_class_token) {
    p.cls_token = normal_tensor<T>({d}, T(0), static_cast<T>(0.02), rng);
  } else {
    p.cls_token = Tensor<T>::zeros({0});
  }
  p.pos_emb = normal_tensor<T>({config.seq_len(), d}, T(0),
                               static_cast<T>(0.02), rng);
  p.blocks.reserve(config.n_layers);
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    p.blocks.push_back(BlockParams<T>::init(config, rng));
  }
  return p;
}

template <class T>
void EncoderParams<T>::visit(
    const std::string& prefix,
    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  fn(prefix + "embed.patch_w", patch_w);
  fn(prefix + "embed.patch_b", patch_b);
  if (cls_token.size() > 0 && cls_token.rank() == 1) {
    fn(prefix + "embed.cls", cls_token);
  }
  fn(prefix + "embed.pos", pos_emb);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].visit(prefix + "enc." + std::to_string(i) + ".", fn);
  }
}

template <class T>
MAEParams<T> MAEParams<T>::init(const MAEConfig& config, std::mt19937_64& rng) {
  config.validate();
  const std::size_t d_enc = config.encoder.d_model;
  const std::size_t d_dec = config.decoder.d_model;
  MAEParams<T> p;
  p.encoder = EncoderParams<T>::init(config.encoder, rng);
  p.adapter_w = xavier2<T>({d_enc, d_dec}, d_enc, d_dec, rng);
  p.adapter_b = Tensor<T>::zeros({d_dec});
  p.mask_token = normal_tensor<T>({d_dec}, T(0), static_cast<T>(0.02), rng);
  p.dec_pos = normal_tensor<T>({config.encoder.seq_len(), d_dec}, T(0),
                               static_cast<T>(0.02), rng);
  p.dec_blocks.reserve(config.decoder.n_layers);
  for (std::size_t i = 0; i < config.decoder.n_layers; ++i) {
    p.dec_blocks.push_back(BlockParams<T>::init(config.decoder, rng));
  }
  p.recon_w = xavier2<T>({d_dec, config.encoder.patch_dim()}, d_dec,
                         config.encoder.patch_dim(), rng);
  p.recon_b = Tensor<T>::zeros({config.encoder.patch_dim()});
  return p;
}

template <class T>
void MAEParams<T>::visit(
    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  encoder.visit("", fn);
  fn("adapter.w", adapter_w);
  fn("adapter.b", adapter_b);
  fn("mask_token", mask_token);
  fn("dec_pos", dec_pos);
  for (std::size_t i = 0; i < dec_blocks.size(); ++i) {
    dec_blocks[i].visit("dec." + std::to_string(i) + ".", fn);
  }
  fn("recon.w", recon_w);
  fn("recon.b", recon_b);
}

template <class T>
ClassifierParams<T> ClassifierParams<T>::init(const EncoderConfig& config,
                                              std::size_t n_classes,
                                              std::mt19937_64& rng) {
  ClassifierParams<T> p;
  p.encoder = EncoderParams<T>::init(config, rng);
  p.head_w = xavier2<T>({config.d_model, n_classes}, config.d_model,
                        n_classes, rng);
  p.head_b = Tensor<T>::zeros({n_classes});
  return p;
}

template <class T>
void ClassifierParams<T>::visit(
    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  encoder.visit("", fn);
  fn("head.w", head_w);
  fn("head.b", head_b);
}

template struct BlockParams<float>;
template struct BlockParams<double>;
template struct EncoderParams<float>;
template struct EncoderParams<double>;
template struct MAEParams<float>;
template struct MAEParams<double>;
template struct ClassifierParams<float>;
template struct ClassifierParams<double>;

}  // namespace skf
