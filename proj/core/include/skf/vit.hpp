#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "skf/attention.hpp"
#include "skf/ops.hpp"
#include "skf/tensor.hpp"

namespace skf {

struct EncoderConfig {
  std::size_t d_model = 256;
  std::size_t mlp_dim = 512;
  std::size_t n_layers = 8;
  std::size_t n_heads = 8;
  AttentionVariant variant = AttentionVariant::standard;
  double sigma = 1.0;
  double mlp_dropout = 0.1;
  double residual_dropout = 0.1;  // attention dropout is fixed at 0
  std::size_t patch_size = 4;
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::size_t in_channels = 3;
  bool with_class_token = true;

  std::size_t patches_h() const { return image_h / patch_size; }
  std::size_t patches_w() const { return image_w / patch_size; }
  std::size_t num_patches() const { return patches_h() * patches_w(); }
  std::size_t seq_len() const {
    return num_patches() + (with_class_token ? 1 : 0);
  }
  std::size_t patch_dim() const {
    return patch_size * patch_size * in_channels;
  }

  AttentionConfig attention_config() const {
    return AttentionConfig::make(variant, d_model, n_heads, seq_len(), sigma);
  }

  void validate() const;
};

struct MAEConfig {
  EncoderConfig encoder;  // 8 layers, d=256, mlp=512 by default
  EncoderConfig decoder;  // 6 layers, d=192, mlp=384 by default
  double mask_ratio = 0.75;

  static MAEConfig defaults();
  void validate() const;
};

struct ParamBreakdown {
  std::size_t embedding = 0;
  std::size_t attention_per_block = 0;
  std::size_t mlp_per_block = 0;
  std::size_t norm_per_block = 0;
  std::size_t per_block = 0;
  std::size_t head = 0;
  std::size_t total = 0;
};

/// Exact trainable-scalar count for an encoder + linear classifier.
ParamBreakdown count_model_params(const EncoderConfig& config,
                                  std::size_t n_classes = 10,
                                  bool with_head = true);

/// Exact trainable-scalar count of the full masked autoencoder.
std::size_t count_mae_params(const MAEConfig& config);

struct MaskPartition {
  std::vector<std::size_t> visible;
  std::vector<std::size_t> masked;
};

/// Uniform random partition of patch indices; at least one patch masked and
/// one visible, both lists sorted, deterministic under the rng state.
MaskPartition mae_mask(std::size_t n_patches, double mask_ratio,
                       std::mt19937_64& rng);

struct ForwardMode {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

template <class T>
struct BlockParams {
  Tensor<T> ln1_g, ln1_b;
  AttentionParams<T> attn;
  Tensor<T> ln2_g, ln2_b;
  Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;

  static BlockParams init(const EncoderConfig& config, std::mt19937_64& rng);
  void visit(const std::string& prefix,
             const std::function<void(const std::string&, Tensor<T>&)>& fn);
};

template <class T>
struct EncoderParams {
  Tensor<T> patch_w, patch_b;  // (patch_dim, D), (D)
  Tensor<T> cls_token;         // (D), present iff with_class_token
  Tensor<T> pos_emb;           // (S, D)
  std::vector<BlockParams<T>> blocks;

  static EncoderParams init(const EncoderConfig& config, std::mt19937_64& rng);
  void visit(const std::string& prefix,
             const std::function<void(const std::string&, Tensor<T>&)>& fn);
};

template <class T>
struct MAEParams {
  EncoderParams<T> encoder;
  Tensor<T> adapter_w, adapter_b;  // D_enc -> D_dec
  Tensor<T> mask_token;            // (D_dec)
  Tensor<T> dec_pos;               // (S, D_dec), separate decoder table
  std::vector<BlockParams<T>> dec_blocks;
  Tensor<T> recon_w, recon_b;      // D_dec -> patch_dim

  static MAEParams init(const MAEConfig& config, std::mt19937_64& rng);
  void visit(const std::function<void(const std::string&, Tensor<T>&)>& fn);
};

template <class T>
struct ClassifierParams {
  EncoderParams<T> encoder;
  Tensor<T> head_w, head_b;  // (D, n_classes), (n_classes)

  static ClassifierParams init(const EncoderConfig& config,
                               std::size_t n_classes, std::mt19937_64& rng);
  void visit(const std::function<void(const std::string&, Tensor<T>&)>& fn);
};

/// Flat index map from (B,C,H,W) images to (B,P,patch_dim) patches; a
/// bijection, so the inverse map reassembles images from patches.
std::shared_ptr<const std::vector<std::size_t>> patch_gather_map(
    const EncoderConfig& config, std::size_t batch, bool inverse);

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
Tensor<T> expand_token(const Tensor<T>& token, std::size_t batch,
                       std::size_t count) {
  Tensor<T> ones = Tensor<T>::full({batch, count}, T(1));
  return contract(ones, token, "bn,d->bnd");
}

}  // namespace detail

/// Non-overlapping patch extraction + shared linear projection, class token
/// prepended when configured, learned positional embeddings added.
template <class T>
Tensor<T> patch_embed(const EncoderConfig& config,
                      const EncoderParams<T>& params,
                      const Tensor<T>& images) {
  config.validate();
  if (images.rank() != 4 || images.extent(1) != config.in_channels ||
      images.extent(2) != config.image_h ||
      images.extent(3) != config.image_w) {
    throw Error("patch_embed: images " + shape_str(images.shape()) +
                " do not match configured extents");
  }
  const std::size_t B = images.extent(0);
  const std::size_t P = config.num_patches();
  const std::size_t q = config.patch_dim();
  auto map = patch_gather_map(config, B, false);
  Tensor<T> patches = gather_map(images, map, {B, P, q});
  Tensor<T> tokens = add_broadcast(
      contract(patches, params.patch_w, "bpq,qd->bpd"), params.patch_b);
  if (config.with_class_token) {
    tokens = concat_tokens(detail::expand_token(params.cls_token, B, 1),
                           tokens);
  }
  return add_broadcast(tokens, params.pos_emb);
}

template <class T>
Tensor<T> block_forward(const EncoderConfig& config, BlockParams<T>& block,
                        const Tensor<T>& x, ForwardMode mode,
                        AttentionTrace<T>* trace = nullptr) {
  const bool drop = mode.training && mode.rng != nullptr;
  Tensor<T> h = layer_norm(x, block.ln1_g, block.ln1_b, static_cast<T>(1e-5));
  Tensor<T> att = attention_forward(block.attn, h, trace);
  if (drop) att = dropout(att, config.residual_dropout, *mode.rng, true);
  Tensor<T> x1 = add(x, att);
  Tensor<T> h2 =
      layer_norm(x1, block.ln2_g, block.ln2_b, static_cast<T>(1e-5));
  Tensor<T> m = gelu(add_broadcast(contract(h2, block.mlp_w1, "bsd,dm->bsm"),
                                   block.mlp_b1));
  if (drop) m = dropout(m, config.mlp_dropout, *mode.rng, true);
  Tensor<T> m2 = add_broadcast(contract(m, block.mlp_w2, "bsm,md->bsd"),
                               block.mlp_b2);
  if (drop) m2 = dropout(m2, config.residual_dropout, *mode.rng, true);
  return add(x1, m2);
}

template <class T>
Tensor<T> blocks_forward(const EncoderConfig& config,
                         std::vector<BlockParams<T>>& blocks,
                         const Tensor<T>& x, ForwardMode mode = {},
                         std::vector<AttentionTrace<T>>* traces = nullptr) {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    AttentionTrace<T>* tr = nullptr;
    if (traces) {
      traces->emplace_back();
      tr = &traces->back();
    }
    h = block_forward(config, blocks[i], h, mode, tr);
  }
  return h;
}

/// Pre-norm transformer stack: x + Attn(LN(x)), then x + MLP(LN(x)).
template <class T>
Tensor<T> encoder_forward(const EncoderConfig& config,
                          EncoderParams<T>& params, const Tensor<T>& x,
                          ForwardMode mode = {},
                          std::vector<AttentionTrace<T>>* traces = nullptr) {
  if (x.rank() != 3 || x.extent(2) != config.d_model) {
    throw Error("encoder_forward: input (B,S,D) with D=" +
                std::to_string(config.d_model) + " required");
  }
  return blocks_forward(config, params.blocks, x, mode, traces);
}

template <class T>
struct MAEForwardResult {
  Tensor<T> reconstruction;  // (B,C,H,W)
  Tensor<T> loss;            // scalar, MSE over masked patches only
  MaskPartition mask;
};

/// Masked-autoencoder forward: the encoder sees the class token plus visible
/// patches; the decoder sees adapter-projected visible tokens and a shared
/// mask token with decoder positional embeddings; a transpose-patch
/// projection rebuilds pixels. One mask partition is drawn per call and
/// shared across the batch.
template <class T>
MAEForwardResult<T> mae_forward(const MAEConfig& config, MAEParams<T>& params,
                                const Tensor<T>& images, std::mt19937_64& rng,
                                ForwardMode mode = {}) {
  config.validate();
  const EncoderConfig& enc_cfg = config.encoder;
  const EncoderConfig& dec_cfg = config.decoder;
  const std::size_t B = images.extent(0);
  const std::size_t P = enc_cfg.num_patches();
  const std::size_t q = enc_cfg.patch_dim();

  MAEForwardResult<T> result;
  result.mask = mae_mask(P, config.mask_ratio, rng);
  const auto& visible = result.mask.visible;
  const auto& masked = result.mask.masked;

  Tensor<T> emb = patch_embed(enc_cfg, params.encoder, images);  // (B,P+1,D)
  std::vector<std::size_t> keep;
  keep.push_back(0);  // class token, never masked
  for (std::size_t v : visible) keep.push_back(v + 1);
  Tensor<T> enc_in = index_select_tokens(emb, keep);
  Tensor<T> enc_out = encoder_forward(enc_cfg, params.encoder, enc_in, mode);

  Tensor<T> proj = add_broadcast(
      contract(enc_out, params.adapter_w, "bsd,de->bse"), params.adapter_b);
  Tensor<T> mask_tokens =
      detail::expand_token(params.mask_token, B, masked.size());
  Tensor<T> source = concat_tokens(proj, mask_tokens);  // (B, 1+V+M, Ddec)

  // permutation mapping decoder slot -> source row
  std::vector<std::size_t> slot(P + 1);
  slot[0] = 0;
  for (std::size_t j = 0; j < visible.size(); ++j) slot[visible[j] + 1] = 1 + j;
  for (std::size_t j = 0; j < masked.size(); ++j) {
    slot[masked[j] + 1] = 1 + visible.size() + j;
  }
  Tensor<T> dec_in =
      add_broadcast(index_select_tokens(source, slot), params.dec_pos);
  Tensor<T> dec_out = blocks_forward(dec_cfg, params.dec_blocks, dec_in, mode);

  std::vector<std::size_t> patch_slots(P);
  for (std::size_t i = 0; i < P; ++i) patch_slots[i] = i + 1;
  Tensor<T> patch_tokens = index_select_tokens(dec_out, patch_slots);
  Tensor<T> pred_patches = add_broadcast(
      contract(patch_tokens, params.recon_w, "bpd,dq->bpq"), params.recon_b);

  auto inv_map = patch_gather_map(enc_cfg, B, true);
  result.reconstruction = gather_map(
      pred_patches, inv_map,
      {B, enc_cfg.in_channels, enc_cfg.image_h, enc_cfg.image_w});

  auto fwd_map = patch_gather_map(enc_cfg, B, false);
  Tensor<T> target_patches = gather_map(images, fwd_map, {B, P, q});
  result.loss = mse(index_select_tokens(pred_patches, masked),
                    index_select_tokens(target_patches, masked));
  return result;
}

/// Logits from an affine head over the class-token representation.
template <class T>
Tensor<T> classify_forward(const EncoderConfig& config,
                           ClassifierParams<T>& params,
                           const Tensor<T>& images, ForwardMode mode = {},
                           std::vector<AttentionTrace<T>>* traces = nullptr) {
  if (!config.with_class_token) {
    throw Error("classify_forward: encoder config lacks a class token");
  }
  Tensor<T> emb = patch_embed(config, params.encoder, images);
  Tensor<T> enc = encoder_forward(config, params.encoder, emb, mode, traces);
  Tensor<T> cls = reshape(index_select_tokens(enc, {0}),
                          {images.extent(0), config.d_model});
  return add_broadcast(contract(cls, params.head_w, "bd,dc->bc"),
                       params.head_b);
}

}  // namespace skf
