#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <set>

#include "oracles.hpp"
#include "skf/optim.hpp"
#include "skf/vit.hpp"

using namespace skf;

namespace {

EncoderConfig tiny_config(AttentionVariant v = AttentionVariant::pseudo) {
  EncoderConfig e;
  e.d_model = 8;
  e.mlp_dim = 16;
  e.n_layers = 2;
  e.n_heads = 2;
  e.variant = v;
  e.patch_size = 2;
  e.image_h = e.image_w = 4;
  return e;
}

}  // namespace

TEST_CASE("patch_embed: single-patch image equals flatten + matmul") {
  std::mt19937_64 rng(81);
  EncoderConfig cfg = tiny_config();
  cfg.patch_size = 4;  // one patch for a 4x4 image
  cfg.with_class_token = true;
  auto params = EncoderParams<double>::init(cfg, rng);
  auto img = uniform_tensor<double>({1, 3, 4, 4}, -1.0, 1.0, rng);
  auto emb = patch_embed(cfg, params, img);
  CHECK(emb.shape() == Shape{1, 2, 8});  // class token + one patch

  // flatten-matmul oracle for the patch token, channel-major pixel order
  for (std::size_t e = 0; e < 8; ++e) {
    double acc = params.patch_b.at({e});
    std::size_t q = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
          acc += img.at({0, c, i, j}) * params.patch_w.at({q, e});
          ++q;
        }
      }
    }
    acc += params.pos_emb.at({1, e});
    CHECK(emb.at({0, 1, e}) == doctest::Approx(acc).epsilon(1e-12));
  }
  // class token row = token + its position
  for (std::size_t e = 0; e < 8; ++e) {
    CHECK(emb.at({0, 0, e}) ==
          doctest::Approx(params.cls_token.at({e}) + params.pos_emb.at({0, e})));
  }
}

TEST_CASE("patch_embed: zero image with zero bias keeps only cls and pos") {
  std::mt19937_64 rng(82);
  EncoderConfig cfg = tiny_config();
  auto params = EncoderParams<double>::init(cfg, rng);
  params.patch_b = Tensor<double>::zeros({cfg.d_model});
  auto img = Tensor<double>::zeros({1, 3, 4, 4});
  auto emb = patch_embed(cfg, params, img);
  for (std::size_t p = 1; p < cfg.seq_len(); ++p) {
    for (std::size_t e = 0; e < cfg.d_model; ++e) {
      CHECK(emb.at({0, p, e}) == doctest::Approx(params.pos_emb.at({p, e})));
    }
  }
}

TEST_CASE("patch_embed: a change in one patch moves only that token") {
  std::mt19937_64 rng(83);
  EncoderConfig cfg = tiny_config();
  auto params = EncoderParams<double>::init(cfg, rng);
  auto img = uniform_tensor<double>({1, 3, 4, 4}, -1.0, 1.0, rng);
  auto img2 = img.clone();
  img2.set({0, 1, 3, 3}, 9.0);  // bottom-right patch (index 3)
  auto a = patch_embed(cfg, params, img);
  auto b = patch_embed(cfg, params, img2);
  for (std::size_t t = 0; t < cfg.seq_len(); ++t) {
    double diff = 0.0;
    for (std::size_t e = 0; e < cfg.d_model; ++e) {
      diff = std::max(diff, std::abs(a.at({0, t, e}) - b.at({0, t, e})));
    }
    if (t == 4) {  // cls + patches 0..3: last patch token
      CHECK(diff > 0.0);
    } else {
      CHECK(diff == 0.0);
    }
  }
}

TEST_CASE("patch_embed: non-divisible extents rejected") {
  EncoderConfig cfg = tiny_config();
  cfg.patch_size = 3;
  std::mt19937_64 rng(84);
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("encoder_forward: zero layers is the identity") {
  std::mt19937_64 rng(85);
  EncoderConfig cfg = tiny_config();
  cfg.n_layers = 0;
  auto params = EncoderParams<double>::init(cfg, rng);
  auto x = uniform_tensor<double>({2, 5, 8}, -1.0, 1.0, rng);
  auto y = encoder_forward(cfg, params, x);
  CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("encoder_forward: zeroed sublayers reduce to the residual path") {
  std::mt19937_64 rng(86);
  EncoderConfig cfg = tiny_config();
  cfg.n_layers = 1;
  auto params = EncoderParams<double>::init(cfg, rng);
  auto& blk = params.blocks[0];
  // zero the attention output path and the MLP second linear
  blk.attn.p = Tensor<double>::zeros({8, 8});
  blk.attn.b2 = Tensor<double>::zeros({8});
  blk.mlp_w2 = Tensor<double>::zeros({16, 8});
  blk.mlp_b2 = Tensor<double>::zeros({8});
  auto x = uniform_tensor<double>({1, 5, 8}, -1.0, 1.0, rng);
  auto y = encoder_forward(cfg, params, x);
  CHECK(max_abs_diff(x, y) < 1e-12);
}

TEST_CASE("encoder_forward: single layer matches the composed oracle") {
  std::mt19937_64 rng(87);
  EncoderConfig cfg = tiny_config(AttentionVariant::standard);
  cfg.n_layers = 1;
  auto params = EncoderParams<double>::init(cfg, rng);
  auto x = uniform_tensor<double>({1, 3, 8}, -1.0, 1.0, rng);
  auto y = encoder_forward(cfg, params, x);

  auto& blk = params.blocks[0];
  auto h = layer_norm(x, blk.ln1_g, blk.ln1_b, 1e-5);
  auto x1 = add(x, standard_mhsa_forward(blk.attn, h));
  auto h2 = layer_norm(x1, blk.ln2_g, blk.ln2_b, 1e-5);
  auto m = gelu(add_broadcast(contract(h2, blk.mlp_w1, "bsd,dm->bsm"),
                              blk.mlp_b1));
  auto ref = add(x1, add_broadcast(contract(m, blk.mlp_w2, "bsm,md->bsd"),
                                   blk.mlp_b2));
  CHECK(max_abs_diff(y, ref) < 1e-12);
}

TEST_CASE("mae_mask: near-zero ratio still masks at least one patch") {
  std::mt19937_64 rng(88);
  auto part = mae_mask(64, 1e-9, rng);
  CHECK(part.masked.size() == 1);
  CHECK(part.visible.size() == 63);
}

TEST_CASE("mae_mask: ratio 0.75 of 64 patches masks 48") {
  std::mt19937_64 rng(89);
  auto part = mae_mask(64, 0.75, rng);
  CHECK(part.masked.size() == 48);
  CHECK(part.visible.size() == 16);
}

TEST_CASE("mae_mask: deterministic, disjoint, exhaustive, sorted") {
  std::mt19937_64 rng_a(90), rng_b(90), rng_c(91);
  auto a = mae_mask(40, 0.6, rng_a);
  auto b = mae_mask(40, 0.6, rng_b);
  CHECK(a.masked == b.masked);
  CHECK(a.visible == b.visible);
  auto c = mae_mask(40, 0.6, rng_c);
  CHECK(a.masked != c.masked);  // different seed, different draw

  std::set<std::size_t> all;
  for (auto i : a.masked) all.insert(i);
  for (auto i : a.visible) all.insert(i);
  CHECK(all.size() == 40);
  CHECK(*all.rbegin() == 39);
  CHECK(std::is_sorted(a.masked.begin(), a.masked.end()));
  CHECK(std::is_sorted(a.visible.begin(), a.visible.end()));
}

TEST_CASE("mae_mask: ratio bounds enforced") {
  std::mt19937_64 rng(92);
  CHECK_THROWS_AS(mae_mask(16, 0.0, rng), Error);
  CHECK_THROWS_AS(mae_mask(16, 1.0, rng), Error);
}

namespace {

MAEConfig tiny_mae() {
  MAEConfig m;
  m.encoder = tiny_config();
  m.decoder = m.encoder;
  m.decoder.d_model = 4;
  m.decoder.mlp_dim = 8;
  m.decoder.n_layers = 1;
  m.mask_ratio = 0.5;
  return m;
}

}  // namespace

TEST_CASE("mae_forward: loss ignores reconstruction at visible patches") {
  std::mt19937_64 rng(93);
  MAEConfig cfg = tiny_mae();
  auto params = MAEParams<double>::init(cfg, rng);
  auto img = uniform_tensor<double>({2, 3, 4, 4}, -1.0, 1.0, rng);

  std::mt19937_64 mask_rng(7);
  auto fwd = mae_forward(cfg, params, img, mask_rng);
  CHECK(fwd.loss.item() >= 0.0);
  CHECK(fwd.reconstruction.shape() == img.shape());

  // recompute the loss by hand from the reconstruction restricted to masked
  // patches; visible-patch pixels must not contribute
  const std::size_t P = cfg.encoder.num_patches();
  const std::size_t q = cfg.encoder.patch_dim();
  auto fmap = patch_gather_map(cfg.encoder, 2, false);
  auto rec_patches = gather_map(fwd.reconstruction, fmap, {2, P, q});
  auto tgt_patches = gather_map(img, fmap, {2, P, q});
  double acc = 0.0;
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t mi : fwd.mask.masked) {
      for (std::size_t i = 0; i < q; ++i) {
        const double d =
            rec_patches.at({b, mi, i}) - tgt_patches.at({b, mi, i});
        acc += d * d;
      }
    }
  }
  acc /= static_cast<double>(2 * fwd.mask.masked.size() * q);
  CHECK(fwd.loss.item() == doctest::Approx(acc).epsilon(1e-9));
}

TEST_CASE("mae_forward: loss is zero iff masked reconstruction matches") {
  std::mt19937_64 rng(94);
  MAEConfig cfg = tiny_mae();
  auto params = MAEParams<double>::init(cfg, rng);
  auto img = uniform_tensor<double>({1, 3, 4, 4}, -1.0, 1.0, rng);
  std::mt19937_64 mask_rng(8);
  auto fwd = mae_forward(cfg, params, img, mask_rng);
  CHECK(fwd.loss.item() > 0.0);  // random init cannot reconstruct exactly
}

TEST_CASE("mae_forward: gradients reach every parameter") {
  std::mt19937_64 rng(95);
  MAEConfig cfg = tiny_mae();
  auto params = MAEParams<double>::init(cfg, rng);
  auto refs = collect_params<double>(params);
  auto img = uniform_tensor<double>({1, 3, 4, 4}, -1.0, 1.0, rng);
  Tape<double> tape;
  Tape<double>::Scope scope(tape);
  for (auto& r : refs) tape.watch(*r.tensor);
  std::mt19937_64 mask_rng(9);
  auto fwd = mae_forward(cfg, params, img, mask_rng);
  auto grads = backward(tape, fwd.loss);
  std::size_t with_grad = 0;
  for (auto& r : refs) {
    if (grads.find(*r.tensor) != nullptr) ++with_grad;
  }
  // every parameter participates except the visible-token rows of nothing:
  // the class token, positions, adapter, mask token, decoder and encoder all
  // feed the loss
  CHECK(with_grad == refs.size());
}

TEST_CASE("classify_forward: zero head gives bias logits") {
  std::mt19937_64 rng(96);
  EncoderConfig cfg = tiny_config();
  auto params = ClassifierParams<double>::init(cfg, 10, rng);
  params.head_w = Tensor<double>::zeros({8, 10});
  for (std::size_t c = 0; c < 10; ++c) {
    params.head_b.set({c}, static_cast<double>(c) * 0.5);
  }
  auto img = uniform_tensor<double>({3, 3, 4, 4}, -1.0, 1.0, rng);
  auto logits = classify_forward(cfg, params, img);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t c = 0; c < 10; ++c) {
      CHECK(logits.at({b, c}) == doctest::Approx(0.5 * c));
    }
  }
}

TEST_CASE("classify_forward: identical images give identical logit rows") {
  std::mt19937_64 rng(97);
  EncoderConfig cfg = tiny_config();
  auto params = ClassifierParams<double>::init(cfg, 10, rng);
  auto one = uniform_tensor<double>({1, 3, 4, 4}, -1.0, 1.0, rng);
  std::vector<double> dup;
  for (int k = 0; k < 3; ++k) {
    dup.insert(dup.end(), one.values().begin(), one.values().end());
  }
  Tensor<double> batch({3, 3, 4, 4}, dup);
  auto logits = classify_forward(cfg, params, batch);
  for (std::size_t c = 0; c < 10; ++c) {
    CHECK(logits.at({0, c}) == doctest::Approx(logits.at({1, c})));
    CHECK(logits.at({1, c}) == doctest::Approx(logits.at({2, c})));
  }
}

TEST_CASE("classify_forward: head gradient matches finite differences") {
  std::mt19937_64 rng(98);
  EncoderConfig cfg = tiny_config();
  cfg.n_layers = 1;
  auto params = ClassifierParams<double>::init(cfg, 10, rng);
  auto img = uniform_tensor<double>({2, 3, 4, 4}, -1.0, 1.0, rng);
  const std::vector<int> labels = {3, 7};
  auto rep = oracle::fd_check<double>({&params.head_w, &params.head_b}, [&] {
    return cross_entropy(classify_forward(cfg, params, img), labels);
  });
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("classify_forward: missing class token is an error") {
  std::mt19937_64 rng(99);
  EncoderConfig cfg = tiny_config();
  cfg.with_class_token = false;
  auto params = ClassifierParams<double>::init(cfg, 10, rng);
  auto img = uniform_tensor<double>({1, 3, 4, 4}, -1.0, 1.0, rng);
  CHECK_THROWS_AS(classify_forward(cfg, params, img), Error);
}

TEST_CASE("class logits are invariant to patch permutations with zero pos") {
  std::mt19937_64 rng(100);
  EncoderConfig cfg = tiny_config(AttentionVariant::standard);
  auto params = ClassifierParams<double>::init(cfg, 10, rng);
  params.encoder.pos_emb = Tensor<double>::zeros({cfg.seq_len(), 8});
  auto img = uniform_tensor<double>({1, 3, 4, 4}, -1.0, 1.0, rng);
  auto logits_a = classify_forward(cfg, params, img);

  // permute the four 2x2 patches of the image: (0,1,2,3) -> (2,0,3,1)
  auto img2 = Tensor<double>::zeros({1, 3, 4, 4});
  const std::size_t perm[4] = {2, 0, 3, 1};
  for (std::size_t p = 0; p < 4; ++p) {
    const std::size_t sy = (perm[p] / 2) * 2, sx = (perm[p] % 2) * 2;
    const std::size_t dy = (p / 2) * 2, dx = (p % 2) * 2;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
          img2.set({0, c, dy + i, dx + j}, img.at({0, c, sy + i, sx + j}));
        }
      }
    }
  }
  auto logits_b = classify_forward(cfg, params, img2);
  CHECK(max_abs_diff(logits_a, logits_b) < 1e-9);
}

TEST_CASE("count_model_params: reference encoder breakdown and totals") {
  EncoderConfig cfg;
  cfg.d_model = 256;
  cfg.mlp_dim = 512;
  cfg.n_layers = 6;
  cfg.n_heads = 8;
  cfg.variant = AttentionVariant::standard;
  cfg.patch_size = 4;
  cfg.image_h = cfg.image_w = 32;
  auto b = count_model_params(cfg);
  CHECK(b.attention_per_block == 263168);
  CHECK(b.mlp_per_block == 256 * 512 + 512 + 512 * 256 + 256);
  CHECK(b.norm_per_block == 4 * 256);
  CHECK(b.per_block ==
        b.attention_per_block + b.mlp_per_block + b.norm_per_block);
  CHECK(b.total == b.embedding + 6 * b.per_block + b.head);  // additive
  CHECK(std::abs(static_cast<double>(b.total) - 3.20e6) / 3.20e6 <= 0.03);

  cfg.variant = AttentionVariant::pseudo;
  auto bp = count_model_params(cfg);
  CHECK(bp.attention_per_block == 139776);
  CHECK(std::abs(static_cast<double>(bp.total) - 2.45e6) / 2.45e6 <= 0.03);

  cfg.variant = AttentionVariant::semi;
  auto bs = count_model_params(cfg);
  CHECK(std::abs(static_cast<double>(bs.total) - 2.50e6) / 2.50e6 <= 0.03);
  CHECK(bs.total - bp.total == 6 * 8192);

  // count matches a real allocation
  std::mt19937_64 rng(101);
  EncoderConfig tiny = tiny_config();
  auto params = ClassifierParams<double>::init(tiny, 10, rng);
  std::size_t allocated = 0;
  params.visit([&](const std::string&, Tensor<double>& t) {
    allocated += t.size();
  });
  CHECK(allocated == count_model_params(tiny).total);
}

TEST_CASE("count_mae_params covers every allocated scalar") {
  MAEConfig cfg = tiny_mae();
  std::mt19937_64 rng(102);
  auto params = MAEParams<double>::init(cfg, rng);
  std::size_t allocated = 0;
  params.visit([&](const std::string&, Tensor<double>& t) {
    allocated += t.size();
  });
  CHECK(allocated == count_mae_params(cfg));
}
