#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "oracles.hpp"
#include "skf/attention.hpp"
#include "skf/superposition.hpp"

using namespace skf;

namespace {

template <class T>
Tensor<T> permute_tokens(const Tensor<T>& x,
                         const std::vector<std::size_t>& perm) {
  const std::size_t B = x.extent(0), S = x.extent(1), D = x.extent(2);
  Tensor<T> out = Tensor<T>::zeros({B, S, D});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t d = 0; d < D; ++d) {
        out.set({b, s, d}, x.at({b, perm[s], d}));
      }
    }
  }
  return out;
}

// slice head i out of a (S,D) matrix laid out as concatenated heads
template <class T>
std::vector<std::vector<double>> head_slice(const Tensor<T>& m, std::size_t s,
                                            std::size_t dh, std::size_t head) {
  std::vector<std::vector<double>> out(s, std::vector<double>(dh));
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t c = 0; c < dh; ++c) {
      out[r][c] = static_cast<double>(m.at({0, r, head * dh + c}));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("standard: zero scores give the rowwise mean (uniform attention)") {
  std::mt19937_64 rng(61);
  auto cfg = AttentionConfig::make(AttentionVariant::standard, 4, 1);
  AttentionParams<double> p;
  p.config = cfg;
  p.wq = Tensor<double>::zeros({4, 4});
  p.wk = Tensor<double>::zeros({4, 4});
  p.wv = Tensor<double>::eye(4);
  p.wo = Tensor<double>::eye(4);
  p.bq = p.bk = p.bv = p.bo = Tensor<double>::zeros({4});
  auto x = uniform_tensor<double>({1, 3, 4}, -1.0, 1.0, rng);
  auto y = standard_mhsa_forward(p, x);
  for (std::size_t d = 0; d < 4; ++d) {
    const double mean =
        (x.at({0, 0, d}) + x.at({0, 1, d}) + x.at({0, 2, d})) / 3.0;
    for (std::size_t s = 0; s < 3; ++s) {
      CHECK(y.at({0, s, d}) == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("standard: random B=1,S=3,D=4,n=2 equals the per-head loop oracle") {
  std::mt19937_64 rng(62);
  auto cfg = AttentionConfig::make(AttentionVariant::standard, 4, 2);
  auto p = AttentionParams<double>::init(cfg, rng);
  p.bq = uniform_tensor<double>({4}, -0.2, 0.2, rng);
  p.bk = uniform_tensor<double>({4}, -0.2, 0.2, rng);
  p.bv = uniform_tensor<double>({4}, -0.2, 0.2, rng);
  p.bo = uniform_tensor<double>({4}, -0.2, 0.2, rng);
  auto x = uniform_tensor<double>({1, 3, 4}, -1.0, 1.0, rng);
  auto y = standard_mhsa_forward(p, x);

  const std::size_t S = 3, D = 4, n = 2, dh = 2;
  // explicit slicing oracle
  auto affine = [&](const Tensor<double>& w, const Tensor<double>& b) {
    Tensor<double> out = Tensor<double>::zeros({1, S, D});
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t e = 0; e < D; ++e) {
        double acc = b.at({e});
        for (std::size_t d = 0; d < D; ++d) {
          acc += x.at({0, s, d}) * w.at({d, e});
        }
        out.set({0, s, e}, acc);
      }
    }
    return out;
  };
  auto q = affine(p.wq, p.bq), k = affine(p.wk, p.bk), v = affine(p.wv, p.bv);
  Tensor<double> heads = Tensor<double>::zeros({1, S, D});
  const double scale_v = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t i = 0; i < n; ++i) {
    auto qi = head_slice(q, S, dh, i), ki = head_slice(k, S, dh, i),
         vi = head_slice(v, S, dh, i);
    for (std::size_t s = 0; s < S; ++s) {
      std::vector<double> row(S);
      double mx = -1e300;
      for (std::size_t r = 0; r < S; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += qi[s][c] * ki[r][c];
        row[r] = acc * scale_v;
        mx = std::max(mx, row[r]);
      }
      double denom = 0.0;
      for (double& e : row) {
        e = std::exp(e - mx);
        denom += e;
      }
      for (double& e : row) e /= denom;
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < S; ++r) acc += row[r] * vi[r][c];
        heads.set({0, s, i * dh + c}, acc);
      }
    }
  }
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t e = 0; e < D; ++e) {
      double acc = p.bo.at({e});
      for (std::size_t d = 0; d < D; ++d) {
        acc += heads.at({0, s, d}) * p.wo.at({d, e});
      }
      CHECK(y.at({0, s, e}) == doctest::Approx(acc).epsilon(1e-10));
    }
  }
}

TEST_CASE("attention forwards are permutation-equivariant over tokens") {
  std::mt19937_64 rng(63);
  const std::vector<std::size_t> perm = {3, 0, 2, 1};
  auto x = uniform_tensor<double>({2, 4, 8}, -1.0, 1.0, rng);
  auto xp = permute_tokens(x, perm);
  const AttentionVariant variants[] = {
      AttentionVariant::standard, AttentionVariant::pseudo,
      AttentionVariant::semi, AttentionVariant::gaussian};
  for (auto v : variants) {
    auto cfg = AttentionConfig::make(v, 8, 2);
    auto p = AttentionParams<double>::init(cfg, rng);
    auto y = attention_forward(p, x);
    auto yp = attention_forward(p, xp);
    CHECK_MESSAGE(max_abs_diff(permute_tokens(y, perm), yp) < 1e-10,
                  variant_name(v));
  }
}

TEST_CASE("pseudo: zero A gives uniform attention over in-projections") {
  std::mt19937_64 rng(64);
  auto cfg = AttentionConfig::make(AttentionVariant::pseudo, 4, 2);
  auto p = AttentionParams<double>::init(cfg, rng);
  p.a = Tensor<double>::zeros({2, 2, 2});
  auto x = uniform_tensor<double>({1, 3, 4}, -1.0, 1.0, rng);
  AttentionTrace<double> trace;
  auto y = pseudo_mhsa_forward(p, x, &trace);
  for (double v : trace.maps.values()) {
    CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
  }
  // output equals rowwise-mean(X~) P + b2
  auto xt = add_broadcast(contract(x, p.u, "bsd,de->bse"), p.b1);
  Tensor<double> mean = Tensor<double>::zeros({1, 3, 4});
  for (std::size_t d = 0; d < 4; ++d) {
    const double m =
        (xt.at({0, 0, d}) + xt.at({0, 1, d}) + xt.at({0, 2, d})) / 3.0;
    for (std::size_t s = 0; s < 3; ++s) mean.set({0, s, d}, m);
  }
  auto expect = add_broadcast(contract(mean, p.p, "bsd,de->bse"), p.b2);
  CHECK(max_abs_diff(y, expect) < 1e-12);
}

TEST_CASE("pseudo: random B=1,S=4,D=8,n=2 equals the loop oracle") {
  std::mt19937_64 rng(65);
  auto cfg = AttentionConfig::make(AttentionVariant::pseudo, 8, 2);
  auto p = AttentionParams<double>::init(cfg, rng);
  p.b1 = uniform_tensor<double>({8}, -0.2, 0.2, rng);
  p.b2 = uniform_tensor<double>({8}, -0.2, 0.2, rng);
  auto x = uniform_tensor<double>({1, 4, 8}, -1.0, 1.0, rng);
  auto y = pseudo_mhsa_forward(p, x);

  const std::size_t S = 4, D = 8, n = 2, dh = 4;
  Tensor<double> xt = Tensor<double>::zeros({1, S, D});
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t e = 0; e < D; ++e) {
      double acc = p.b1.at({e});
      for (std::size_t d = 0; d < D; ++d) {
        acc += x.at({0, s, d}) * p.u.at({d, e});
      }
      xt.set({0, s, e}, acc);
    }
  }
  Tensor<double> heads = Tensor<double>::zeros({1, S, D});
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = head_slice(xt, S, dh, i);
    for (std::size_t s = 0; s < S; ++s) {
      std::vector<double> row(S);
      double mx = -1e300;
      for (std::size_t r = 0; r < S; ++r) {
        double acc = 0.0;
        for (std::size_t a = 0; a < dh; ++a) {
          for (std::size_t b = 0; b < dh; ++b) {
            acc += xi[s][a] * p.a.at({i, a, b}) * xi[r][b];
          }
        }
        row[r] = acc / static_cast<double>(dh);
        mx = std::max(mx, row[r]);
      }
      double denom = 0.0;
      for (double& e : row) {
        e = std::exp(e - mx);
        denom += e;
      }
      for (double& e : row) e /= denom;
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < S; ++r) acc += row[r] * xi[r][c];
        heads.set({0, s, i * dh + c}, acc);
      }
    }
  }
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t e = 0; e < D; ++e) {
      double acc = p.b2.at({e});
      for (std::size_t d = 0; d < D; ++d) {
        acc += heads.at({0, s, d}) * p.p.at({d, e});
      }
      CHECK(y.at({0, s, e}) == doctest::Approx(acc).epsilon(1e-10));
    }
  }
}

TEST_CASE("pseudo_to_standard_embed: forward and map agreement") {
  std::mt19937_64 rng(66);
  auto cfg = AttentionConfig::make(AttentionVariant::pseudo, 8, 2);

  SUBCASE("random params, 64-bit, diff <= 1e-10") {
    auto p = AttentionParams<double>::init(cfg, rng);
    p.b1 = uniform_tensor<double>({8}, -0.4, 0.4, rng);
    p.b2 = uniform_tensor<double>({8}, -0.4, 0.4, rng);
    auto x = uniform_tensor<double>({2, 5, 8}, -1.0, 1.0, rng);
    auto s = pseudo_to_standard_embed(p);
    AttentionTrace<double> tp, ts;
    auto yp = pseudo_mhsa_forward(p, x, &tp);
    auto ys = standard_mhsa_forward(s, x, &ts);
    CHECK(max_abs_diff(yp, ys) <= 1e-10);
    CHECK(max_abs_diff(tp.maps, ts.maps) <= 1e-10);   // map-level agreement
    CHECK(max_abs_diff(tp.scores, ts.scores) <= 1e-10);
  }

  SUBCASE("random params, 32-bit, diff <= 1e-5") {
    auto cfg32 = AttentionConfig::make(AttentionVariant::pseudo, 8, 2);
    auto p = AttentionParams<float>::init(cfg32, rng);
    auto x = uniform_tensor<float>({2, 5, 8}, -1.0f, 1.0f, rng);
    auto s = pseudo_to_standard_embed(p);
    CHECK(max_abs_diff(pseudo_mhsa_forward(p, x),
                       standard_mhsa_forward(s, x)) <= 1e-5);
  }

  SUBCASE("A = 0 gives uniform maps on both sides") {
    auto p = AttentionParams<double>::init(cfg, rng);
    p.a = Tensor<double>::zeros({2, 4, 4});
    auto x = uniform_tensor<double>({1, 4, 8}, -1.0, 1.0, rng);
    auto s = pseudo_to_standard_embed(p);
    AttentionTrace<double> tp, ts;
    pseudo_mhsa_forward(p, x, &tp);
    standard_mhsa_forward(s, x, &ts);
    for (double v : tp.maps.values()) CHECK(v == doctest::Approx(0.25));
    CHECK(max_abs_diff(tp.maps, ts.maps) <= 1e-12);
  }
}

TEST_CASE("semi: identity value projections reduce to pseudo with P = W^O") {
  std::mt19937_64 rng(67);
  auto cfg = AttentionConfig::make(AttentionVariant::semi, 8, 2);
  auto p = AttentionParams<double>::init(cfg, rng);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t a = 0; a < 4; ++a) {
      for (std::size_t b = 0; b < 4; ++b) {
        p.wv_tilde.set({i, a, b}, a == b ? 1.0 : 0.0);
      }
    }
  }
  auto x = uniform_tensor<double>({1, 4, 8}, -1.0, 1.0, rng);
  auto y_semi = semi_fusion_forward(p, x);

  AttentionParams<double> q;
  q.config = AttentionConfig::make(AttentionVariant::pseudo, 8, 2);
  q.u = p.u;
  q.b1 = p.b1;
  q.a = p.a;
  q.p = p.wo;
  q.b2 = p.b2;
  auto y_pseudo = pseudo_mhsa_forward(q, x);
  CHECK(max_abs_diff(y_semi, y_pseudo) < 1e-12);
}

TEST_CASE("semi: random instance equals composition oracle") {
  std::mt19937_64 rng(68);
  auto cfg = AttentionConfig::make(AttentionVariant::semi, 6, 3);
  auto p = AttentionParams<double>::init(cfg, rng);
  auto x = uniform_tensor<double>({2, 3, 6}, -1.0, 1.0, rng);
  AttentionTrace<double> trace;
  auto y = semi_fusion_forward(p, x, &trace);

  // recompute from the traced maps with plain loops
  const std::size_t B = 2, S = 3, D = 6, n = 3, dh = 2;
  auto xt = add_broadcast(contract(x, p.u, "bsd,de->bse"), p.b1);
  Tensor<double> out = Tensor<double>::zeros({B, S, D});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t s = 0; s < S; ++s) {
        std::vector<double> ctx(dh, 0.0);
        for (std::size_t r = 0; r < S; ++r) {
          for (std::size_t c = 0; c < dh; ++c) {
            ctx[c] += trace.maps.at({b, i, s, r}) * xt.at({b, r, i * dh + c});
          }
        }
        for (std::size_t c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (std::size_t a = 0; a < dh; ++a) {
            acc += ctx[a] * p.wv_tilde.at({i, a, c});
          }
          out.set({b, s, i * dh + c}, acc);
        }
      }
    }
  }
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t e = 0; e < D; ++e) {
        double acc = p.b2.at({e});
        for (std::size_t d = 0; d < D; ++d) {
          acc += out.at({b, s, d}) * p.wo.at({d, e});
        }
        CHECK(y.at({b, s, e}) == doctest::Approx(acc).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("semi: parameter count exceeds pseudo by exactly D^2/n") {
  const auto pseudo = AttentionConfig::make(AttentionVariant::pseudo, 256, 8);
  const auto semi = AttentionConfig::make(AttentionVariant::semi, 256, 8);
  CHECK(count_params(semi) - count_params(pseudo) == 256 * 256 / 8);
  CHECK(count_params(semi) - count_params(pseudo) == 8192);
}

TEST_CASE("gaussian: identical tokens give a uniform map") {
  std::mt19937_64 rng(69);
  auto cfg = AttentionConfig::make(AttentionVariant::gaussian, 4, 2);
  auto p = AttentionParams<double>::init(cfg, rng);
  std::vector<double> row = {0.3, -0.7, 1.1, 0.2};
  std::vector<double> data;
  for (int s = 0; s < 3; ++s) data.insert(data.end(), row.begin(), row.end());
  Tensor<double> x({1, 3, 4}, data);
  AttentionTrace<double> trace;
  gaussian_mhsa_forward(p, x, 1.0, &trace);
  for (double v : trace.maps.values()) {
    CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-9));
  }
}

TEST_CASE("gaussian: sigma to infinity flattens scores to D_head^2") {
  std::mt19937_64 rng(70);
  auto cfg = AttentionConfig::make(AttentionVariant::gaussian, 4, 2);
  auto p = AttentionParams<double>::init(cfg, rng);
  auto x = uniform_tensor<double>({1, 3, 4}, -1.0, 1.0, rng);
  AttentionTrace<double> trace;
  gaussian_mhsa_forward(p, x, 1e8, &trace);
  const double dh = 2.0;
  for (double v : trace.scores.values()) {
    CHECK(v == doctest::Approx(dh * dh / dh).epsilon(1e-9));  // scaled 1/dh
  }
  for (double v : trace.maps.values()) {
    CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-9));
  }
}

TEST_CASE("gaussian: random B=1,S=3,D=4,n=2 matches the quadruple loop") {
  std::mt19937_64 rng(71);
  auto cfg = AttentionConfig::make(AttentionVariant::gaussian, 4, 2);
  auto p = AttentionParams<double>::init(cfg, rng);
  p.b1 = uniform_tensor<double>({4}, -0.2, 0.2, rng);
  auto x = uniform_tensor<double>({1, 3, 4}, -1.0, 1.0, rng);
  const double sigma = 1.0;
  AttentionTrace<double> trace;
  gaussian_mhsa_forward(p, x, sigma, &trace);

  auto xt = add_broadcast(contract(x, p.u, "bsd,de->bse"), p.b1);
  const std::size_t n = 2, dh = 2;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t r = 0; r < 3; ++r) {
        double acc = 0.0;
        for (std::size_t d1 = 0; d1 < dh; ++d1) {
          for (std::size_t d2 = 0; d2 < dh; ++d2) {
            const double diff =
                xt.at({0, s, i * dh + d1}) - xt.at({0, r, i * dh + d2});
            acc += std::exp(-diff * diff / (2 * sigma * sigma));
          }
        }
        CHECK(trace.scores.at({0, i, s, r}) ==
              doctest::Approx(acc / dh).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("gaussian: pre-softmax scores are symmetric") {
  std::mt19937_64 rng(72);
  auto cfg = AttentionConfig::make(AttentionVariant::gaussian, 8, 2);
  auto p = AttentionParams<double>::init(cfg, rng);
  auto x = uniform_tensor<double>({2, 5, 8}, -1.0, 1.0, rng);
  AttentionTrace<double> trace;
  gaussian_mhsa_forward(p, x, 0.9, &trace);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t s = 0; s < 5; ++s) {
        for (std::size_t r = 0; r < 5; ++r) {
          CHECK(trace.scores.at({b, h, s, r}) ==
                doctest::Approx(trace.scores.at({b, h, r, s}))
                    .epsilon(1e-6));
        }
      }
    }
  }
}

TEST_CASE("linear_sim: zero W_inner gives uniform maps") {
  std::mt19937_64 rng(73);
  auto cfg = AttentionConfig::make(AttentionVariant::linear_sim, 4, 2, 3);
  auto p = AttentionParams<double>::init(cfg, rng);
  p.w_inner = Tensor<double>::zeros(p.w_inner.shape());
  auto x = uniform_tensor<double>({1, 3, 4}, -1.0, 1.0, rng);
  AttentionTrace<double> trace;
  linear_sim_forward(p, x, &trace);
  for (double v : trace.maps.values()) {
    CHECK(v == doctest::Approx(1.0 / 3));
  }
}

TEST_CASE("linear_sim: delta_{hr} identity blocks reduce to pseudo with A=I") {
  std::mt19937_64 rng(74);
  const std::size_t S = 3, D = 4, n = 2, dh = 2;
  auto cfg = AttentionConfig::make(AttentionVariant::linear_sim, D, n, S);
  auto p = AttentionParams<double>::init(cfg, rng);
  p.w_inner = Tensor<double>::zeros({n, S, S, dh, dh});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t h = 0; h < S; ++h) {
      for (std::size_t d = 0; d < dh; ++d) {
        p.w_inner.set({i, h, h, d, d}, 1.0);
      }
    }
  }
  auto x = uniform_tensor<double>({1, S, D}, -1.0, 1.0, rng);
  auto y_lin = linear_sim_forward(p, x);

  AttentionParams<double> q;
  q.config = AttentionConfig::make(AttentionVariant::pseudo, D, n);
  q.u = p.u;
  q.b1 = p.b1;
  q.a = Tensor<double>::zeros({n, dh, dh});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dh; ++d) q.a.set({i, d, d}, 1.0);
  }
  q.p = p.p;
  q.b2 = p.b2;
  auto y_pseudo = pseudo_mhsa_forward(q, x);
  CHECK(max_abs_diff(y_lin, y_pseudo) < 1e-12);
}

TEST_CASE("linear_sim: random small instance equals the loop oracle") {
  std::mt19937_64 rng(75);
  const std::size_t S = 2, D = 4, n = 2, dh = 2;
  auto cfg = AttentionConfig::make(AttentionVariant::linear_sim, D, n, S);
  auto p = AttentionParams<double>::init(cfg, rng);
  auto x = uniform_tensor<double>({1, S, D}, -1.0, 1.0, rng);
  AttentionTrace<double> trace;
  linear_sim_forward(p, x, &trace);
  auto xt = add_broadcast(contract(x, p.u, "bsd,de->bse"), p.b1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t h = 0; h < S; ++h) {
        double acc = 0.0;
        for (std::size_t r = 0; r < S; ++r) {
          for (std::size_t d1 = 0; d1 < dh; ++d1) {
            for (std::size_t d2 = 0; d2 < dh; ++d2) {
              acc += xt.at({0, s, i * dh + d1}) * xt.at({0, r, i * dh + d2}) *
                     p.w_inner.at({i, h, r, d1, d2});
            }
          }
        }
        CHECK(trace.scores.at({0, i, s, h}) ==
              doctest::Approx(acc / dh).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("linear_sim: sequence length mismatch is a hard error") {
  std::mt19937_64 rng(76);
  auto cfg = AttentionConfig::make(AttentionVariant::linear_sim, 4, 2, 3);
  auto p = AttentionParams<double>::init(cfg, rng);
  auto x = uniform_tensor<double>({1, 5, 4}, -1.0, 1.0, rng);
  CHECK_THROWS_AS(linear_sim_forward(p, x), Error);
}

TEST_CASE("attention maps are row-stochastic for every variant") {
  std::mt19937_64 rng(77);
  auto x8 = uniform_tensor<double>({2, 4, 8}, -1.0, 1.0, rng);
  const AttentionVariant variants[] = {
      AttentionVariant::standard, AttentionVariant::pseudo,
      AttentionVariant::semi, AttentionVariant::gaussian,
      AttentionVariant::linear_sim};
  for (auto v : variants) {
    auto cfg = AttentionConfig::make(v, 8, 2, 4);
    auto p = AttentionParams<double>::init(cfg, rng);
    AttentionTrace<double> trace;
    attention_forward(p, x8, &trace);
    const auto& m = trace.maps;
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t h = 0; h < 2; ++h) {
        for (std::size_t s = 0; s < 4; ++s) {
          double sum = 0.0;
          for (std::size_t r = 0; r < 4; ++r) sum += m.at({b, h, s, r});
          CHECK_MESSAGE(std::abs(sum - 1.0) < 1e-6, variant_name(v));
        }
      }
    }
  }
}

TEST_CASE("low_rank_factorize: symmetric PSD of rank <= D_head is exact") {
  std::mt19937_64 rng(78);
  const std::size_t D = 6, dh = 2;
  // W_attn = Q diag(l) Q^T with Q orthonormal D x dh, realized via Wq, Wk
  auto g = uniform_tensor<double>({D, dh}, -1.0, 1.0, rng);
  // Gram-Schmidt
  for (std::size_t c = 0; c < dh; ++c) {
    for (std::size_t prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (std::size_t r = 0; r < D; ++r) dot += g.at({r, c}) * g.at({r, prev});
      for (std::size_t r = 0; r < D; ++r) {
        g.set({r, c}, g.at({r, c}) - dot * g.at({r, prev}));
      }
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < D; ++r) norm += g.at({r, c}) * g.at({r, c});
    norm = std::sqrt(norm);
    for (std::size_t r = 0; r < D; ++r) g.set({r, c}, g.at({r, c}) / norm);
  }
  Tensor<double> wq = Tensor<double>::zeros({D, dh});
  const double eig[2] = {3.0, 1.5};
  for (std::size_t r = 0; r < D; ++r) {
    for (std::size_t c = 0; c < dh; ++c) {
      wq.set({r, c}, g.at({r, c}) * eig[c]);
    }
  }
  auto f = low_rank_factorize(wq, g);  // W = wq g^T = Q diag(eig) Q^T
  CHECK(f.residual <= 1e-6);
  auto utu = contract(f.u, f.u, "dr,dc->rc");
  CHECK(max_abs_diff(utu, Tensor<double>::eye(dh)) < 1e-6);
}

TEST_CASE("low_rank_factorize: zero weights") {
  auto zero = Tensor<double>::zeros({5, 2});
  auto f = low_rank_factorize(zero, zero);
  CHECK(f.residual == 0.0);
  CHECK(max_abs_diff(f.a, Tensor<double>::zeros({2, 2})) == 0.0);
  auto utu = contract(f.u, f.u, "dr,dc->rc");
  CHECK(max_abs_diff(utu, Tensor<double>::eye(2)) < 1e-12);
}

TEST_CASE("low_rank_factorize: beats 1000 random symmetric-form baselines") {
  std::mt19937_64 rng(79);
  const std::size_t D = 8, dh = 2;
  auto wq = uniform_tensor<double>({D, dh}, -1.0, 1.0, rng);
  auto wk = uniform_tensor<double>({D, dh}, -1.0, 1.0, rng);
  auto f = low_rank_factorize(wq, wk);
  CHECK(f.residual > 0.0);

  // brute-force search over random orthonormal U
  std::vector<double> w(D * D, 0.0);
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = 0; j < D; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < dh; ++r) {
        acc += wq.at({i, r}) * wk.at({j, r});
      }
      w[i * D + j] = acc;
    }
  }
  double wnorm = 0.0;
  for (double v : w) wnorm += v * v;
  double best_baseline = 1e300;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    // random orthonormal D x dh via Gram-Schmidt
    std::vector<std::vector<double>> u(dh, std::vector<double>(D));
    for (auto& col : u) {
      for (auto& v : col) v = normal(rng);
    }
    for (std::size_t c = 0; c < dh; ++c) {
      for (std::size_t prev = 0; prev < c; ++prev) {
        double dot = 0.0;
        for (std::size_t r = 0; r < D; ++r) dot += u[c][r] * u[prev][r];
        for (std::size_t r = 0; r < D; ++r) u[c][r] -= dot * u[prev][r];
      }
      double norm = 0.0;
      for (double v : u[c]) norm += v * v;
      norm = std::sqrt(norm);
      for (double& v : u[c]) v /= norm;
    }
    // residual with A = U^T W U
    std::vector<double> a(dh * dh, 0.0);
    for (std::size_t p = 0; p < dh; ++p) {
      for (std::size_t q = 0; q < dh; ++q) {
        double acc = 0.0;
        for (std::size_t i = 0; i < D; ++i) {
          for (std::size_t j = 0; j < D; ++j) {
            acc += u[p][i] * w[i * D + j] * u[q][j];
          }
        }
        a[p * dh + q] = acc;
      }
    }
    double num = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
      for (std::size_t j = 0; j < D; ++j) {
        double rec = 0.0;
        for (std::size_t p = 0; p < dh; ++p) {
          for (std::size_t q = 0; q < dh; ++q) {
            rec += u[p][i] * a[p * dh + q] * u[q][j];
          }
        }
        const double diff = w[i * D + j] - rec;
        num += diff * diff;
      }
    }
    best_baseline = std::min(best_baseline, std::sqrt(num / wnorm));
  }
  CHECK(f.residual <= best_baseline + 1e-12);
}

TEST_CASE("count_params: reference values and the near-half claim") {
  const auto std256 = AttentionConfig::make(AttentionVariant::standard, 256, 8);
  const auto pse256 = AttentionConfig::make(AttentionVariant::pseudo, 256, 8);
  CHECK(count_params(std256) == 4 * 256 * 256 + 4 * 256);
  CHECK(count_params(std256) == 263168);
  CHECK(count_params(pse256) == 2 * 256 * 256 + 8 * 32 * 32 + 2 * 256);
  CHECK(count_params(pse256) == 139776);
  const double ratio = static_cast<double>(count_params(pse256)) /
                       static_cast<double>(count_params(std256));
  CHECK(ratio == doctest::Approx(0.531).epsilon(0.002));
  // init() allocates exactly count_params scalars
  std::mt19937_64 rng(80);
  for (auto v : {AttentionVariant::standard, AttentionVariant::pseudo,
                 AttentionVariant::semi, AttentionVariant::gaussian,
                 AttentionVariant::linear_sim}) {
    auto cfg = AttentionConfig::make(v, 8, 2, 3);
    auto p = AttentionParams<double>::init(cfg, rng);
    CHECK_MESSAGE(p.count() == count_params(cfg), variant_name(v));
  }
}

TEST_CASE("variance_probe: zero weight variance gives zero on both sides") {
  auto r = variance_probe(KernelSpec::linear(), 4, 0.0, 10000, 5);
  CHECK(r.empirical_var == 0.0);
  CHECK(r.predicted_var == 0.0);
  CHECK(r.ratio == 1.0);
}

TEST_CASE("variance_probe: linear kernel ratio within [0.8, 1.25]") {
  auto r = variance_probe(KernelSpec::linear(), 8, 0.1, 100000, 6);
  CHECK(r.ratio >= 0.8);
  CHECK(r.ratio <= 1.25);
}

TEST_CASE("variance_probe: gaussian kernel ratio within [0.7, 1.4]") {
  auto r = variance_probe(KernelSpec::gaussian(1.0), 4, 0.1, 100000, 7);
  CHECK(r.ratio >= 0.7);
  CHECK(r.ratio <= 1.4);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(AttentionConfig::make(AttentionVariant::standard, 10, 3),
                  Error);  // not divisible
  CHECK_THROWS_AS(AttentionConfig::make(AttentionVariant::linear_sim, 8, 2),
                  Error);  // missing seq_len
  CHECK(AttentionConfig::make(AttentionVariant::standard, 8, 2).scaling ==
        ScoreScaling::inv_sqrt_dhead);
  CHECK(AttentionConfig::make(AttentionVariant::pseudo, 8, 2).scaling ==
        ScoreScaling::inv_dhead);
}

TEST_CASE("linear_sim scores agree with the kernel-tensor inner_apply route") {
  std::mt19937_64 rng(120);
  const std::size_t S = 3, D = 4, n = 2, dh = 2;
  auto cfg = AttentionConfig::make(AttentionVariant::linear_sim, D, n, S);
  auto p = AttentionParams<double>::init(cfg, rng);
  auto x = uniform_tensor<double>({1, S, D}, -1.0, 1.0, rng);
  AttentionTrace<double> trace;
  linear_sim_forward(p, x, &trace);

  auto xt = add_broadcast(contract(x, p.u, "bsd,de->bse"), p.b1);
  for (std::size_t i = 0; i < n; ++i) {
    SuperpositionLayer<double> layer;  // self-referenced linear kernel
    layer.w_inner = slice_axis(p.w_inner, 0, i, 1).with_shape({S, S, dh, dh});
    auto xi = slice_axis(xt, 2, i * dh, dh);
    auto psi = inner_apply(layer, xi);  // (1, S, H=S)
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t h = 0; h < S; ++h) {
        CHECK(trace.scores.at({0, i, s, h}) ==
              doctest::Approx(psi.at({0, s, h}) / dh).epsilon(1e-10));
      }
    }
  }
}
