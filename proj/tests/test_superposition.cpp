#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "oracles.hpp"
#include "skf/superposition.hpp"

using namespace skf;

namespace {

// delta_{hr} W layout used by the attention identifications
template <class T>
Tensor<T> diagonal_inner_weights(std::size_t s, const Tensor<T>& w) {
  const std::size_t d = w.extent(0);
  Tensor<T> out = Tensor<T>::zeros({s, s, d, d});
  T* o = out.mutable_data();
  const T* pw = w.data();
  for (std::size_t h = 0; h < s; ++h) {
    std::copy(pw, pw + d * d, o + (h * s + h) * d * d);
  }
  return out;
}

}  // namespace

TEST_CASE("inner_apply: delta_{hr} W_attn reproduces pre-softmax scores") {
  std::mt19937_64 rng(41);
  const std::size_t S = 4, D = 5;
  auto x = uniform_tensor<double>({1, S, D}, -1.0, 1.0, rng);
  auto w = uniform_tensor<double>({D, D}, -1.0, 1.0, rng);
  SuperpositionLayer<double> layer;
  layer.w_inner = diagonal_inner_weights(S, w);
  auto psi = inner_apply(layer, x);  // self-reference
  auto scores = contract(contract(x, w, "bsd,de->bse"), x, "bse,bre->bsr");
  CHECK(max_abs_diff(psi, scores) < 1e-12);
}

TEST_CASE("inner_apply: zero weights give zero") {
  std::mt19937_64 rng(42);
  auto x = uniform_tensor<double>({2, 3, 4}, -1.0, 1.0, rng);
  SuperpositionLayer<double> layer;
  layer.w_inner = Tensor<double>::zeros({5, 3, 4, 4});
  auto psi = inner_apply(layer, x);
  CHECK(max_abs_diff(psi, Tensor<double>::zeros({2, 3, 5})) == 0.0);
}

TEST_CASE("inner_apply: random instance equals the 5-deep loop oracle") {
  std::mt19937_64 rng(43);
  const std::size_t B = 1, S = 2, D = 2, R = 2, H = 3;
  auto x = uniform_tensor<double>({B, S, D}, -1.0, 1.0, rng);
  auto ref = uniform_tensor<double>({B, R, D}, -1.0, 1.0, rng);
  auto w = uniform_tensor<double>({H, R, D, D}, -1.0, 1.0, rng);
  SuperpositionLayer<double> layer;
  layer.w_inner = w;
  layer.ref_inner = ref;
  auto psi = inner_apply(layer, x);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t h = 0; h < H; ++h) {
        double acc = 0.0;
        for (std::size_t r = 0; r < R; ++r) {
          for (std::size_t d1 = 0; d1 < D; ++d1) {
            for (std::size_t d2 = 0; d2 < D; ++d2) {
              acc += x.at({b, s, d1}) * ref.at({b, r, d2}) *
                     w.at({h, r, d1, d2});
            }
          }
        }
        CHECK(psi.at({b, s, h}) == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("inner_apply: linear in the weight tensor") {
  std::mt19937_64 rng(44);
  auto x = uniform_tensor<double>({1, 3, 4}, -1.0, 1.0, rng);
  auto w1 = uniform_tensor<double>({2, 3, 4, 4}, -1.0, 1.0, rng);
  auto w2 = uniform_tensor<double>({2, 3, 4, 4}, -1.0, 1.0, rng);
  SuperpositionLayer<double> a, b, ab;
  a.w_inner = w1;
  b.w_inner = w2;
  ab.w_inner = add(w1, w2);
  auto sum_apply = add(inner_apply(a, x), inner_apply(b, x));
  auto apply_sum = inner_apply(ab, x);
  CHECK(max_abs_diff(sum_apply, apply_sum) < 1e-9);
}

TEST_CASE("inner_apply: streamed equals materialized") {
  std::mt19937_64 rng(45);
  auto x = uniform_tensor<double>({2, 6, 3}, -1.0, 1.0, rng);
  auto w = uniform_tensor<double>({4, 6, 3, 3}, -1.0, 1.0, rng);
  for (const auto& spec :
       {KernelSpec::linear(), KernelSpec::gaussian(0.9)}) {
    SuperpositionLayer<double> layer;
    layer.inner_spec = spec;
    layer.w_inner = w;
    auto mat = inner_apply(layer, x);
    layer.plan.materialize = false;
    layer.plan.block_rows = 2;
    layer.plan.block_refs = 2;
    auto streamed = inner_apply(layer, x);
    CHECK(max_abs_diff(mat, streamed) < 1e-12);
  }
}

TEST_CASE("inner_apply: budget refusal propagates") {
  std::mt19937_64 rng(46);
  auto x = uniform_tensor<float>({1, 8, 8}, -1.0f, 1.0f, rng);
  SuperpositionLayer<float> layer;
  layer.w_inner = Tensor<float>::zeros({2, 8, 8, 8});
  layer.plan.byte_budget = 64;  // absurdly small
  CHECK_THROWS_AS(inner_apply(layer, x), BudgetError);
  layer.plan.materialize = false;  // streamed mode never materializes
  CHECK_NOTHROW(inner_apply(layer, x));
}

TEST_CASE("outer_apply: Wv-scaled identity weights reproduce map.X.Wv") {
  // the outer identification: W'[e,r'] = Wv[r',e] I_S, Ref = X^T
  std::mt19937_64 rng(47);
  const std::size_t S = 4, D = 3, E = 2;
  auto x = uniform_tensor<double>({S, D}, -1.0, 1.0, rng);
  auto wv = uniform_tensor<double>({D, E}, -1.0, 1.0, rng);
  auto psi = uniform_tensor<double>({1, S, S}, -1.0, 1.0, rng);

  SuperpositionLayer<double> layer;
  layer.w_outer = Tensor<double>::zeros({E, D, S, S});
  {
    double* wo = layer.w_outer.mutable_data();
    for (std::size_t e = 0; e < E; ++e) {
      for (std::size_t r = 0; r < D; ++r) {
        for (std::size_t h = 0; h < S; ++h) {
          wo[((e * D + r) * S + h) * S + h] = wv.at({r, e});
        }
      }
    }
  }
  layer.ref_outer = permute(x, {1, 0}).with_shape({1, D, S});
  auto phi = outer_apply(layer, psi);
  auto expect = contract(contract(psi, x.with_shape({1, S, D}),
                                  "bsh,bhd->bsd"),
                         wv, "bsd,de->bse");
  CHECK(max_abs_diff(phi, expect) < 1e-12);
}

TEST_CASE("outer_apply: zero weights give zero") {
  std::mt19937_64 rng(48);
  auto z = uniform_tensor<double>({1, 3, 4}, -1.0, 1.0, rng);
  SuperpositionLayer<double> layer;
  layer.w_outer = Tensor<double>::zeros({2, 3, 4, 4});
  auto phi = outer_apply(layer, z);
  CHECK(max_abs_diff(phi, Tensor<double>::zeros({1, 3, 2})) == 0.0);
}

TEST_CASE("outer_apply: loop oracle on a degenerate copy layout") {
  std::mt19937_64 rng(49);
  const std::size_t B = 1, S = 2, H = 3, R = 2, E = 3;
  auto z = uniform_tensor<double>({B, S, H}, -1.0, 1.0, rng);
  auto ref = uniform_tensor<double>({B, R, H}, -1.0, 1.0, rng);
  auto w = uniform_tensor<double>({E, R, H, H}, -1.0, 1.0, rng);
  SuperpositionLayer<double> layer;
  layer.w_outer = w;
  layer.ref_outer = ref;
  auto phi = outer_apply(layer, z);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t e = 0; e < E; ++e) {
      double acc = 0.0;
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t h1 = 0; h1 < H; ++h1) {
          for (std::size_t h2 = 0; h2 < H; ++h2) {
            acc += z.at({0, s, h1}) * ref.at({0, r, h2}) *
                   w.at({e, r, h1, h2});
          }
        }
      }
      CHECK(phi.at({0, s, e}) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("frobenius_fit: diagonal W against the linear kernel") {
  // R=1, W=I, s=x: g(x) = sum_d x_d * s_d = ||x||^2
  Tensor<double> x({3}, {1.0, -2.0, 0.5});
  auto w = Tensor<double>::eye(3).with_shape({1, 3, 3});
  auto refs = x.with_shape({1, 3});
  const double g = frobenius_fit(w, refs, KernelSpec::linear(), x);
  CHECK(g == doctest::Approx(1.0 + 4.0 + 0.25));
}

TEST_CASE("frobenius_fit: zero weights give zero") {
  Tensor<double> x({3}, {1.0, 2.0, 3.0});
  auto w = Tensor<double>::zeros({2, 3, 3});
  auto refs = Tensor<double>::full({2, 3}, 0.7);
  CHECK(frobenius_fit(w, refs, KernelSpec::gaussian(1.0), x) == 0.0);
}

TEST_CASE("frobenius_fit: random instance equals the triple loop") {
  std::mt19937_64 rng(50);
  auto w = uniform_tensor<double>({3, 4, 4}, -1.0, 1.0, rng);
  auto refs = uniform_tensor<double>({3, 4}, -1.0, 1.0, rng);
  auto x = uniform_tensor<double>({4}, -1.0, 1.0, rng);
  const auto spec = KernelSpec::gaussian(0.8);
  double expect = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t d1 = 0; d1 < 4; ++d1) {
      for (std::size_t d2 = 0; d2 < 4; ++d2) {
        expect += w.at({r, d1, d2}) *
                  kernel_eval(spec, x.at({d1}), refs.at({r, d2}));
      }
    }
  }
  CHECK(frobenius_fit(w, refs, spec, x) ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("attention_as_superposition: zero projections give zero diff") {
  std::mt19937_64 rng(51);
  auto x = uniform_tensor<double>({4, 6}, -1.0, 1.0, rng);
  auto zero = Tensor<double>::zeros({6, 3});
  CHECK(attention_as_superposition(x, zero, zero, zero).max_abs_diff == 0.0);
}

TEST_CASE("attention_as_superposition: random S=4,D=6,E=3 within 1e-9") {
  std::mt19937_64 rng(52);
  auto x = uniform_tensor<double>({4, 6}, -1.0, 1.0, rng);
  auto wq = uniform_tensor<double>({6, 3}, -1.0, 1.0, rng);
  auto wk = uniform_tensor<double>({6, 3}, -1.0, 1.0, rng);
  auto wv = uniform_tensor<double>({6, 3}, -1.0, 1.0, rng);
  CHECK(attention_as_superposition(x, wq, wk, wv).max_abs_diff <= 1e-9);
}

TEST_CASE("attention_as_superposition: orthonormal one-hot rows") {
  // X with one-hot rows and identity projections: f = X X^T X Wv = X
  auto x = Tensor<double>::eye(3);
  auto eye = Tensor<double>::eye(3);
  auto rep = attention_as_superposition(x, eye, eye, eye);
  CHECK(rep.max_abs_diff <= 1e-12);
  auto direct = contract(contract(contract(contract(x, eye, "sd,de->se"), x,
                                           "se,re->sr"),
                                  x, "sr,rd->sd"),
                         eye, "sd,de->se");
  CHECK(max_abs_diff(direct, x) <= 1e-12);
}

TEST_CASE("conv_equivalence_check: zero filter") {
  std::mt19937_64 rng(53);
  auto x = uniform_tensor<double>({1, 3, 4}, -1.0, 1.0, rng);
  CHECK(conv_equivalence_check(x, Tensor<double>::zeros({4, 4})).max_abs_diff ==
        0.0);
}

TEST_CASE("conv_equivalence_check: random B=1,S=3,D=4 within 1e-9") {
  std::mt19937_64 rng(54);
  auto x = uniform_tensor<double>({1, 3, 4}, -1.0, 1.0, rng);
  auto w = uniform_tensor<double>({4, 4}, -1.0, 1.0, rng);
  CHECK(conv_equivalence_check(x, w).max_abs_diff <= 1e-9);
}

TEST_CASE("conv_equivalence_check: identity filter computes gram matrix") {
  std::mt19937_64 rng(55);
  const std::size_t B = 1, S = 3, D = 4;
  auto x = uniform_tensor<double>({B, S, D}, -1.0, 1.0, rng);
  auto eye = Tensor<double>::eye(D);
  CHECK(conv_equivalence_check(x, eye).max_abs_diff <= 1e-9);
  // and the inner path itself equals X X^T
  SuperpositionLayer<double> layer;
  layer.w_inner = Tensor<double>::zeros({S, S, D, D});
  {
    double* wi = layer.w_inner.mutable_data();
    for (std::size_t h = 0; h < S; ++h) {
      for (std::size_t d = 0; d < D; ++d) {
        wi[((h * S + h) * D + d) * D + d] = 1.0;
      }
    }
  }
  auto psi = inner_apply(layer, x);
  auto gram = contract(x, x, "bsd,brd->bsr");
  CHECK(max_abs_diff(psi, gram) < 1e-12);
}
