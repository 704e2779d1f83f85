#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "oracles.hpp"
#include "skf/ops.hpp"

using namespace skf;

TEST_CASE("contract: identity matmul") {
  auto eye = Tensor<double>::eye(2);
  Tensor<double> b({2, 2}, {1, 2, 3, 4});
  auto out = contract(eye, b, "ij,jk->ik");
  CHECK(max_abs_diff(out, b) == 0.0);
}

TEST_CASE("contract: dot product") {
  Tensor<double> a({3}, {1, 2, 3});
  auto out = contract(a, a, "i,i->");
  CHECK(out.item() == doctest::Approx(14.0));
  CHECK(out.rank() == 0);
}

TEST_CASE("contract: batched matmul equals loop oracle") {
  std::mt19937_64 rng(11);
  auto a = uniform_tensor<double>({2, 3, 4}, -1.0, 1.0, rng);
  auto b = uniform_tensor<double>({2, 4, 5}, -1.0, 1.0, rng);
  auto out = contract(a, b, "bij,bjk->bik");
  auto ref = oracle::einsum_loops(a, b, "bij,bjk->bik");
  CHECK(max_abs_diff(out, ref) < 1e-12);
}

TEST_CASE("contract: loop nest and fast path agree on assorted specs") {
  std::mt19937_64 rng(12);
  struct Case {
    Shape a, b;
    const char* spec;
  };
  const Case cases[] = {
      {{3, 4}, {4, 5}, "ij,jk->ik"},
      {{2, 3, 4}, {2, 4, 5}, "bij,bjk->bik"},
      {{2, 4, 3, 5}, {2, 6, 3, 5}, "bsnd,brnd->bnsr"},
      {{2, 3, 4, 6}, {2, 6, 3, 5}, "bnsr,brnd->bsnd"},
      {{4, 3}, {5, 2}, "ab,cd->acbd"},   // outer product
      {{4, 6}, {6}, "ab,b->a"},
      {{3, 5}, {4, 2}, "ab,cd->ac"},     // orphan indices on both sides
  };
  for (const auto& c : cases) {
    auto a = uniform_tensor<double>(c.a, -1.0, 1.0, rng);
    auto b = uniform_tensor<double>(c.b, -1.0, 1.0, rng);
    auto slow = contract(a, b, c.spec, ContractPath::loopnest);
    auto fast = contract(a, b, c.spec, ContractPath::fastpath);
    auto ref = oracle::einsum_loops(a, b, c.spec);
    CHECK_MESSAGE(max_abs_diff(slow, ref) < 1e-12, c.spec);
    CHECK_MESSAGE(max_abs_diff(fast, ref) < 1e-12, c.spec);
  }
}

TEST_CASE("contract: error cases") {
  Tensor<double> a({2, 3}, std::vector<double>(6, 1.0));
  Tensor<double> b({4, 2}, std::vector<double>(8, 1.0));
  CHECK_THROWS_AS(contract(a, b, "ij,jk->ik"), Error);     // extent mismatch
  CHECK_THROWS_AS(contract(a, b, "ij,kl"), Error);         // missing ->
  CHECK_THROWS_AS(contract(a, b, "ij,kl->im"), Error);     // m absent
  CHECK_THROWS_AS(contract(a, b, "ii,kl->i"), Error);      // repeated in one operand
  CHECK_THROWS_AS(contract(a, b, "i,kl->i", ContractPath::loopnest), Error);
}

TEST_CASE("contract: bilinear in the first operand") {
  std::mt19937_64 rng(13);
  auto a = uniform_tensor<double>({3, 4}, -1.0, 1.0, rng);
  auto b = uniform_tensor<double>({4, 2}, -1.0, 1.0, rng);
  const double alpha = 2.75;
  auto lhs = contract(scale(a, alpha), b, "ij,jk->ik");
  auto rhs = scale(contract(a, b, "ij,jk->ik"), alpha);
  CHECK(max_abs_diff(lhs, rhs) < 1e-6 * alpha);
}

TEST_CASE("softmax: uniform on constant input") {
  Tensor<double> x({3}, {0, 0, 0});
  auto out = softmax(x, 0);
  for (double v : out.values()) CHECK(v == doctest::Approx(1.0 / 3));
}

TEST_CASE("softmax: shift invariance") {
  std::mt19937_64 rng(14);
  auto x = uniform_tensor<double>({4, 6}, -2.0, 2.0, rng);
  auto shifted = scale(add(x, Tensor<double>::full({4, 6}, 3.17)), 1.0);
  auto a = softmax(x, 1);
  auto b = softmax(shifted, 1);
  CHECK(max_abs_diff(a, b) < 1e-6);
}

TEST_CASE("softmax: matches 64-bit exp/sum oracle") {
  Tensor<double> x({3}, {1, 2, 3});
  auto out = softmax(x, 0);
  const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(out.at({0}) == doctest::Approx(std::exp(1.0) / denom).epsilon(1e-12));
  CHECK(out.at({1}) == doctest::Approx(std::exp(2.0) / denom).epsilon(1e-12));
  CHECK(out.at({2}) == doctest::Approx(std::exp(3.0) / denom).epsilon(1e-12));
}

TEST_CASE("softmax: rows are probability vectors") {
  std::mt19937_64 rng(15);
  auto x = uniform_tensor<double>({5, 7}, -4.0, 4.0, rng);
  auto out = softmax(x, 1);
  for (std::size_t r = 0; r < 5; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      const double v = out.at({r, c});
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("softmax: fully masked row becomes uniform and is counted") {
  reset_softmax_uniform_row_count();
  const double inf = std::numeric_limits<double>::infinity();
  Tensor<double> x({2, 3}, {-inf, -inf, -inf, 0.0, 1.0, 2.0});
  auto out = softmax(x, 1);
  CHECK(out.at({0, 0}) == doctest::Approx(1.0 / 3));
  CHECK(out.at({0, 2}) == doctest::Approx(1.0 / 3));
  CHECK(softmax_uniform_row_count() == 1);
  double sum = out.at({1, 0}) + out.at({1, 1}) + out.at({1, 2});
  CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("softmax: empty axis is an error") {
  auto x = Tensor<double>::zeros({2, 0});
  CHECK_THROWS_AS(softmax(x, 1), Error);
}

TEST_CASE("layer_norm: constant row maps to beta") {
  auto x = Tensor<double>::full({2, 4}, 5.0);
  auto gamma = Tensor<double>::full({4}, 1.0);
  auto beta = Tensor<double>::zeros({4});
  auto out = layer_norm(x, gamma, beta, 1e-5);
  for (double v : out.values()) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("layer_norm: two-point standardization") {
  Tensor<double> x({1, 2}, {1, 3});
  auto out = layer_norm(x, Tensor<double>::full({2}, 1.0),
                        Tensor<double>::zeros({2}), 1e-12);
  CHECK(out.at({0, 0}) == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(out.at({0, 1}) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("layer_norm: random input matches per-row scalar oracle") {
  std::mt19937_64 rng(16);
  auto x = uniform_tensor<double>({4, 8}, -3.0, 3.0, rng);
  auto gamma = uniform_tensor<double>({8}, 0.5, 1.5, rng);
  auto beta = uniform_tensor<double>({8}, -0.3, 0.3, rng);
  const double eps = 1e-5;
  auto out = layer_norm(x, gamma, beta, eps);
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < 8; ++c) mean += x.at({r, c});
    mean /= 8;
    double var = 0.0;
    for (std::size_t c = 0; c < 8; ++c) {
      var += (x.at({r, c}) - mean) * (x.at({r, c}) - mean);
    }
    var /= 8;
    for (std::size_t c = 0; c < 8; ++c) {
      const double expect =
          (x.at({r, c}) - mean) / std::sqrt(var + eps) * gamma.at({c}) +
          beta.at({c});
      CHECK(out.at({r, c}) == doctest::Approx(expect).epsilon(1e-10));
    }
  }
  // normalized rows: mean ~0, variance ~1 with unit gamma
  auto plain = layer_norm(x, Tensor<double>::full({8}, 1.0),
                          Tensor<double>::zeros({8}), eps);
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 8; ++c) mean += plain.at({r, c});
    mean /= 8;
    for (std::size_t c = 0; c < 8; ++c) {
      var += (plain.at({r, c}) - mean) * (plain.at({r, c}) - mean);
    }
    var /= 8;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("layer_norm: non-positive eps rejected") {
  auto x = Tensor<double>::zeros({1, 2});
  auto g = Tensor<double>::full({2}, 1.0);
  auto b = Tensor<double>::zeros({2});
  CHECK_THROWS_AS(layer_norm(x, g, b, 0.0), Error);
}

TEST_CASE("conv2d_strided: 2x2 ones filter with stride 2 sums blocks") {
  std::vector<double> img(16);
  for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<double>(i);
  Tensor<double> input({1, 1, 4, 4}, img);
  auto filt = Tensor<double>::full({1, 1, 2, 2}, 1.0);
  auto out = conv2d_strided(input, filt, 2, 2);
  CHECK(out.shape() == Shape{1, 1, 2, 2});
  CHECK(out.at({0, 0, 0, 0}) == doctest::Approx(0 + 1 + 4 + 5));
  CHECK(out.at({0, 0, 0, 1}) == doctest::Approx(2 + 3 + 6 + 7));
  CHECK(out.at({0, 0, 1, 0}) == doctest::Approx(8 + 9 + 12 + 13));
  CHECK(out.at({0, 0, 1, 1}) == doctest::Approx(10 + 11 + 14 + 15));
}

TEST_CASE("conv2d_strided: single identity tap crops the valid region") {
  std::mt19937_64 rng(17);
  auto input = uniform_tensor<double>({1, 1, 5, 5}, -1.0, 1.0, rng);
  Tensor<double> filt({1, 1, 2, 2}, {1, 0, 0, 0});
  auto out = conv2d_strided(input, filt, 1, 1);
  CHECK(out.shape() == Shape{1, 1, 4, 4});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(out.at({0, 0, i, j}) == input.at({0, 0, i, j}));
    }
  }
}

TEST_CASE("conv2d_strided: random case matches quadruple-loop oracle") {
  std::mt19937_64 rng(18);
  auto input = uniform_tensor<double>({1, 1, 6, 6}, -1.0, 1.0, rng);
  auto filt = uniform_tensor<double>({2, 1, 2, 2}, -1.0, 1.0, rng);
  auto out = conv2d_strided(input, filt, 2, 2);
  for (std::size_t co = 0; co < 2; ++co) {
    for (std::size_t oh = 0; oh < 3; ++oh) {
      for (std::size_t ow = 0; ow < 3; ++ow) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 2; ++i) {
          for (std::size_t j = 0; j < 2; ++j) {
            acc += input.at({0, 0, oh * 2 + i, ow * 2 + j}) *
                   filt.at({co, 0, i, j});
          }
        }
        CHECK(out.at({0, co, oh, ow}) == doctest::Approx(acc).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("conv2d_strided: error cases") {
  auto input = Tensor<double>::zeros({1, 1, 5, 5});
  auto filt = Tensor<double>::zeros({1, 1, 2, 2});
  CHECK_THROWS_AS(conv2d_strided(input, filt, 2, 2), Error);  // non-tiling
  auto big = Tensor<double>::zeros({1, 1, 6, 6});
  CHECK_THROWS_AS(conv2d_strided(big, Tensor<double>::zeros({1, 1, 7, 2}),
                                 1, 1),
                  Error);  // filter larger than input
}

TEST_CASE("reshape and permute round trip") {
  std::mt19937_64 rng(19);
  auto x = uniform_tensor<double>({2, 3, 4}, -1.0, 1.0, rng);
  auto r = reshape(x, {6, 4});
  CHECK(r.shape() == Shape{6, 4});
  CHECK(r.at({0, 0}) == x.at({0, 0, 0}));
  auto p = permute(x, {2, 0, 1});
  CHECK(p.shape() == Shape{4, 2, 3});
  CHECK(p.at({3, 1, 2}) == x.at({1, 2, 3}));
  auto back = permute(p, {1, 2, 0});
  CHECK(max_abs_diff(back, x) == 0.0);
}

TEST_CASE("finite checks flag NaN") {
  Tensor<double> x({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_FALSE(all_finite(x));
  CHECK_THROWS_AS(require_finite(x, "test"), Error);
}

TEST_CASE("tensor invariants: shape product equals data length") {
  CHECK_THROWS_AS(Tensor<double>({2, 3}, std::vector<double>(5, 0.0)), Error);
  auto t = Tensor<float>::zeros({3, 5});
  CHECK(t.size() == 15);
  CHECK(numel(t.shape()) == t.size());
}
