#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "skf/kernels.hpp"
#include "skf/ops.hpp"
#include "skf/tensor.hpp"

namespace skf {

enum class AttentionVariant { standard, pseudo, semi, gaussian, linear_sim };
enum class ScoreScaling { inv_dhead, inv_sqrt_dhead };

const char* variant_name(AttentionVariant v);
AttentionVariant variant_from_string(const std::string& s);

inline ScoreScaling default_scaling(AttentionVariant v) {
  return v == AttentionVariant::standard ? ScoreScaling::inv_sqrt_dhead
                                         : ScoreScaling::inv_dhead;
}

struct AttentionConfig {
  std::size_t d_model = 256;
  std::size_t n_heads = 8;
  AttentionVariant variant = AttentionVariant::standard;
  ScoreScaling scaling = ScoreScaling::inv_sqrt_dhead;
  double sigma = 1.0;       // gaussian kernel width
  std::size_t seq_len = 0;  // linear_sim: fixed sequence length

  static AttentionConfig make(AttentionVariant v, std::size_t d_model,
                              std::size_t n_heads, std::size_t seq_len = 0,
                              double sigma = 1.0) {
    AttentionConfig c;
    c.variant = v;
    c.d_model = d_model;
    c.n_heads = n_heads;
    c.scaling = default_scaling(v);
    c.sigma = sigma;
    c.seq_len = seq_len;
    c.validate();
    return c;
  }

  std::size_t d_head() const { return d_model / n_heads; }
  void validate() const;
};

std::size_t count_params(const AttentionConfig& config);

/// Per-variant weight bundle. Only the fields for the configured variant are
/// populated; visit() enumerates them in a stable order for optimizers and
/// checkpoints.
template <class T>
struct AttentionParams {
  AttentionConfig config;

  // standard
  Tensor<T> wq, wk, wv, wo, bq, bk, bv, bo;
  // pseudo / semi / gaussian / linear_sim
  Tensor<T> u, b1, a, p, b2;
  Tensor<T> wv_tilde;  // semi
  Tensor<T> w_inner;   // linear_sim, (n, S, S, Dh, Dh)

  static AttentionParams init(const AttentionConfig& config,
                              std::mt19937_64& rng);

  void visit(const std::function<void(const std::string&, Tensor<T>&)>& fn);
  std::size_t count() const;
};

/// Post-softmax per-head attention maps plus the scaled pre-softmax scores,
/// both shaped (B, n, S, S).
template <class T>
struct AttentionTrace {
  Tensor<T> scores;
  Tensor<T> maps;
};

template <class T>
Tensor<T> standard_mhsa_forward(const AttentionParams<T>& p,
                                const Tensor<T>& x,
                                AttentionTrace<T>* trace = nullptr);
template <class T>
Tensor<T> pseudo_mhsa_forward(const AttentionParams<T>& p, const Tensor<T>& x,
                              AttentionTrace<T>* trace = nullptr);
template <class T>
Tensor<T> semi_fusion_forward(const AttentionParams<T>& p, const Tensor<T>& x,
                              AttentionTrace<T>* trace = nullptr);
template <class T>
Tensor<T> gaussian_mhsa_forward(const AttentionParams<T>& p,
                                const Tensor<T>& x, double sigma,
                                AttentionTrace<T>* trace = nullptr);
template <class T>
Tensor<T> linear_sim_forward(const AttentionParams<T>& p, const Tensor<T>& x,
                             AttentionTrace<T>* trace = nullptr);

template <class T>
Tensor<T> attention_forward(const AttentionParams<T>& p, const Tensor<T>& x,
                            AttentionTrace<T>* trace = nullptr);

template <class T>
struct LowRankFactorization {
  Tensor<T> u;       // (D, Dh), orthonormal columns
  Tensor<T> a;       // (Dh, Dh)
  double residual;   // ||W - U A U^T||_F / ||W||_F
};

/// Symmetric rank-D_head factorization of W_attn = Wq_i Wk_i^T with
/// A = U^T W_attn U. U spans the top eigenspace of W W^T + W^T W, which
/// covers the column and the row space of W_attn together; a one-sided
/// singular basis can miss the row space entirely and then loses to random
/// subspaces on the reconstruction residual.
template <class T>
LowRankFactorization<T> low_rank_factorize(const Tensor<T>& wq_i,
                                           const Tensor<T>& wk_i);

/// Maps pseudo parameters onto standard MHSA weights such that the standard
/// forward with inv_dhead scaling reproduces the pseudo forward exactly
/// (per head: Wq_i = U_i A_i, Wk_i = Wv_i = U_i, Wo = P; the query bias
/// becomes b1_i A_i so the biased in-projections line up too).
template <class T>
AttentionParams<T> pseudo_to_standard_embed(const AttentionParams<T>& p);

struct VarianceProbeReport {
  double empirical_var = 0.0;
  double predicted_var = 0.0;
  double ratio = 1.0;
  KernelStats stats;
};

/// Monte-Carlo check of the score-variance law
/// Var(a_sr) = D_head^2 (sigma_k^2 + mu_k^2) sigma_w^2 for layer-normalized
/// token pairs and zero-mean weights of variance sigma_w^2.
VarianceProbeReport variance_probe(const KernelSpec& spec, std::size_t d_head,
                                   double sigma_w, std::size_t trials,
                                   std::uint64_t seed);

// ---------------------------------------------------------------------------
// implementation
// ---------------------------------------------------------------------------

namespace detail {

void jacobi_eigh_desc(std::vector<double>& m, std::size_t n,
                      std::vector<double>& eigvals,
                      std::vector<double>& eigvecs);

template <class T>
T score_scale(const AttentionConfig& c) {
  const double dh = static_cast<double>(c.d_head());
  return static_cast<T>(c.scaling == ScoreScaling::inv_dhead
                            ? 1.0 / dh
                            : 1.0 / std::sqrt(dh));
}

template <class T>
void fill_trace(AttentionTrace<T>* trace, const Tensor<T>& scores,
                const Tensor<T>& maps) {
  if (!trace) return;
  trace->scores = scores;
  trace->maps = maps;
}

template <class T>
void check_input(const AttentionConfig& c, const Tensor<T>& x) {
  if (x.rank() != 3 || x.extent(2) != c.d_model) {
    throw Error(std::string("attention: input (B,S,D) with D=") +
                std::to_string(c.d_model) + " required, got " +
                shape_str(x.shape()));
  }
}

}  // namespace detail

template <class T>
Tensor<T> standard_mhsa_forward(const AttentionParams<T>& p,
                                const Tensor<T>& x,
                                AttentionTrace<T>* trace) {
  const AttentionConfig& c = p.config;
  detail::check_input(c, x);
  const std::size_t B = x.extent(0), S = x.extent(1), D = c.d_model;
  const std::size_t n = c.n_heads, dh = c.d_head();
  Tensor<T> q = add_broadcast(contract(x, p.wq, "bsd,de->bse"), p.bq);
  Tensor<T> k = add_broadcast(contract(x, p.wk, "bsd,de->bse"), p.bk);
  Tensor<T> v = add_broadcast(contract(x, p.wv, "bsd,de->bse"), p.bv);
  Tensor<T> qh = reshape(q, {B, S, n, dh});
  Tensor<T> kh = reshape(k, {B, S, n, dh});
  Tensor<T> vh = reshape(v, {B, S, n, dh});
  Tensor<T> scores =
      scale(contract(qh, kh, "bsnd,brnd->bnsr"), detail::score_scale<T>(c));
  Tensor<T> maps = softmax_lastaxis(scores);
  detail::fill_trace(trace, scores, maps);
  Tensor<T> ctx = reshape(contract(maps, vh, "bnsr,brnd->bsnd"), {B, S, D});
  return add_broadcast(contract(ctx, p.wo, "bsd,de->bse"), p.bo);
}

template <class T>
Tensor<T> pseudo_mhsa_forward(const AttentionParams<T>& p, const Tensor<T>& x,
                              AttentionTrace<T>* trace) {
  const AttentionConfig& c = p.config;
  detail::check_input(c, x);
  const std::size_t B = x.extent(0), S = x.extent(1), D = c.d_model;
  const std::size_t n = c.n_heads, dh = c.d_head();
  Tensor<T> xt = add_broadcast(contract(x, p.u, "bsd,de->bse"), p.b1);
  Tensor<T> xh = reshape(xt, {B, S, n, dh});
  Tensor<T> t1 = contract(xh, p.a, "bsnd,nde->bsne");
  Tensor<T> scores =
      scale(contract(t1, xh, "bsne,brne->bnsr"), detail::score_scale<T>(c));
  Tensor<T> maps = softmax_lastaxis(scores);
  detail::fill_trace(trace, scores, maps);
  Tensor<T> ctx = reshape(contract(maps, xh, "bnsr,brnd->bsnd"), {B, S, D});
  return add_broadcast(contract(ctx, p.p, "bsd,de->bse"), p.b2);
}

template <class T>
Tensor<T> semi_fusion_forward(const AttentionParams<T>& p, const Tensor<T>& x,
                              AttentionTrace<T>* trace) {
  const AttentionConfig& c = p.config;
  detail::check_input(c, x);
  const std::size_t B = x.extent(0), S = x.extent(1), D = c.d_model;
  const std::size_t n = c.n_heads, dh = c.d_head();
  Tensor<T> xt = add_broadcast(contract(x, p.u, "bsd,de->bse"), p.b1);
  Tensor<T> xh = reshape(xt, {B, S, n, dh});
  Tensor<T> t1 = contract(xh, p.a, "bsnd,nde->bsne");
  Tensor<T> scores =
      scale(contract(t1, xh, "bsne,brne->bnsr"), detail::score_scale<T>(c));
  Tensor<T> maps = softmax_lastaxis(scores);
  detail::fill_trace(trace, scores, maps);
  Tensor<T> ctx = contract(maps, xh, "bnsr,brnd->bsnd");
  Tensor<T> valued = contract(ctx, p.wv_tilde, "bsnd,nde->bsne");
  Tensor<T> flat = reshape(valued, {B, S, D});
  return add_broadcast(contract(flat, p.wo, "bsd,de->bse"), p.b2);
}

template <class T>
Tensor<T> gaussian_mhsa_forward(const AttentionParams<T>& p,
                                const Tensor<T>& x, double sigma,
                                AttentionTrace<T>* trace) {
  const AttentionConfig& c = p.config;
  detail::check_input(c, x);
  const std::size_t B = x.extent(0), S = x.extent(1), D = c.d_model;
  const std::size_t n = c.n_heads, dh = c.d_head();
  Tensor<T> xt = add_broadcast(contract(x, p.u, "bsd,de->bse"), p.b1);
  Tensor<T> xh = reshape(xt, {B, S, n, dh});
  Tensor<T> scores = scale(gaussian_score_matrix(xh, static_cast<T>(sigma)),
                           detail::score_scale<T>(c));
  Tensor<T> maps = softmax_lastaxis(scores);
  detail::fill_trace(trace, scores, maps);
  Tensor<T> ctx = reshape(contract(maps, xh, "bnsr,brnd->bsnd"), {B, S, D});
  return add_broadcast(contract(ctx, p.p, "bsd,de->bse"), p.b2);
}

template <class T>
Tensor<T> linear_sim_forward(const AttentionParams<T>& p, const Tensor<T>& x,
                             AttentionTrace<T>* trace) {
  const AttentionConfig& c = p.config;
  detail::check_input(c, x);
  const std::size_t B = x.extent(0), S = x.extent(1), D = c.d_model;
  if (S != c.seq_len) {
    throw Error("linear_sim: sequence length " + std::to_string(S) +
                " does not match the configured length " +
                std::to_string(c.seq_len) +
                " (W_inner is position-indexed)");
  }
  const std::size_t n = c.n_heads, dh = c.d_head();
  Tensor<T> xt = add_broadcast(contract(x, p.u, "bsd,de->bse"), p.b1);
  Tensor<T> xh = reshape(xt, {B, S, n, dh});
  // Psi[b,n,s,h] = sum_{r,d1,d2} xh[b,s,n,d1] xh[b,r,n,d2] W[n,h,r,d1,d2],
  // evaluated as two contractions so the 5-axis kernel tensor never lands.
  Tensor<T> t1 = contract(xh, p.w_inner, "brne,nhrde->bnhd");
  Tensor<T> scores =
      scale(contract(xh, t1, "bsnd,bnhd->bnsh"), detail::score_scale<T>(c));
  Tensor<T> maps = softmax_lastaxis(scores);
  detail::fill_trace(trace, scores, maps);
  Tensor<T> ctx = reshape(contract(maps, xh, "bnsh,bhnd->bsnd"), {B, S, D});
  return add_broadcast(contract(ctx, p.p, "bsd,de->bse"), p.b2);
}

template <class T>
Tensor<T> attention_forward(const AttentionParams<T>& p, const Tensor<T>& x,
                            AttentionTrace<T>* trace) {
  switch (p.config.variant) {
    case AttentionVariant::standard:
      return standard_mhsa_forward(p, x, trace);
    case AttentionVariant::pseudo:
      return pseudo_mhsa_forward(p, x, trace);
    case AttentionVariant::semi:
      return semi_fusion_forward(p, x, trace);
    case AttentionVariant::gaussian:
      return gaussian_mhsa_forward(p, x, p.config.sigma, trace);
    case AttentionVariant::linear_sim:
      return linear_sim_forward(p, x, trace);
  }
  throw Error("attention_forward: invalid variant");
}

template <class T>
LowRankFactorization<T> low_rank_factorize(const Tensor<T>& wq_i,
                                           const Tensor<T>& wk_i) {
  if (wq_i.rank() != 2 || wk_i.shape() != wq_i.shape()) {
    throw Error("low_rank_factorize: Wq_i and Wk_i must both be (D, Dh)");
  }
  const std::size_t D = wq_i.extent(0), dh = wq_i.extent(1);
  if (dh > D) throw Error("low_rank_factorize: D_head must be <= D");

  std::vector<double> w(D * D, 0.0);
  {
    const T* q = wq_i.data();
    const T* k = wk_i.data();
    for (std::size_t i = 0; i < D; ++i) {
      for (std::size_t j = 0; j < D; ++j) {
        double acc = 0.0;
        for (std::size_t r = 0; r < dh; ++r) {
          acc += static_cast<double>(q[i * dh + r]) *
                 static_cast<double>(k[j * dh + r]);
        }
        w[i * D + j] = acc;
      }
    }
  }
  std::vector<double> m(D * D, 0.0);
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = 0; j < D; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < D; ++r) {
        acc += w[i * D + r] * w[j * D + r] + w[r * D + i] * w[r * D + j];
      }
      m[i * D + j] = acc;
    }
  }
  std::vector<double> eigvals, eigvecs;
  detail::jacobi_eigh_desc(m, D, eigvals, eigvecs);

  LowRankFactorization<T> f;
  f.u = Tensor<T>::zeros({D, dh});
  {
    T* pu = f.u.mutable_data();
    for (std::size_t i = 0; i < D; ++i) {
      for (std::size_t j = 0; j < dh; ++j) {
        pu[i * dh + j] = static_cast<T>(eigvecs[i * D + j]);
      }
    }
  }
  // A = U^T W U, residual in double
  std::vector<double> wu(D * dh, 0.0);
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = 0; j < dh; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < D; ++r) {
        acc += w[i * D + r] * eigvecs[r * D + j];
      }
      wu[i * dh + j] = acc;
    }
  }
  std::vector<double> a(dh * dh, 0.0);
  for (std::size_t i = 0; i < dh; ++i) {
    for (std::size_t j = 0; j < dh; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < D; ++r) {
        acc += eigvecs[r * D + i] * wu[r * dh + j];
      }
      a[i * dh + j] = acc;
    }
  }
  f.a = Tensor<T>::zeros({dh, dh});
  {
    T* pa = f.a.mutable_data();
    for (std::size_t i = 0; i < dh * dh; ++i) pa[i] = static_cast<T>(a[i]);
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = 0; j < D; ++j) {
      double rec = 0.0;
      for (std::size_t r1 = 0; r1 < dh; ++r1) {
        for (std::size_t r2 = 0; r2 < dh; ++r2) {
          rec += eigvecs[i * D + r1] * a[r1 * dh + r2] * eigvecs[j * D + r2];
        }
      }
      const double diff = w[i * D + j] - rec;
      num += diff * diff;
      den += w[i * D + j] * w[i * D + j];
    }
  }
  f.residual = den > 0.0 ? std::sqrt(num / den) : 0.0;
  return f;
}

template <class T>
AttentionParams<T> pseudo_to_standard_embed(const AttentionParams<T>& p) {
  if (p.config.variant != AttentionVariant::pseudo) {
    throw Error("pseudo_to_standard_embed: pseudo params required");
  }
  const std::size_t D = p.config.d_model, n = p.config.n_heads,
                    dh = p.config.d_head();
  AttentionParams<T> s;
  s.config = p.config;
  s.config.variant = AttentionVariant::standard;
  s.config.scaling = ScoreScaling::inv_dhead;
  s.wq = Tensor<T>::zeros({D, D});
  s.wk = p.u.clone();
  s.wv = p.u.clone();
  s.wo = p.p.clone();
  s.bq = Tensor<T>::zeros({D});
  s.bk = p.b1.clone();
  s.bv = p.b1.clone();
  s.bo = p.b2.clone();
  const T* pu = p.u.data();
  const T* pa = p.a.data();
  const T* pb1 = p.b1.data();
  T* wq = s.wq.mutable_data();
  T* bq = s.bq.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    const T* ai = pa + i * dh * dh;
    for (std::size_t r = 0; r < D; ++r) {
      for (std::size_t c2 = 0; c2 < dh; ++c2) {
        double acc = 0.0;
        for (std::size_t k = 0; k < dh; ++k) {
          acc += static_cast<double>(pu[r * D + i * dh + k]) *
                 static_cast<double>(ai[k * dh + c2]);
        }
        wq[r * D + i * dh + c2] = static_cast<T>(acc);
      }
    }
    for (std::size_t c2 = 0; c2 < dh; ++c2) {
      double acc = 0.0;
      for (std::size_t k = 0; k < dh; ++k) {
        acc += static_cast<double>(pb1[i * dh + k]) *
               static_cast<double>(ai[k * dh + c2]);
      }
      bq[i * dh + c2] = static_cast<T>(acc);
    }
  }
  return s;
}

}  // namespace skf
