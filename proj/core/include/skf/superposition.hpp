#pragma once

#include <optional>

#include "skf/kernels.hpp"
#include "skf/ops.hpp"
#include "skf/tensor.hpp"

namespace skf {

/// Inner/outer contraction pair realizing a mapping as linear combinations of
/// kernel values. A missing reference means self-reference: the layer input
/// itself stands in as the reference matrix.
template <class T>
struct SuperpositionLayer {
  Tensor<T> w_inner;                    // (H, R, D, D)
  Tensor<T> w_outer;                    // (E, R', H, H)
  std::optional<Tensor<T>> ref_inner;   // (B, R, D), self-reference if absent
  std::optional<Tensor<T>> ref_outer;   // (B, R', H), self-reference if absent
  KernelSpec inner_spec;
  KernelSpec outer_spec;
  KernelTensorPlan plan;
};

namespace detail {

template <class T>
void check_inner_extents(const SuperpositionLayer<T>& layer,
                         const Tensor<T>& x, const Tensor<T>& ref) {
  if (x.rank() != 3) throw Error("inner_apply: input (B,S,D) required");
  if (layer.w_inner.rank() != 4) {
    throw Error("inner_apply: W_inner (H,R,D,D) required");
  }
  const std::size_t D = x.extent(2);
  if (ref.rank() != 3 || ref.extent(0) != x.extent(0) ||
      ref.extent(2) != D) {
    throw Error("inner_apply: reference " + shape_str(ref.shape()) +
                " incompatible with input " + shape_str(x.shape()));
  }
  if (layer.w_inner.extent(1) != ref.extent(1) ||
      layer.w_inner.extent(2) != D || layer.w_inner.extent(3) != D) {
    throw Error("inner_apply: W_inner " + shape_str(layer.w_inner.shape()) +
                " incompatible with reference " + shape_str(ref.shape()));
  }
}

/// Streamed contraction of the kernel tensor against a weight tensor over
/// (r, d1, d2); result rows are accumulated per S tile, deterministically.
template <class T>
Tensor<T> streamed_weight_contraction(const Tensor<T>& x, const Tensor<T>& ref,
                                      const KernelSpec& spec,
                                      const KernelTensorPlan& plan,
                                      const Tensor<T>& w) {
  const std::size_t B = x.extent(0), S = x.extent(1);
  const std::size_t H = w.extent(0);
  Tensor<T> out = Tensor<T>::zeros({B, S, H});
  T* o = out.mutable_data();
  KernelTensorPlan stream = plan;
  stream.materialize = false;
  stream.ordered = true;
  kernel_tensor_tiles<T>(x, ref, spec, stream, [&](const KernelTile<T>& tile) {
    const std::size_t sb = tile.block.extent(1);
    const std::size_t rb = tile.block.extent(2);
    Tensor<T> wslice = slice_axis(w, 1, tile.r0, rb);
    ContractPlan cp = make_contract_plan("bsrde,hrde->bsh",
                                         tile.block.shape(), wslice.shape());
    Tensor<T> part = contract_execute(cp, tile.block, wslice);
    const T* pp = part.data();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t s = 0; s < sb; ++s) {
        T* dst = o + (b * S + tile.s0 + s) * H;
        const T* src = pp + (b * sb + s) * H;
        for (std::size_t h = 0; h < H; ++h) dst[h] += src[h];
      }
    }
  });
  return out;
}

}  // namespace detail

/// Psi(X)[b,s,h] = K_inner(X, Ref)[b,s,r,d1,d2] * W_inner[h,r,d1,d2].
/// Materialized mode contracts through ops::contract so gradients flow into
/// W_inner; streamed mode is a pure evaluation that never stores the full
/// kernel tensor.
template <class T>
Tensor<T> inner_apply(const SuperpositionLayer<T>& layer, const Tensor<T>& x) {
  const Tensor<T>& ref = layer.ref_inner ? *layer.ref_inner : x;
  detail::check_inner_extents(layer, x, ref);
  if (layer.plan.materialize) {
    Tensor<T> k = kernel_tensor(x, ref, layer.inner_spec, layer.plan);
    return contract(k, layer.w_inner, "bsrde,hrde->bsh");
  }
  return detail::streamed_weight_contraction(x, ref, layer.inner_spec,
                                             layer.plan, layer.w_inner);
}

/// Phi(Z)[b,s,e] = K_outer(Z, Ref')[b,s,r,h1,h2] * W_outer[e,r,h1,h2].
template <class T>
Tensor<T> outer_apply(const SuperpositionLayer<T>& layer, const Tensor<T>& z) {
  const Tensor<T>& ref = layer.ref_outer ? *layer.ref_outer : z;
  if (z.rank() != 3) throw Error("outer_apply: input (B,S,H) required");
  if (layer.w_outer.rank() != 4) {
    throw Error("outer_apply: W_outer (E,R',H,H) required");
  }
  const std::size_t H = z.extent(2);
  if (ref.rank() != 3 || ref.extent(0) != z.extent(0) || ref.extent(2) != H) {
    throw Error("outer_apply: reference " + shape_str(ref.shape()) +
                " incompatible with input " + shape_str(z.shape()));
  }
  if (layer.w_outer.extent(1) != ref.extent(1) ||
      layer.w_outer.extent(2) != H || layer.w_outer.extent(3) != H) {
    throw Error("outer_apply: W_outer " + shape_str(layer.w_outer.shape()) +
                " incompatible with reference " + shape_str(ref.shape()));
  }
  if (layer.plan.materialize) {
    Tensor<T> k = kernel_tensor(z, ref, layer.outer_spec, layer.plan);
    return contract(k, layer.w_outer, "bsrde,hrde->bsh");
  }
  return detail::streamed_weight_contraction(z, ref, layer.outer_spec,
                                             layer.plan, layer.w_outer);
}

/// g(x) = sum_r <W_r, K(x, s_r)>_F with scalar kernel k.
template <class T>
T frobenius_fit(const Tensor<T>& w, const Tensor<T>& refs,
                const KernelSpec& spec, const Tensor<T>& x) {
  if (w.rank() != 3 || refs.rank() != 2 || x.rank() != 1) {
    throw Error("frobenius_fit: W (R,D,D), refs (R,D), x (D) required");
  }
  const std::size_t R = w.extent(0), D = w.extent(1);
  if (w.extent(2) != D || refs.extent(0) != R || refs.extent(1) != D ||
      x.extent(0) != D) {
    throw Error("frobenius_fit: inconsistent extents");
  }
  spec.validate();
  const T* pw = w.data();
  const T* ps = refs.data();
  const T* px = x.data();
  double acc = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t d1 = 0; d1 < D; ++d1) {
      for (std::size_t d2 = 0; d2 < D; ++d2) {
        acc += static_cast<double>(pw[(r * D + d1) * D + d2]) *
               static_cast<double>(
                   kernel_eval(spec, px[d1], ps[r * D + d2]));
      }
    }
  }
  return static_cast<T>(acc);
}

struct EquivalenceReport {
  double max_abs_diff = 0.0;
};

/// Checks that single-sequence attention without softmax,
/// X Wq Wk^T X^T X Wv, equals the inner/outer superposition evaluation with
/// linear kernels, Ref_inner = X, Ref_outer = X^T, W_{h,r} = delta_{hr} W_attn
/// and W'_{e,r'} = Wv[r',e] I_S.
template <class T>
EquivalenceReport attention_as_superposition(const Tensor<T>& x,
                                             const Tensor<T>& wq,
                                             const Tensor<T>& wk,
                                             const Tensor<T>& wv) {
  if (x.rank() != 2 || wq.rank() != 2 || wk.rank() != 2 || wv.rank() != 2) {
    throw Error("attention_as_superposition: X (S,D) and (D,E) projections "
                "required");
  }
  const std::size_t S = x.extent(0), D = x.extent(1);
  const std::size_t E = wq.extent(1);
  if (wq.extent(0) != D || wk.shape() != wq.shape() || wv.extent(0) != D) {
    throw Error("attention_as_superposition: inconsistent extents");
  }

  // direct path
  Tensor<T> w_attn = contract(wq, wk, "de,fe->df");        // Wq Wk^T (D,D)
  Tensor<T> scores = contract(contract(x, w_attn, "sd,df->sf"), x,
                              "sf,rf->sr");                // X Wattn X^T
  Tensor<T> direct = contract(contract(scores, x, "sr,rd->sd"), wv,
                              "sd,de->se");                // ... X Wv

  // superposition path
  SuperpositionLayer<T> layer;
  layer.inner_spec = KernelSpec::linear();
  layer.outer_spec = KernelSpec::linear();
  layer.w_inner = Tensor<T>::zeros({S, S, D, D});
  {
    T* wi = layer.w_inner.mutable_data();
    const T* wa = w_attn.data();
    for (std::size_t h = 0; h < S; ++h) {
      std::copy(wa, wa + D * D, wi + (h * S + h) * D * D);
    }
  }
  Tensor<T> xb = x.with_shape({1, S, D});
  layer.ref_inner = xb;
  Tensor<T> psi = inner_apply(layer, xb);  // (1,S,S)

  // outer: W'[e,r'] = Wv[r',e] * I_S, reference X^T viewed as (1,D,S)
  layer.w_outer = Tensor<T>::zeros({E, D, S, S});
  {
    T* wo = layer.w_outer.mutable_data();
    const T* pv = wv.data();
    for (std::size_t e = 0; e < E; ++e) {
      for (std::size_t r = 0; r < D; ++r) {
        const T v = pv[r * E + e];
        for (std::size_t h = 0; h < S; ++h) {
          wo[((e * D + r) * S + h) * S + h] = v;
        }
      }
    }
  }
  layer.ref_outer = permute(x, {1, 0}).with_shape({1, D, S});
  Tensor<T> phi = outer_apply(layer, psi);  // (1,S,E)

  EquivalenceReport rep;
  rep.max_abs_diff = max_abs_diff(phi.with_shape({S, E}), direct);
  return rep;
}

/// Checks Psi(X) computed by inner_apply (delta_{hr} W_attn, self-reference,
/// linear kernel) against a strided 2-D convolution over the reshaped kernel
/// tensor K* in R^{B x (SD) x (SD)} with filter W_attn and stride (D, D).
template <class T>
EquivalenceReport conv_equivalence_check(const Tensor<T>& x,
                                         const Tensor<T>& w_attn) {
  if (x.rank() != 3 || w_attn.rank() != 2) {
    throw Error("conv_equivalence_check: X (B,S,D) and W_attn (D,D) required");
  }
  const std::size_t B = x.extent(0), S = x.extent(1), D = x.extent(2);
  if (w_attn.extent(0) != D || w_attn.extent(1) != D) {
    throw Error("conv_equivalence_check: W_attn must be (D,D)");
  }

  SuperpositionLayer<T> layer;
  layer.inner_spec = KernelSpec::linear();
  layer.w_inner = Tensor<T>::zeros({S, S, D, D});
  {
    T* wi = layer.w_inner.mutable_data();
    const T* wa = w_attn.data();
    for (std::size_t h = 0; h < S; ++h) {
      std::copy(wa, wa + D * D, wi + (h * S + h) * D * D);
    }
  }
  Tensor<T> psi = inner_apply(layer, x);  // (B,S,S)

  Tensor<T> k = kernel_tensor(x, x, layer.inner_spec, layer.plan);
  // (B,S,R,D,D) -> K*[b, s*D+d1, r*D+d2]
  Tensor<T> kstar =
      reshape(permute(k, {0, 1, 3, 2, 4}), {B, 1, S * D, S * D});
  Tensor<T> filt = w_attn.with_shape({1, 1, D, D});
  Tensor<T> conv = conv2d_strided(kstar, filt, D, D);  // (B,1,S,S)

  EquivalenceReport rep;
  rep.max_abs_diff = max_abs_diff(conv.with_shape({B, S, S}), psi);
  return rep;
}

}  // namespace skf
