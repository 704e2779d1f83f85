#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "skf/einsum.hpp"
#include "skf/tape.hpp"
#include "skf/tensor.hpp"

namespace skf {

namespace detail {

template <class T>
bool tracked(const Tensor<T>& t) {
  return Tape<T>::current() != nullptr && t.grad_id >= 0;
}

template <class T>
bool tracked(const Tensor<T>& a, const Tensor<T>& b) {
  return Tape<T>::current() != nullptr && (a.grad_id >= 0 || b.grad_id >= 0);
}

inline std::atomic<std::uint64_t> g_softmax_uniform_rows{0};

}  // namespace detail

/// Number of fully masked (-inf) softmax rows that were flattened to uniform.
inline std::uint64_t softmax_uniform_row_count() {
  return detail::g_softmax_uniform_rows.load();
}

inline void reset_softmax_uniform_row_count() {
  detail::g_softmax_uniform_rows.store(0);
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw Error("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  T* o = out.mutable_data();
  const T* pa = a.data();
  const T* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = pa[i] + pb[i];
  if (detail::tracked(a, b)) {
    const int pa_id = a.grad_id, pb_id = b.grad_id;
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pa_id, pb_id},
        [pa_id, pb_id](const Tensor<T>& g, Tape<T>& t) {
          if (pa_id >= 0) t.accumulate(pa_id, g);
          if (pb_id >= 0) t.accumulate(pb_id, g);
        });
  }
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw Error("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  T* o = out.mutable_data();
  const T* pa = a.data();
  const T* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = pa[i] - pb[i];
  if (detail::tracked(a, b)) {
    const int pa_id = a.grad_id, pb_id = b.grad_id;
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pa_id, pb_id},
        [pa_id, pb_id](const Tensor<T>& g, Tape<T>& t) {
          if (pa_id >= 0) t.accumulate(pa_id, g);
          if (pb_id >= 0) {
            Tensor<T> ng = Tensor<T>::zeros(g.shape());
            T* d = ng.mutable_data();
            const T* s = g.data();
            for (std::size_t i = 0; i < g.size(); ++i) d[i] = -s[i];
            t.accumulate(pb_id, ng);
          }
        });
  }
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw Error("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  T* o = out.mutable_data();
  const T* pa = a.data();
  const T* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = pa[i] * pb[i];
  if (detail::tracked(a, b)) {
    const int pa_id = a.grad_id, pb_id = b.grad_id;
    Tensor<T> sa = a, sb = b;
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pa_id, pb_id},
        [pa_id, pb_id, sa, sb](const Tensor<T>& g, Tape<T>& t) {
          if (pa_id >= 0) {
            Tensor<T> ga = Tensor<T>::zeros(g.shape());
            T* d = ga.mutable_data();
            const T* s = g.data();
            const T* o2 = sb.data();
            for (std::size_t i = 0; i < g.size(); ++i) d[i] = s[i] * o2[i];
            t.accumulate(pa_id, ga);
          }
          if (pb_id >= 0) {
            Tensor<T> gb = Tensor<T>::zeros(g.shape());
            T* d = gb.mutable_data();
            const T* s = g.data();
            const T* o1 = sa.data();
            for (std::size_t i = 0; i < g.size(); ++i) d[i] = s[i] * o1[i];
            t.accumulate(pb_id, gb);
          }
        });
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  T* o = out.mutable_data();
  const T* p = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = p[i] * c;
  if (detail::tracked(x)) {
    const int pid = x.grad_id;
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pid}, [pid, c](const Tensor<T>& g, Tape<T>& t) {
          Tensor<T> gx = Tensor<T>::zeros(g.shape());
          T* d = gx.mutable_data();
          const T* s = g.data();
          for (std::size_t i = 0; i < g.size(); ++i) d[i] = s[i] * c;
          t.accumulate(pid, gx);
        });
  }
  return out;
}

/// x + y with y's shape a trailing suffix of x's shape (bias or positional
/// table broadcast over the leading axes).
template <class T>
Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& y) {
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  if (ys.size() > xs.size() ||
      !std::equal(ys.begin(), ys.end(), xs.end() - ys.size())) {
    throw Error("add_broadcast: " + shape_str(ys) +
                " is not a trailing suffix of " + shape_str(xs));
  }
  const std::size_t inner = numel(ys);
  const std::size_t outer = x.size() / std::max<std::size_t>(inner, 1);
  Tensor<T> out = Tensor<T>::zeros(xs);
  T* o = out.mutable_data();
  const T* px = x.data();
  const T* py = y.data();
  for (std::size_t r = 0; r < outer; ++r) {
    for (std::size_t i = 0; i < inner; ++i) {
      o[r * inner + i] = px[r * inner + i] + py[i];
    }
  }
  if (detail::tracked(x, y)) {
    const int px_id = x.grad_id, py_id = y.grad_id;
    Shape yshape = ys;
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {px_id, py_id},
        [px_id, py_id, inner, outer, yshape](const Tensor<T>& g, Tape<T>& t) {
          if (px_id >= 0) t.accumulate(px_id, g);
          if (py_id >= 0) {
            Tensor<T> gy = Tensor<T>::zeros(yshape);
            T* d = gy.mutable_data();
            const T* s = g.data();
            for (std::size_t r = 0; r < outer; ++r) {
              for (std::size_t i = 0; i < inner; ++i) d[i] += s[r * inner + i];
            }
            t.accumulate(py_id, gy);
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape movement
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  Tensor<T> out = x.with_shape(std::move(shape));
  out.grad_id = -1;
  if (detail::tracked(x)) {
    const int pid = x.grad_id;
    Shape in_shape = x.shape();
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pid}, [pid, in_shape](const Tensor<T>& g, Tape<T>& t) {
          t.accumulate(pid, g.with_shape(in_shape));
        });
  }
  return out;
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  if (axes.size() != x.rank()) {
    throw Error("permute: axes rank mismatch");
  }
  std::vector<bool> seen(x.rank(), false);
  Shape out_shape(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= x.rank() || seen[axes[i]]) {
      throw Error("permute: invalid axis list");
    }
    seen[axes[i]] = true;
    out_shape[i] = x.shape()[axes[i]];
  }
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const auto in_strides = row_major_strides(x.shape());
  std::vector<std::size_t> walk(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) walk[i] = in_strides[axes[i]];
  T* o = out.mutable_data();
  const T* p = x.data();
  std::vector<std::size_t> coords(x.rank(), 0);
  std::size_t src = 0;
  for (std::size_t linear = 0; linear < out.size(); ++linear) {
    o[linear] = p[src];
    for (std::size_t d = out_shape.size(); d-- > 0;) {
      ++coords[d];
      src += walk[d];
      if (coords[d] < out_shape[d]) break;
      src -= out_shape[d] * walk[d];
      coords[d] = 0;
    }
  }
  if (detail::tracked(x)) {
    const int pid = x.grad_id;
    std::vector<std::size_t> inverse(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) inverse[axes[i]] = i;
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pid}, [pid, inverse](const Tensor<T>& g, Tape<T>& t) {
          t.accumulate(pid, permute(g, inverse));
        });
  }
  return out;
}

template <class T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  if (x.rank() != 2) throw Error("transpose2d: rank-2 tensor required");
  return permute(x, {1, 0});
}

/// Untracked copy of a slice along one axis.
template <class T>
Tensor<T> slice_axis(const Tensor<T>& x, std::size_t axis, std::size_t start,
                     std::size_t count) {
  if (axis >= x.rank() || start + count > x.extent(axis)) {
    throw Error("slice_axis: out of range");
  }
  Shape out_shape = x.shape();
  out_shape[axis] = count;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  T* o = out.mutable_data();
  const T* p = x.data();
  const std::size_t full = x.extent(axis);
  for (std::size_t r = 0; r < outer; ++r) {
    const T* src = p + (r * full + start) * inner;
    T* dst = o + r * count * inner;
    std::copy(src, src + count * inner, dst);
  }
  return out;
}

// ---------------------------------------------------------------------------
// contraction
// ---------------------------------------------------------------------------

namespace detail {

/// Gradient of contract() w.r.t. one operand: contract the upstream gradient
/// with the other operand, then tile across any axes the target operand sums
/// out on its own (letters absent from both the output and the other input).
template <class T>
Tensor<T> contract_grad_operand(const Tensor<T>& gout, const Tensor<T>& other,
                                const std::string& out_idx,
                                const std::string& other_idx,
                                const std::string& target_idx,
                                const Shape& target_shape) {
  std::string reduced_idx;
  Shape reduced_shape;
  std::vector<bool> orphan(target_idx.size(), false);
  for (std::size_t i = 0; i < target_idx.size(); ++i) {
    const char c = target_idx[i];
    const bool present = out_idx.find(c) != std::string::npos ||
                         other_idx.find(c) != std::string::npos;
    orphan[i] = !present;
    if (present) {
      reduced_idx.push_back(c);
      reduced_shape.push_back(target_shape[i]);
    }
  }
  const std::string spec = out_idx + "," + other_idx + "->" + reduced_idx;
  ContractPlan plan = make_contract_plan(spec, gout.shape(), other.shape());
  Tensor<T> reduced = contract_execute(plan, gout, other);
  if (reduced_idx.size() == target_idx.size()) return reduced;

  // tile across orphan axes
  Tensor<T> full = Tensor<T>::zeros(target_shape);
  const auto full_strides = row_major_strides(target_shape);
  const auto red_strides = row_major_strides(reduced_shape);
  std::vector<std::size_t> red_walk(target_idx.size(), 0);
  {
    std::size_t r = 0;
    for (std::size_t i = 0; i < target_idx.size(); ++i) {
      if (!orphan[i]) red_walk[i] = red_strides[r++];
    }
  }
  T* o = full.mutable_data();
  const T* src = reduced.data();
  std::vector<std::size_t> coords(target_idx.size(), 0);
  std::size_t roff = 0;
  for (std::size_t linear = 0; linear < full.size(); ++linear) {
    o[linear] = src[roff];
    for (std::size_t d = target_idx.size(); d-- > 0;) {
      ++coords[d];
      roff += red_walk[d];
      if (coords[d] < target_shape[d]) break;
      roff -= target_shape[d] * red_walk[d];
      coords[d] = 0;
    }
  }
  return full;
}

}  // namespace detail

/// Two-operand Einstein summation. The value equals the nested-loop sum over
/// all contracted indices; a tiled matrix-multiply lowering handles the bulk
/// sizes. Differentiable in both operands.
template <class T>
Tensor<T> contract(const Tensor<T>& a, const Tensor<T>& b,
                   std::string_view spec,
                   ContractPath path = ContractPath::automatic) {
  ContractPlan plan = make_contract_plan(spec, a.shape(), b.shape());
  Tensor<T> out = contract_execute(plan, a, b, path);
  if (detail::tracked(a, b)) {
    const int pa_id = a.grad_id, pb_id = b.grad_id;
    Tensor<T> sa = a, sb = b;
    const std::string a_idx = plan.a_idx, b_idx = plan.b_idx,
                      out_idx = plan.out_idx;
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pa_id, pb_id},
        [pa_id, pb_id, sa, sb, a_idx, b_idx,
         out_idx](const Tensor<T>& g, Tape<T>& t) {
          if (pa_id >= 0) {
            t.accumulate(pa_id,
                         detail::contract_grad_operand(g, sb, out_idx, b_idx,
                                                       a_idx, sa.shape()));
          }
          if (pb_id >= 0) {
            t.accumulate(pb_id,
                         detail::contract_grad_operand(g, sa, out_idx, a_idx,
                                                       b_idx, sb.shape()));
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization and activations
// ---------------------------------------------------------------------------

/// Softmax along `axis` with max-subtraction. A row made entirely of -inf is
/// defined as uniform; such rows are counted (softmax_uniform_row_count) and
/// reported once on stderr so masked rows cannot poison a run silently.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw Error("softmax: axis " + std::to_string(axis) +
                " out of range for shape " + shape_str(x.shape()));
  }
  const std::size_t n = x.extent(axis);
  if (n == 0) throw Error("softmax: empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];

  Tensor<T> out = Tensor<T>::zeros(x.shape());
  T* o = out.mutable_data();
  const T* p = x.data();
  std::uint64_t uniform_rows = 0;
  for (std::size_t r = 0; r < outer; ++r) {
    for (std::size_t c = 0; c < inner; ++c) {
      const std::size_t base = r * n * inner + c;
      T mx = p[base];
      for (std::size_t i = 1; i < n; ++i) {
        mx = std::max(mx, p[base + i * inner]);
      }
      if (std::isinf(static_cast<double>(mx)) && mx < T(0)) {
        for (std::size_t i = 0; i < n; ++i) {
          o[base + i * inner] = T(1) / static_cast<T>(n);
        }
        ++uniform_rows;
        continue;
      }
      T denom = T(0);
      for (std::size_t i = 0; i < n; ++i) {
        const T e = std::exp(p[base + i * inner] - mx);
        o[base + i * inner] = e;
        denom += e;
      }
      for (std::size_t i = 0; i < n; ++i) o[base + i * inner] /= denom;
    }
  }
  if (uniform_rows > 0) {
    const auto before = detail::g_softmax_uniform_rows.fetch_add(uniform_rows);
    if (before == 0) {
      std::fprintf(stderr,
                   "[skf] softmax: fully masked row(s) flattened to uniform\n");
    }
  }
  require_finite(out, "softmax");
  if (detail::tracked(x)) {
    const int pid = x.grad_id;
    Tensor<T> saved = out;
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pid},
        [pid, saved, outer, inner, n](const Tensor<T>& g, Tape<T>& t) {
          Tensor<T> gx = Tensor<T>::zeros(g.shape());
          T* d = gx.mutable_data();
          const T* s = g.data();
          const T* y = saved.data();
          for (std::size_t r = 0; r < outer; ++r) {
            for (std::size_t c = 0; c < inner; ++c) {
              const std::size_t base = r * n * inner + c;
              T dot = T(0);
              for (std::size_t i = 0; i < n; ++i) {
                dot += s[base + i * inner] * y[base + i * inner];
              }
              for (std::size_t i = 0; i < n; ++i) {
                d[base + i * inner] =
                    y[base + i * inner] * (s[base + i * inner] - dot);
              }
            }
          }
          t.accumulate(pid, gx);
        });
  }
  return out;
}

template <class T>
Tensor<T> softmax_lastaxis(const Tensor<T>& x) {
  return softmax(x, x.rank() - 1);
}

/// Layer normalization over the last axis with biased variance.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
  if (eps <= T(0)) throw Error("layer_norm: eps must be positive");
  if (x.rank() == 0) throw Error("layer_norm: rank >= 1 required");
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw Error("layer_norm: gamma/beta must have shape (" +
                std::to_string(d) + ")");
  }
  const std::size_t rows = x.size() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  Tensor<T> xhat = Tensor<T>::zeros(x.shape());
  std::vector<T> inv_std(rows);
  T* o = out.mutable_data();
  T* xh = xhat.mutable_data();
  const T* p = x.data();
  const T* pg = gamma.data();
  const T* pb = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = p + r * d;
    T mean = T(0);
    for (std::size_t i = 0; i < d; ++i) mean += row[i];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t i = 0; i < d; ++i) {
      const T c = row[i] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T istd = T(1) / std::sqrt(var + eps);
    inv_std[r] = istd;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (row[i] - mean) * istd;
      xh[r * d + i] = h;
      o[r * d + i] = h * pg[i] + pb[i];
    }
  }
  if (detail::tracked(x) || detail::tracked(gamma) || detail::tracked(beta)) {
    const int px_id = x.grad_id, pg_id = gamma.grad_id, pb_id = beta.grad_id;
    Tensor<T> saved_xhat = xhat;
    Tensor<T> saved_gamma = gamma;
    auto istd_saved = std::make_shared<std::vector<T>>(std::move(inv_std));
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {px_id, pg_id, pb_id},
        [px_id, pg_id, pb_id, saved_xhat, saved_gamma, istd_saved, rows,
         d](const Tensor<T>& g, Tape<T>& t) {
          const T* s = g.data();
          const T* xh2 = saved_xhat.data();
          const T* pg2 = saved_gamma.data();
          if (pb_id >= 0) {
            Tensor<T> gb = Tensor<T>::zeros({d});
            T* dd = gb.mutable_data();
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t i = 0; i < d; ++i) dd[i] += s[r * d + i];
            }
            t.accumulate(pb_id, gb);
          }
          if (pg_id >= 0) {
            Tensor<T> gg = Tensor<T>::zeros({d});
            T* dd = gg.mutable_data();
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t i = 0; i < d; ++i) {
                dd[i] += s[r * d + i] * xh2[r * d + i];
              }
            }
            t.accumulate(pg_id, gg);
          }
          if (px_id >= 0) {
            Tensor<T> gx = Tensor<T>::zeros(saved_xhat.shape());
            T* dd = gx.mutable_data();
            for (std::size_t r = 0; r < rows; ++r) {
              T mean_dh = T(0), mean_dh_xh = T(0);
              for (std::size_t i = 0; i < d; ++i) {
                const T dh = s[r * d + i] * pg2[i];
                mean_dh += dh;
                mean_dh_xh += dh * xh2[r * d + i];
              }
              mean_dh /= static_cast<T>(d);
              mean_dh_xh /= static_cast<T>(d);
              for (std::size_t i = 0; i < d; ++i) {
                const T dh = s[r * d + i] * pg2[i];
                dd[r * d + i] = (*istd_saved)[r] *
                                (dh - mean_dh - xh2[r * d + i] * mean_dh_xh);
              }
            }
            t.accumulate(px_id, gx);
          }
        });
  }
  return out;
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  T* o = out.mutable_data();
  const T* p = x.data();
  const double inv_sqrt2 = 0.7071067811865475244;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(p[i]);
    o[i] = static_cast<T>(v * 0.5 * (1.0 + std::erf(v * inv_sqrt2)));
  }
  if (detail::tracked(x)) {
    const int pid = x.grad_id;
    Tensor<T> saved = x;
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pid}, [pid, saved](const Tensor<T>& g, Tape<T>& t) {
          Tensor<T> gx = Tensor<T>::zeros(g.shape());
          T* d = gx.mutable_data();
          const T* s = g.data();
          const T* p2 = saved.data();
          const double inv_sqrt2 = 0.7071067811865475244;
          const double inv_sqrt2pi = 0.3989422804014326779;
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = static_cast<double>(p2[i]);
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            d[i] = static_cast<T>(static_cast<double>(s[i]) * (cdf + v * pdf));
          }
          t.accumulate(pid, gx);
        });
  }
  return out;
}

/// Inverted dropout; identity when not training or rate == 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng,
                  bool training) {
  if (rate < 0.0 || rate >= 1.0) throw Error("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  auto mask = std::make_shared<std::vector<T>>(x.size());
  std::bernoulli_distribution keep(1.0 - rate);
  const T inv_keep = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  T* o = out.mutable_data();
  const T* p = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T m = keep(rng) ? inv_keep : T(0);
    (*mask)[i] = m;
    o[i] = p[i] * m;
  }
  if (detail::tracked(x)) {
    const int pid = x.grad_id;
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pid}, [pid, mask](const Tensor<T>& g, Tape<T>& t) {
          Tensor<T> gx = Tensor<T>::zeros(g.shape());
          T* d = gx.mutable_data();
          const T* s = g.data();
          for (std::size_t i = 0; i < g.size(); ++i) d[i] = s[i] * (*mask)[i];
          t.accumulate(pid, gx);
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

/// Strided 2-D cross-correlation, no padding; the stride must tile the input
/// exactly ((H - kh) % sh == 0, likewise for W).
template <class T>
Tensor<T> conv2d_strided(const Tensor<T>& input, const Tensor<T>& filter,
                         std::size_t sh, std::size_t sw) {
  if (input.rank() != 4 || filter.rank() != 4) {
    throw Error("conv2d_strided: input (B,C,H,W) and filter (Co,C,kh,kw) "
                "required");
  }
  const std::size_t B = input.extent(0), C = input.extent(1),
                    H = input.extent(2), W = input.extent(3);
  const std::size_t Co = filter.extent(0), kh = filter.extent(2),
                    kw = filter.extent(3);
  if (filter.extent(1) != C) {
    throw Error("conv2d_strided: channel mismatch");
  }
  if (kh > H || kw > W) {
    throw Error("conv2d_strided: filter larger than input");
  }
  if (sh == 0 || sw == 0) throw Error("conv2d_strided: zero stride");
  if ((H - kh) % sh != 0 || (W - kw) % sw != 0) {
    throw Error("conv2d_strided: stride (" + std::to_string(sh) + "," +
                std::to_string(sw) + ") does not tile input " +
                shape_str(input.shape()) + " with filter " +
                shape_str(filter.shape()));
  }
  const std::size_t Ho = (H - kh) / sh + 1;
  const std::size_t Wo = (W - kw) / sw + 1;
  Tensor<T> out = Tensor<T>::zeros({B, Co, Ho, Wo});
  T* o = out.mutable_data();
  const T* pi = input.data();
  const T* pf = filter.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Co; ++co) {
      for (std::size_t oh = 0; oh < Ho; ++oh) {
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          T acc = T(0);
          for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t i = 0; i < kh; ++i) {
              const T* irow =
                  pi + ((b * C + c) * H + oh * sh + i) * W + ow * sw;
              const T* frow = pf + ((co * C + c) * kh + i) * kw;
              for (std::size_t j = 0; j < kw; ++j) acc += irow[j] * frow[j];
            }
          }
          o[((b * Co + co) * Ho + oh) * Wo + ow] = acc;
        }
      }
    }
  }
  if (detail::tracked(input, filter)) {
    const int pi_id = input.grad_id, pf_id = filter.grad_id;
    Tensor<T> si = input, sf = filter;
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pi_id, pf_id},
        [pi_id, pf_id, si, sf, B, C, H, W, Co, kh, kw, sh, sw, Ho,
         Wo](const Tensor<T>& g, Tape<T>& t) {
          const T* s = g.data();
          if (pi_id >= 0) {
            Tensor<T> gi = Tensor<T>::zeros(si.shape());
            T* d = gi.mutable_data();
            const T* pf2 = sf.data();
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t co = 0; co < Co; ++co)
                for (std::size_t oh = 0; oh < Ho; ++oh)
                  for (std::size_t ow = 0; ow < Wo; ++ow) {
                    const T gv = s[((b * Co + co) * Ho + oh) * Wo + ow];
                    for (std::size_t c = 0; c < C; ++c)
                      for (std::size_t i = 0; i < kh; ++i)
                        for (std::size_t j = 0; j < kw; ++j)
                          d[((b * C + c) * H + oh * sh + i) * W + ow * sw +
                            j] += gv * pf2[((co * C + c) * kh + i) * kw + j];
                  }
            t.accumulate(pi_id, gi);
          }
          if (pf_id >= 0) {
            Tensor<T> gf = Tensor<T>::zeros(sf.shape());
            T* d = gf.mutable_data();
            const T* pi2 = si.data();
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t co = 0; co < Co; ++co)
                for (std::size_t oh = 0; oh < Ho; ++oh)
                  for (std::size_t ow = 0; ow < Wo; ++ow) {
                    const T gv = s[((b * Co + co) * Ho + oh) * Wo + ow];
                    for (std::size_t c = 0; c < C; ++c)
                      for (std::size_t i = 0; i < kh; ++i)
                        for (std::size_t j = 0; j < kw; ++j)
                          d[((co * C + c) * kh + i) * kw + j] +=
                              gv * pi2[((b * C + c) * H + oh * sh + i) * W +
                                       ow * sw + j];
                  }
            t.accumulate(pf_id, gf);
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// gather / scatter
// ---------------------------------------------------------------------------

/// Selects tokens along axis 1 of a (B,S,D) tensor.
template <class T>
Tensor<T> index_select_tokens(const Tensor<T>& x,
                              const std::vector<std::size_t>& idx) {
  if (x.rank() != 3) throw Error("index_select_tokens: (B,S,D) required");
  const std::size_t B = x.extent(0), S = x.extent(1), D = x.extent(2);
  for (std::size_t i : idx) {
    if (i >= S) throw Error("index_select_tokens: index out of range");
  }
  Tensor<T> out = Tensor<T>::zeros({B, idx.size(), D});
  T* o = out.mutable_data();
  const T* p = x.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const T* src = p + (b * S + idx[k]) * D;
      std::copy(src, src + D, o + (b * idx.size() + k) * D);
    }
  }
  if (detail::tracked(x)) {
    const int pid = x.grad_id;
    auto saved_idx = std::make_shared<std::vector<std::size_t>>(idx);
    Shape in_shape = x.shape();
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pid},
        [pid, saved_idx, in_shape, B, S, D](const Tensor<T>& g, Tape<T>& t) {
          Tensor<T> gx = Tensor<T>::zeros(in_shape);
          T* d = gx.mutable_data();
          const T* s = g.data();
          const std::size_t K = saved_idx->size();
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t k = 0; k < K; ++k) {
              T* dst = d + (b * S + (*saved_idx)[k]) * D;
              const T* src = s + (b * K + k) * D;
              for (std::size_t i = 0; i < D; ++i) dst[i] += src[i];
            }
          }
          t.accumulate(pid, gx);
        });
  }
  return out;
}

/// Concatenates two (B,S,D) tensors along the token axis.
template <class T>
Tensor<T> concat_tokens(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.extent(0) != b.extent(0) ||
      a.extent(2) != b.extent(2)) {
    throw Error("concat_tokens: (B,S,D) operands with matching B and D "
                "required");
  }
  const std::size_t B = a.extent(0), Sa = a.extent(1), Sb = b.extent(1),
                    D = a.extent(2);
  Tensor<T> out = Tensor<T>::zeros({B, Sa + Sb, D});
  T* o = out.mutable_data();
  const T* pa = a.data();
  const T* pb = b.data();
  for (std::size_t bt = 0; bt < B; ++bt) {
    std::copy(pa + bt * Sa * D, pa + (bt + 1) * Sa * D,
              o + bt * (Sa + Sb) * D);
    std::copy(pb + bt * Sb * D, pb + (bt + 1) * Sb * D,
              o + bt * (Sa + Sb) * D + Sa * D);
  }
  if (detail::tracked(a, b)) {
    const int pa_id = a.grad_id, pb_id = b.grad_id;
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pa_id, pb_id},
        [pa_id, pb_id, B, Sa, Sb, D](const Tensor<T>& g, Tape<T>& t) {
          const T* s = g.data();
          if (pa_id >= 0) {
            Tensor<T> ga = Tensor<T>::zeros({B, Sa, D});
            T* d = ga.mutable_data();
            for (std::size_t bt = 0; bt < B; ++bt) {
              std::copy(s + bt * (Sa + Sb) * D, s + bt * (Sa + Sb) * D + Sa * D,
                        d + bt * Sa * D);
            }
            t.accumulate(pa_id, ga);
          }
          if (pb_id >= 0) {
            Tensor<T> gb = Tensor<T>::zeros({B, Sb, D});
            T* d = gb.mutable_data();
            for (std::size_t bt = 0; bt < B; ++bt) {
              std::copy(s + bt * (Sa + Sb) * D + Sa * D,
                        s + (bt + 1) * (Sa + Sb) * D, d + bt * Sb * D);
            }
            t.accumulate(pb_id, gb);
          }
        });
  }
  return out;
}

/// out.data[i] = x.data[map[i]]; backward scatter-adds through the map.
/// Used for patch extraction and reassembly, where the map is a bijection.
template <class T>
Tensor<T> gather_map(const Tensor<T>& x,
                     std::shared_ptr<const std::vector<std::size_t>> map,
                     Shape out_shape) {
  if (!map || map->size() != numel(out_shape)) {
    throw Error("gather_map: map size does not match output shape");
  }
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  T* o = out.mutable_data();
  const T* p = x.data();
  const std::size_t xn = x.size();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if ((*map)[i] >= xn) throw Error("gather_map: index out of range");
    o[i] = p[(*map)[i]];
  }
  if (detail::tracked(x)) {
    const int pid = x.grad_id;
    Shape in_shape = x.shape();
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pid},
        [pid, map, in_shape](const Tensor<T>& g, Tape<T>& t) {
          Tensor<T> gx = Tensor<T>::zeros(in_shape);
          T* d = gx.mutable_data();
          const T* s = g.data();
          for (std::size_t i = 0; i < g.size(); ++i) d[(*map)[i]] += s[i];
          t.accumulate(pid, gx);
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions and losses
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.values()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (detail::tracked(x)) {
    const int pid = x.grad_id;
    Shape in_shape = x.shape();
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pid}, [pid, in_shape](const Tensor<T>& g, Tape<T>& t) {
          t.accumulate(pid, Tensor<T>::full(in_shape, g.item()));
        });
  }
  return out;
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), static_cast<T>(1.0 / static_cast<double>(x.size())));
}

/// Mean squared error over all entries.
template <class T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
  Tensor<T> d = sub(pred, target);
  return mean_all(mul(d, d));
}

/// Mean cross-entropy with integer labels; fused softmax backward.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        const std::vector<int>& labels) {
  if (logits.rank() != 2) throw Error("cross_entropy: (B,C) logits required");
  const std::size_t B = logits.extent(0), C = logits.extent(1);
  if (labels.size() != B) throw Error("cross_entropy: label count mismatch");
  const T* p = logits.data();
  Tensor<T> probs = Tensor<T>::zeros({B, C});
  T* q = probs.mutable_data();
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= C) {
      throw Error("cross_entropy: label out of range");
    }
    const T* row = p + b * C;
    T mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      denom += std::exp(static_cast<double>(row[c] - mx));
    }
    const double lse = std::log(denom) + static_cast<double>(mx);
    loss += lse - static_cast<double>(row[labels[b]]);
    for (std::size_t c = 0; c < C; ++c) {
      q[b * C + c] =
          static_cast<T>(std::exp(static_cast<double>(row[c]) - lse));
    }
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss / B));
  if (detail::tracked(logits)) {
    const int pid = logits.grad_id;
    auto saved_labels = std::make_shared<std::vector<int>>(labels);
    Tensor<T> saved_probs = probs;
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pid},
        [pid, saved_labels, saved_probs, B, C](const Tensor<T>& g,
                                               Tape<T>& t) {
          const T gv = g.item() / static_cast<T>(B);
          Tensor<T> gx = Tensor<T>::zeros({B, C});
          T* d = gx.mutable_data();
          const T* q2 = saved_probs.data();
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
              T v = q2[b * C + c];
              if (static_cast<std::size_t>((*saved_labels)[b]) == c) {
                v -= T(1);
              }
              d[b * C + c] = v * gv;
            }
          }
          t.accumulate(pid, gx);
        });
  }
  return out;
}

}  // namespace skf
