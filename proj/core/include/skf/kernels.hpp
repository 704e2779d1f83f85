#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "skf/ops.hpp"
#include "skf/tensor.hpp"

namespace skf {

enum class KernelKind { linear, gaussian, bspline };

/// Tagged choice of scalar kernel k(x, y).
struct KernelSpec {
  KernelKind kind = KernelKind::linear;
  double sigma = 1.0;                 // gaussian
  std::vector<double> knots;          // bspline, nondecreasing
  int degree = 0;                     // bspline

  static KernelSpec linear() { return {}; }

  static KernelSpec gaussian(double sigma) {
    KernelSpec s;
    s.kind = KernelKind::gaussian;
    s.sigma = sigma;
    return s;
  }

  static KernelSpec bspline(std::vector<double> knots, int degree) {
    KernelSpec s;
    s.kind = KernelKind::bspline;
    s.knots = std::move(knots);
    s.degree = degree;
    return s;
  }

  std::size_t basis_count() const {
    return knots.size() - static_cast<std::size_t>(degree) - 1;
  }

  void validate() const;
  std::string name() const;
};

/// Cox-de Boor B-spline basis value B_{i,degree}(x); zero outside
/// [knots[i], knots[i+degree+1]).
double bspline_basis(std::span<const double> knots, int degree, std::size_t i,
                     double x);

/// Degree-0 basis written as the difference of two translated unit steps.
/// Matches bspline_basis(knots, 0, i, x) exactly.
double bspline_step_difference(std::span<const double> knots, std::size_t i,
                               double x);

template <class T>
T kernel_eval(const KernelSpec& spec, T x, T y) {
  switch (spec.kind) {
    case KernelKind::linear:
      return x * y;
    case KernelKind::gaussian: {
      const double d = static_cast<double>(x) - static_cast<double>(y);
      return static_cast<T>(std::exp(-d * d / (2.0 * spec.sigma * spec.sigma)));
    }
    case KernelKind::bspline: {
      double acc = 0.0;
      const std::size_t n = spec.basis_count();
      for (std::size_t i = 0; i < n; ++i) {
        acc += bspline_basis(spec.knots, spec.degree, i,
                             static_cast<double>(x)) *
               bspline_basis(spec.knots, spec.degree, i,
                             static_cast<double>(y));
      }
      return static_cast<T>(acc);
    }
  }
  throw Error("kernel_eval: invalid kernel kind");
}

/// Evaluation plan for the 5-axis kernel tensor; tiles partition the S and R
/// axes. When materialize is false the tensor is never stored whole and
/// consumers receive tiles instead.
struct KernelTensorPlan {
  std::size_t block_rows = 32;
  std::size_t block_refs = 32;
  bool materialize = true;
  std::size_t byte_budget = std::size_t(2) << 30;  // 2 GiB
  bool ordered = true;

  void validate() const {
    if (block_rows == 0 || block_refs == 0) {
      throw Error("kernel tensor plan: tile extents must be >= 1");
    }
  }
};

template <class T>
std::size_t kernel_tensor_bytes(std::size_t b, std::size_t s, std::size_t r,
                                std::size_t d) {
  return b * s * r * d * d * sizeof(T);
}

namespace detail {

template <class T>
void fill_kernel_block(const KernelSpec& spec, const Tensor<T>& x,
                       const Tensor<T>& ref, std::size_t s0, std::size_t sb,
                       std::size_t r0, std::size_t rb, T* out) {
  const std::size_t B = x.extent(0), D = x.extent(2);
  const std::size_t S = x.extent(1), R = ref.extent(1);
  const T* px = x.data();
  const T* pr = ref.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t s = 0; s < sb; ++s) {
      const T* xrow = px + (b * S + s0 + s) * D;
      for (std::size_t r = 0; r < rb; ++r) {
        const T* rrow = pr + (b * R + r0 + r) * D;
        T* blk = out + (((b * sb + s) * rb + r) * D) * D;
        for (std::size_t d1 = 0; d1 < D; ++d1) {
          for (std::size_t d2 = 0; d2 < D; ++d2) {
            blk[d1 * D + d2] = kernel_eval(spec, xrow[d1], rrow[d2]);
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Materializes K(X, Ref)[b,s,r,d1,d2] = k(X[b,s,d1], Ref[b,r,d2]).
/// Refuses with a BudgetError when the full tensor would exceed the plan's
/// byte budget; use kernel_tensor_tiles for streamed evaluation instead.
template <class T>
Tensor<T> kernel_tensor(const Tensor<T>& x, const Tensor<T>& ref,
                        const KernelSpec& spec, const KernelTensorPlan& plan) {
  spec.validate();
  plan.validate();
  if (x.rank() != 3 || ref.rank() != 3) {
    throw Error("kernel_tensor: X (B,S,D) and Ref (B,R,D) required");
  }
  if (x.extent(0) != ref.extent(0) || x.extent(2) != ref.extent(2)) {
    throw Error("kernel_tensor: batch/feature extents differ, X " +
                shape_str(x.shape()) + " vs Ref " + shape_str(ref.shape()));
  }
  const std::size_t B = x.extent(0), S = x.extent(1), R = ref.extent(1),
                    D = x.extent(2);
  const std::size_t bytes = kernel_tensor_bytes<T>(B, S, R, D);
  if (bytes > plan.byte_budget) {
    throw BudgetError(bytes, plan.byte_budget);
  }
  Tensor<T> out = Tensor<T>::zeros({B, S, R, D, D});
  detail::fill_kernel_block(spec, x, ref, 0, S, 0, R, out.mutable_data());
  return out;
}

template <class T>
struct KernelTile {
  std::size_t s0 = 0;
  std::size_t r0 = 0;
  Tensor<T> block;  // (B, sb, rb, D, D)
};

/// Streams the kernel tensor tile by tile. In ordered mode tiles arrive
/// sequentially in (s, r) order; otherwise tiles may be produced in parallel
/// and the callback must be thread safe.
template <class T>
void kernel_tensor_tiles(const Tensor<T>& x, const Tensor<T>& ref,
                         const KernelSpec& spec, const KernelTensorPlan& plan,
                         const std::function<void(const KernelTile<T>&)>& fn) {
  spec.validate();
  plan.validate();
  if (x.rank() != 3 || ref.rank() != 3 || x.extent(0) != ref.extent(0) ||
      x.extent(2) != ref.extent(2)) {
    throw Error("kernel_tensor_tiles: X (B,S,D) and Ref (B,R,D) required");
  }
  const std::size_t B = x.extent(0), S = x.extent(1), R = ref.extent(1),
                    D = x.extent(2);
  const std::size_t n_s = (S + plan.block_rows - 1) / plan.block_rows;
  const std::size_t n_r = (R + plan.block_refs - 1) / plan.block_refs;
  auto make_tile = [&](std::size_t si, std::size_t ri) {
    const std::size_t s0 = si * plan.block_rows;
    const std::size_t r0 = ri * plan.block_refs;
    const std::size_t sb = std::min(plan.block_rows, S - s0);
    const std::size_t rb = std::min(plan.block_refs, R - r0);
    KernelTile<T> tile{s0, r0, Tensor<T>::zeros({B, sb, rb, D, D})};
    detail::fill_kernel_block(spec, x, ref, s0, sb, r0, rb,
                              tile.block.mutable_data());
    return tile;
  };
  if (plan.ordered) {
    for (std::size_t si = 0; si < n_s; ++si) {
      for (std::size_t ri = 0; ri < n_r; ++ri) {
        fn(make_tile(si, ri));
      }
    }
  } else {
#pragma omp parallel for collapse(2) schedule(dynamic)
    for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(n_s); ++si) {
      for (std::ptrdiff_t ri = 0; ri < static_cast<std::ptrdiff_t>(n_r);
           ++ri) {
        fn(make_tile(static_cast<std::size_t>(si),
                     static_cast<std::size_t>(ri)));
      }
    }
  }
}

struct KernelStats {
  double mean = 0.0;
  double variance = 0.0;
  double se_mean = 0.0;
  std::size_t trials = 0;
};

/// Monte-Carlo mean/variance of k(x, y) where x and y are coordinates of
/// layer-normalized random vectors of dimension vec_dim.
KernelStats kernel_stats(const KernelSpec& spec, std::size_t trials,
                         std::uint64_t seed, std::size_t vec_dim = 16);

/// Per-head pairwise Gaussian score: input (B,S,n,Dh), output (B,n,S,S) with
/// score[b,h,s,r] = sum_{d1,d2} exp(-(x[b,s,h,d1]-x[b,r,h,d2])^2 / (2 sigma^2)).
/// Differentiable.
template <class T>
Tensor<T> gaussian_score_matrix(const Tensor<T>& xh, T sigma) {
  if (xh.rank() != 4) {
    throw Error("gaussian_score_matrix: (B,S,n,Dh) input required");
  }
  if (!(sigma > T(0))) throw Error("gaussian_score_matrix: sigma must be > 0");
  const std::size_t B = xh.extent(0), S = xh.extent(1), N = xh.extent(2),
                    Dh = xh.extent(3);
  const double inv2s2 = 1.0 / (2.0 * static_cast<double>(sigma) *
                               static_cast<double>(sigma));
  Tensor<T> out = Tensor<T>::zeros({B, N, S, S});
  T* o = out.mutable_data();
  const T* p = xh.data();
  auto xat = [&](std::size_t b, std::size_t s, std::size_t h, std::size_t d) {
    return p[((b * S + s) * N + h) * Dh + d];
  };
#pragma omp parallel for collapse(2) schedule(static)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(B); ++b) {
    for (std::ptrdiff_t h = 0; h < static_cast<std::ptrdiff_t>(N); ++h) {
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t r = 0; r < S; ++r) {
          double acc = 0.0;
          for (std::size_t d1 = 0; d1 < Dh; ++d1) {
            const double xs = static_cast<double>(xat(b, s, h, d1));
            for (std::size_t d2 = 0; d2 < Dh; ++d2) {
              const double diff =
                  xs - static_cast<double>(xat(b, r, h, d2));
              acc += std::exp(-diff * diff * inv2s2);
            }
          }
          o[((static_cast<std::size_t>(b) * N + h) * S + s) * S + r] =
              static_cast<T>(acc);
        }
      }
    }
  }
  if (detail::tracked(xh)) {
    const int pid = xh.grad_id;
    Tensor<T> saved = xh;
    out.grad_id = Tape<T>::current()->record(
        out.shape(), {pid},
        [pid, saved, B, S, N, Dh, inv2s2](const Tensor<T>& g, Tape<T>& t) {
          Tensor<T> gx = Tensor<T>::zeros(saved.shape());
          T* d = gx.mutable_data();
          const T* sgrad = g.data();
          const T* p2 = saved.data();
          auto xat2 = [&](std::size_t b, std::size_t s, std::size_t h,
                          std::size_t dd) {
            return static_cast<double>(p2[((b * S + s) * N + h) * Dh + dd]);
          };
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t h = 0; h < N; ++h) {
              for (std::size_t s = 0; s < S; ++s) {
                for (std::size_t r = 0; r < S; ++r) {
                  const double gv = static_cast<double>(
                      sgrad[((b * N + h) * S + s) * S + r]);
                  if (gv == 0.0) continue;
                  for (std::size_t d1 = 0; d1 < Dh; ++d1) {
                    const double xs = xat2(b, s, h, d1);
                    for (std::size_t d2 = 0; d2 < Dh; ++d2) {
                      const double xr = xat2(b, r, h, d2);
                      const double diff = xs - xr;
                      const double k = std::exp(-diff * diff * inv2s2);
                      const double dk = -2.0 * inv2s2 * diff * k * gv;
                      d[((b * S + s) * N + h) * Dh + d1] +=
                          static_cast<T>(dk);
                      d[((b * S + r) * N + h) * Dh + d2] -=
                          static_cast<T>(dk);
                    }
                  }
                }
              }
            }
          }
          t.accumulate(pid, gx);
        });
  }
  return out;
}

}  // namespace skf
