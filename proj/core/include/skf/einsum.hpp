#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "skf/tensor.hpp"

namespace skf {

/// Parsed two-operand Einstein summation spec ("bij,bjk->bik").
/// Letters are ordered output-first (in output order), contracted letters
/// after; per-letter strides are 0 where an operand lacks the letter.
struct ContractPlan {
  std::string a_idx;
  std::string b_idx;
  std::string out_idx;

  std::vector<char> letters;
  std::vector<std::size_t> extents;
  std::size_t out_count = 0;
  Shape out_shape;

  std::vector<std::size_t> a_stride;
  std::vector<std::size_t> b_stride;
  std::vector<std::size_t> out_stride;

  // fast-path classification, indices into `letters`
  std::vector<std::size_t> batch_ix, m_ix, n_ix, k_ix, a_orphan_ix, b_orphan_ix;

  std::size_t work() const {
    std::size_t w = 1;
    for (std::size_t e : extents) w *= e;
    return w;
  }
};

ContractPlan make_contract_plan(std::string_view spec, const Shape& a,
                                const Shape& b);

enum class ContractPath { automatic, loopnest, fastpath };

namespace detail {

/// C(M,N) += A(M,K) * B(K,N) for BB independent slices, row-major.
template <class T>
void batched_matmul_acc(const T* a, const T* b, T* c, std::size_t bb,
                        std::size_t m, std::size_t k, std::size_t n) {
  const bool par = bb * m * k * n > 32768;
#pragma omp parallel for collapse(2) schedule(static) if (par)
  for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(bb); ++s) {
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
      const T* arow = a + (static_cast<std::size_t>(s) * m +
                           static_cast<std::size_t>(i)) * k;
      const T* bmat = b + static_cast<std::size_t>(s) * k * n;
      T* crow = c + (static_cast<std::size_t>(s) * m +
                     static_cast<std::size_t>(i)) * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = bmat + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

/// Walks the letters in `ix` order (row-major over their extents) and copies
/// src[offset(letter coords)] into dst linearly.
template <class T>
void pack_letters(const T* src, const ContractPlan& p,
                  const std::vector<std::size_t>& ix,
                  const std::vector<std::size_t>& stride, T* dst) {
  std::size_t total = 1;
  for (std::size_t i : ix) total *= p.extents[i];
  std::vector<std::size_t> coords(ix.size(), 0);
  std::size_t off = 0;
  for (std::size_t linear = 0; linear < total; ++linear) {
    dst[linear] = src[off];
    for (std::size_t d = ix.size(); d-- > 0;) {
      std::size_t li = ix[d];
      ++coords[d];
      off += stride[li];
      if (coords[d] < p.extents[li]) break;
      off -= p.extents[li] * stride[li];
      coords[d] = 0;
    }
  }
}

template <class T>
void unpack_letters(const T* src, const ContractPlan& p,
                    const std::vector<std::size_t>& ix,
                    const std::vector<std::size_t>& stride, T* dst) {
  std::size_t total = 1;
  for (std::size_t i : ix) total *= p.extents[i];
  std::vector<std::size_t> coords(ix.size(), 0);
  std::size_t off = 0;
  for (std::size_t linear = 0; linear < total; ++linear) {
    dst[off] = src[linear];
    for (std::size_t d = ix.size(); d-- > 0;) {
      std::size_t li = ix[d];
      ++coords[d];
      off += stride[li];
      if (coords[d] < p.extents[li]) break;
      off -= p.extents[li] * stride[li];
      coords[d] = 0;
    }
  }
}

/// Sums an operand over its orphan letters, producing data laid out over the
/// remaining letters in their original operand order.
template <class T>
std::vector<T> reduce_orphans(const T* src, const ContractPlan& p,
                              const std::string& op_idx,
                              const std::vector<std::size_t>& stride,
                              const std::vector<std::size_t>& orphan_ix,
                              std::vector<std::size_t>& kept_ix_out) {
  std::vector<bool> is_orphan(p.letters.size(), false);
  for (std::size_t i : orphan_ix) is_orphan[i] = true;

  kept_ix_out.clear();
  for (char c : op_idx) {
    std::size_t li = 0;
    while (p.letters[li] != c) ++li;
    if (!is_orphan[li]) kept_ix_out.push_back(li);
  }

  std::size_t kept_total = 1;
  for (std::size_t i : kept_ix_out) kept_total *= p.extents[i];
  std::vector<T> reduced(kept_total, T{});

  // odometer over all operand letters; accumulate into the kept layout
  std::vector<std::size_t> all_ix;
  for (char c : op_idx) {
    std::size_t li = 0;
    while (p.letters[li] != c) ++li;
    all_ix.push_back(li);
  }
  std::vector<std::size_t> kept_stride_in_reduced(p.letters.size(), 0);
  {
    std::size_t s = 1;
    for (std::size_t d = kept_ix_out.size(); d-- > 0;) {
      kept_stride_in_reduced[kept_ix_out[d]] = s;
      s *= p.extents[kept_ix_out[d]];
    }
  }
  std::size_t total = 1;
  for (std::size_t i : all_ix) total *= p.extents[i];
  std::vector<std::size_t> coords(all_ix.size(), 0);
  std::size_t src_off = 0, dst_off = 0;
  for (std::size_t linear = 0; linear < total; ++linear) {
    reduced[dst_off] += src[src_off];
    for (std::size_t d = all_ix.size(); d-- > 0;) {
      std::size_t li = all_ix[d];
      ++coords[d];
      src_off += stride[li];
      dst_off += kept_stride_in_reduced[li];
      if (coords[d] < p.extents[li]) break;
      src_off -= p.extents[li] * stride[li];
      dst_off -= p.extents[li] * kept_stride_in_reduced[li];
      coords[d] = 0;
    }
  }
  return reduced;
}

template <class T>
void contract_loopnest(const ContractPlan& p, const T* a, const T* b, T* out) {
  const std::size_t out_n = numel(p.out_shape);
  std::size_t contracted = 1;
  for (std::size_t i = p.out_count; i < p.letters.size(); ++i) {
    contracted *= p.extents[i];
  }
  std::vector<std::size_t> out_decode(p.out_count, 1);
  {
    std::size_t s = 1;
    for (std::size_t i = p.out_count; i-- > 0;) {
      out_decode[i] = s;
      s *= p.extents[i];
    }
  }
  const bool par = out_n * contracted > 32768;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t os = 0; os < static_cast<std::ptrdiff_t>(out_n); ++os) {
    std::size_t rem = static_cast<std::size_t>(os);
    std::size_t off_a = 0, off_b = 0;
    for (std::size_t i = 0; i < p.out_count; ++i) {
      const std::size_t coord = rem / out_decode[i];
      rem %= out_decode[i];
      off_a += coord * p.a_stride[i];
      off_b += coord * p.b_stride[i];
    }
    T acc{};
    std::size_t coords[32] = {0};
    std::size_t oa = off_a, ob = off_b;
    for (std::size_t c = 0; c < contracted; ++c) {
      acc += a[oa] * b[ob];
      for (std::size_t i = p.letters.size(); i-- > p.out_count;) {
        ++coords[i];
        oa += p.a_stride[i];
        ob += p.b_stride[i];
        if (coords[i] < p.extents[i]) break;
        oa -= p.extents[i] * p.a_stride[i];
        ob -= p.extents[i] * p.b_stride[i];
        coords[i] = 0;
      }
    }
    out[os] = acc;
  }
}

template <class T>
void contract_fastpath(const ContractPlan& p, const T* a_in, const T* b_in,
                       T* out) {
  const T* a = a_in;
  const T* b = b_in;
  std::vector<T> a_reduced, b_reduced;
  std::vector<std::size_t> a_stride = p.a_stride;
  std::vector<std::size_t> b_stride = p.b_stride;

  if (!p.a_orphan_ix.empty()) {
    std::vector<std::size_t> kept;
    a_reduced = reduce_orphans(a_in, p, p.a_idx, p.a_stride, p.a_orphan_ix, kept);
    a = a_reduced.data();
    std::fill(a_stride.begin(), a_stride.end(), 0);
    std::size_t s = 1;
    for (std::size_t d = kept.size(); d-- > 0;) {
      a_stride[kept[d]] = s;
      s *= p.extents[kept[d]];
    }
  }
  if (!p.b_orphan_ix.empty()) {
    std::vector<std::size_t> kept;
    b_reduced = reduce_orphans(b_in, p, p.b_idx, p.b_stride, p.b_orphan_ix, kept);
    b = b_reduced.data();
    std::fill(b_stride.begin(), b_stride.end(), 0);
    std::size_t s = 1;
    for (std::size_t d = kept.size(); d-- > 0;) {
      b_stride[kept[d]] = s;
      s *= p.extents[kept[d]];
    }
  }

  std::size_t bb = 1, m = 1, k = 1, n = 1;
  for (std::size_t i : p.batch_ix) bb *= p.extents[i];
  for (std::size_t i : p.m_ix) m *= p.extents[i];
  for (std::size_t i : p.k_ix) k *= p.extents[i];
  for (std::size_t i : p.n_ix) n *= p.extents[i];

  std::vector<std::size_t> a_pack_ix, b_pack_ix, c_pack_ix;
  for (std::size_t i : p.batch_ix) a_pack_ix.push_back(i);
  for (std::size_t i : p.m_ix) a_pack_ix.push_back(i);
  for (std::size_t i : p.k_ix) a_pack_ix.push_back(i);
  for (std::size_t i : p.batch_ix) b_pack_ix.push_back(i);
  for (std::size_t i : p.k_ix) b_pack_ix.push_back(i);
  for (std::size_t i : p.n_ix) b_pack_ix.push_back(i);
  for (std::size_t i : p.batch_ix) c_pack_ix.push_back(i);
  for (std::size_t i : p.m_ix) c_pack_ix.push_back(i);
  for (std::size_t i : p.n_ix) c_pack_ix.push_back(i);

  std::vector<T> a_packed(bb * m * k);
  std::vector<T> b_packed(bb * k * n);
  std::vector<T> c_packed(bb * m * n, T{});
  pack_letters(a, p, a_pack_ix, a_stride, a_packed.data());
  pack_letters(b, p, b_pack_ix, b_stride, b_packed.data());
  batched_matmul_acc(a_packed.data(), b_packed.data(), c_packed.data(), bb, m,
                     k, n);
  unpack_letters(c_packed.data(), p, c_pack_ix, p.out_stride, out);
}

}  // namespace detail

template <class T>
Tensor<T> contract_execute(const ContractPlan& plan, const Tensor<T>& a,
                           const Tensor<T>& b,
                           ContractPath path = ContractPath::automatic) {
  Tensor<T> out = Tensor<T>::zeros(plan.out_shape);
  if (out.size() == 0) return out;
  const bool fast = path == ContractPath::fastpath ||
                    (path == ContractPath::automatic && plan.work() >= 4096);
  if (fast) {
    detail::contract_fastpath(plan, a.data(), b.data(), out.mutable_data());
  } else {
    detail::contract_loopnest(plan, a.data(), b.data(), out.mutable_data());
  }
  return out;
}

}  // namespace skf
