#include "skf/einsum.hpp"

#include <algorithm>
#include <array>

namespace skf {

namespace {

bool is_index_letter(char c) { return c >= 'a' && c <= 'z'; }

void check_operand_indices(const std::string& idx, const Shape& shape,
                           const char* which, std::string_view spec) {
  if (idx.size() != shape.size()) {
    throw Error("contract spec '" + std::string(spec) + "': operand " + which +
                " has " + std::to_string(idx.size()) + " indices but rank " +
                std::to_string(shape.size()));
  }
  for (char c : idx) {
    if (!is_index_letter(c)) {
      throw Error("contract spec '" + std::string(spec) +
                  "': invalid index character '" + std::string(1, c) + "'");
    }
  }
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = i + 1; j < idx.size(); ++j) {
      if (idx[i] == idx[j]) {
        throw Error("contract spec '" + std::string(spec) +
                    "': repeated index '" + std::string(1, idx[i]) +
                    "' within operand " + which);
      }
    }
  }
}

}  // namespace

ContractPlan make_contract_plan(std::string_view spec, const Shape& a,
                                const Shape& b) {
  ContractPlan p;
  const auto arrow = spec.find("->");
  if (arrow == std::string_view::npos) {
    throw Error("contract spec '" + std::string(spec) +
                "': missing '->' output marker");
  }
  const std::string_view lhs = spec.substr(0, arrow);
  p.out_idx = std::string(spec.substr(arrow + 2));
  const auto comma = lhs.find(',');
  if (comma == std::string_view::npos || lhs.find(',', comma + 1) != std::string_view::npos) {
    throw Error("contract spec '" + std::string(spec) +
                "': expected exactly two comma-separated operands");
  }
  p.a_idx = std::string(lhs.substr(0, comma));
  p.b_idx = std::string(lhs.substr(comma + 1));

  check_operand_indices(p.a_idx, a, "A", spec);
  check_operand_indices(p.b_idx, b, "B", spec);

  std::array<std::size_t, 26> extent_of;
  extent_of.fill(0);
  std::array<bool, 26> in_a{}, in_b{}, in_out{};

  for (std::size_t i = 0; i < p.a_idx.size(); ++i) {
    extent_of[p.a_idx[i] - 'a'] = a[i];
    in_a[p.a_idx[i] - 'a'] = true;
  }
  for (std::size_t i = 0; i < p.b_idx.size(); ++i) {
    const std::size_t li = p.b_idx[i] - 'a';
    if (in_a[li] && extent_of[li] != b[i]) {
      throw Error("contract: extent mismatch on shared index '" +
                  std::string(1, p.b_idx[i]) + "': " +
                  std::to_string(extent_of[li]) + " vs " +
                  std::to_string(b[i]));
    }
    extent_of[li] = b[i];
    in_b[li] = true;
  }
  for (std::size_t i = 0; i < p.out_idx.size(); ++i) {
    const char c = p.out_idx[i];
    if (!is_index_letter(c)) {
      throw Error("contract spec '" + std::string(spec) +
                  "': invalid index character '" + std::string(1, c) + "'");
    }
    const std::size_t li = c - 'a';
    if (!in_a[li] && !in_b[li]) {
      throw Error("contract: output index '" + std::string(1, c) +
                  "' absent from both inputs");
    }
    if (in_out[li]) {
      throw Error("contract spec '" + std::string(spec) +
                  "': repeated output index '" + std::string(1, c) + "'");
    }
    in_out[li] = true;
  }

  // letters: output first (output order), then contracted (a order then b order)
  for (char c : p.out_idx) p.letters.push_back(c);
  p.out_count = p.letters.size();
  for (char c : p.a_idx) {
    if (!in_out[c - 'a']) p.letters.push_back(c);
  }
  for (char c : p.b_idx) {
    if (!in_out[c - 'a'] && !in_a[c - 'a']) p.letters.push_back(c);
  }

  for (char c : p.letters) p.extents.push_back(extent_of[c - 'a']);
  for (char c : p.out_idx) p.out_shape.push_back(extent_of[c - 'a']);

  const auto strides_a = row_major_strides(a);
  const auto strides_b = row_major_strides(b);
  const auto strides_out = row_major_strides(p.out_shape);
  p.a_stride.assign(p.letters.size(), 0);
  p.b_stride.assign(p.letters.size(), 0);
  p.out_stride.assign(p.letters.size(), 0);
  for (std::size_t li = 0; li < p.letters.size(); ++li) {
    const char c = p.letters[li];
    const auto ia = p.a_idx.find(c);
    if (ia != std::string::npos) p.a_stride[li] = strides_a[ia];
    const auto ib = p.b_idx.find(c);
    if (ib != std::string::npos) p.b_stride[li] = strides_b[ib];
    const auto io = p.out_idx.find(c);
    if (io != std::string::npos) p.out_stride[li] = strides_out[io];
  }

  for (std::size_t li = 0; li < p.letters.size(); ++li) {
    const char c = p.letters[li];
    const bool a_has = in_a[c - 'a'], b_has = in_b[c - 'a'],
               o_has = in_out[c - 'a'];
    if (a_has && b_has && o_has) {
      p.batch_ix.push_back(li);
    } else if (a_has && o_has) {
      p.m_ix.push_back(li);
    } else if (b_has && o_has) {
      p.n_ix.push_back(li);
    } else if (a_has && b_has) {
      p.k_ix.push_back(li);
    } else if (a_has) {
      p.a_orphan_ix.push_back(li);
    } else {
      p.b_orphan_ix.push_back(li);
    }
  }
  return p;
}

}  // namespace skf
