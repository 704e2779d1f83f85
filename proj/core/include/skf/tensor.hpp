#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace skf {

class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Thrown when materializing a kernel tensor would exceed the byte budget.
/// Carries the size estimate so callers can report it instead of crashing.
class BudgetError : public Error {
public:
  BudgetError(std::size_t estimated, std::size_t budget)
      : Error("kernel tensor materialization refused: estimated " +
              std::to_string(estimated) + " bytes exceeds budget of " +
              std::to_string(budget) + " bytes"),
        estimated_bytes(estimated),
        budget_bytes(budget) {}

  std::size_t estimated_bytes;
  std::size_t budget_bytes;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

inline std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  return strides;
}

/// Dense row-major tensor. The buffer is shared between copies and treated as
/// immutable once an operation has produced it; mutable_data() is reserved for
/// owners that know no other reader is live (parameter updates, test setup).
/// grad_id links the tensor to a node of the active Tape, -1 means untracked.
template <class T>
class Tensor {
public:
  Tensor() : shape_{}, data_(std::make_shared<std::vector<T>>(1, T{})) {}

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(std::move(values))) {
    if (numel(shape_) != data_->size()) {
      throw Error("tensor data length " + std::to_string(data_->size()) +
                  " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor zeros(Shape shape) {
    std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T{}));
  }

  static Tensor full(Shape shape, T value) {
    std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }

  static Tensor scalar(T value) { return Tensor({}, std::vector<T>{value}); }

  static Tensor eye(std::size_t n) {
    Tensor out = zeros({n, n});
    T* d = out.mutable_data();
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = T(1);
    return out;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }

  std::size_t extent(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw Error("axis " + std::to_string(axis) + " out of range for shape " +
                  shape_str(shape_));
    }
    return shape_[axis];
  }

  const T* data() const { return data_->data(); }
  T* mutable_data() { return data_->data(); }
  std::span<const T> values() const { return {data_->data(), data_->size()}; }

  T item() const {
    if (data_->size() != 1) {
      throw Error("item() requires a one-element tensor, shape is " +
                  shape_str(shape_));
    }
    return (*data_)[0];
  }

  T at(std::span<const std::size_t> idx) const {
    return (*data_)[flat_index(idx)];
  }

  T at(std::initializer_list<std::size_t> idx) const {
    return at(std::span<const std::size_t>(idx.begin(), idx.size()));
  }

  void set(std::initializer_list<std::size_t> idx, T value) {
    std::span<const std::size_t> s(idx.begin(), idx.size());
    (*data_)[flat_index(s)] = value;
  }

  /// Raw reshape sharing the buffer; element count must match. Use
  /// ops::reshape when gradient tracking matters.
  Tensor with_shape(Shape shape) const {
    if (numel(shape) != data_->size()) {
      throw Error("cannot view " + shape_str(shape_) + " as " +
                  shape_str(shape));
    }
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  Tensor clone() const { return Tensor(shape_, *data_); }

  int grad_id = -1;

private:
  std::size_t flat_index(std::span<const std::size_t> idx) const {
    if (idx.size() != shape_.size()) {
      throw Error("index rank " + std::to_string(idx.size()) +
                  " does not match tensor rank " +
                  std::to_string(shape_.size()));
    }
    std::size_t flat = 0;
    std::size_t stride = 1;
    for (std::size_t k = shape_.size(); k-- > 0;) {
      if (idx[k] >= shape_[k]) {
        throw Error("index " + std::to_string(idx[k]) +
                    " out of bounds for axis " + std::to_string(k) +
                    " of shape " + shape_str(shape_));
      }
      flat += idx[k] * stride;
      stride *= shape_[k];
    }
    return flat;
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
};

template <class T>
Tensor<T> uniform_tensor(Shape shape, T lo, T hi, std::mt19937_64& rng) {
  std::size_t n = numel(shape);
  std::vector<T> values(n);
  std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                              static_cast<double>(hi));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(values));
}

template <class T>
Tensor<T> normal_tensor(Shape shape, T mean, T stddev, std::mt19937_64& rng) {
  std::size_t n = numel(shape);
  std::vector<T> values(n);
  std::normal_distribution<double> dist(static_cast<double>(mean),
                                        static_cast<double>(stddev));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(values));
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.values()) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

template <class T>
void require_finite(const Tensor<T>& t, const char* context) {
  if (!all_finite(t)) {
    throw Error(std::string("non-finite values produced by ") + context);
  }
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw Error("max_abs_diff shape mismatch: " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  const T* pa = a.data();
  const T* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(pa[i]) -
                             static_cast<double>(pb[i])));
  }
  return m;
}

}  // namespace skf
