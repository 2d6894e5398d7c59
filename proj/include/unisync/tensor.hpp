#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unisync/error.hpp"

namespace unisync {

using Dims = std::vector<std::size_t>;

inline std::size_t dims_product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor. Value type; copies are deep.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Dims dims, T fill = T(0)) : dims_(std::move(dims)) {
    for (auto d : dims_) UNISYNC_CHECK(d > 0, ErrorKind::shape, "tensor dims must be positive, got " + dims_to_string(dims_));
    data_.assign(dims_product(dims_), fill);
  }

  BasicTensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    for (auto d : dims_) UNISYNC_CHECK(d > 0, ErrorKind::shape, "tensor dims must be positive, got " + dims_to_string(dims_));
    UNISYNC_CHECK(data_.size() == dims_product(dims_), ErrorKind::length_mismatch,
                  "data length " + std::to_string(data_.size()) + " does not match dims " + dims_to_string(dims_));
  }

  BasicTensor(Dims dims, std::initializer_list<T> values) : BasicTensor(std::move(dims), std::vector<T>(values)) {}

  const Dims& dims() const noexcept { return dims_; }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t ndim() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, new dims of equal element count.
  BasicTensor reshaped(Dims dims) const {
    UNISYNC_CHECK(dims_product(dims) == size(), ErrorKind::shape,
                  "cannot reshape " + dims_to_string(dims_) + " to " + dims_to_string(dims));
    return BasicTensor(std::move(dims), data_);
  }

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(dims_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  Dims dims_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

/// Bitwise equality, so that -0.0 != 0.0 and NaN payloads compare by bits.
template <class T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.dims() != b.dims()) return false;
  return std::equal(a.values().begin(), a.values().end(), b.values().begin(), [](T x, T y) {
    return std::memcmp(&x, &y, sizeof(T)) == 0;
  });
}

}  // namespace unisync
