// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "arlab/core/error.hpp"
#include "arlab/core/rng.hpp"

namespace arlab {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor. Values live in a std::vector so copies are deep.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    ARLAB_REQUIRE(static_cast<std::int64_t>(data_.size()) == shape_numel(shape_),
                  "tensor data length does not match shape " + shape_str(shape_));
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor scalar(T v) { return BasicTensor(Shape{1}, std::vector<T>{v}); }

  /// Gaussian fill with standard deviation `stddev`.
  static BasicTensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
    BasicTensor t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<T>(rng.normal() * stddev);
    return t;
  }

  static BasicTensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    BasicTensor t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * shape_.back() + c)]; }
  const T& at(std::int64_t r, std::int64_t c) const {
    return data_[static_cast<std::size_t>(r * shape_.back() + c)];
  }

  /// Row `r` of the tensor viewed as [numel/last, last].
  std::span<T> row(std::int64_t r) {
    const auto w = static_cast<std::size_t>(shape_.back());
    return std::span<T>(data_).subspan(static_cast<std::size_t>(r) * w, w);
  }
  std::span<const T> row(std::int64_t r) const {
    const auto w = static_cast<std::size_t>(shape_.back());
    return std::span<const T>(data_).subspan(static_cast<std::size_t>(r) * w, w);
  }

  BasicTensor reshaped(Shape shape) const {
    ARLAB_REQUIRE(shape_numel(shape) == shape_numel(shape_),
                  "reshape " + shape_str(shape_) + " -> " + shape_str(shape) + " changes element count");
    return BasicTensor(std::move(shape), data_);
  }

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    for (const auto& v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool requires_grad = false;

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    ARLAB_REQUIRE(!shape_.empty(), "tensor shape must have at least one dimension");
    for (auto d : shape_) ARLAB_REQUIRE(d > 0, "tensor dimensions must be positive, got " + shape_str(shape_));
  }

  Shape shape_{1};
  std::vector<T> data_ = std::vector<T>(1, T{0});
};

using Tensor = BasicTensor<float>;

}  // namespace arlab
