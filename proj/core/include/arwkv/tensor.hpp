// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "arwkv/errors.hpp"

namespace arwkv {

using Index = std::int64_t;
using Shape = std::vector<Index>;

std::string shape_str(const Shape& shape);
Index shape_numel(const Shape& shape);

/// Row-major strides for a contiguous buffer of the given shape.
Shape contiguous_strides(const Shape& shape);

/// Broadcast two shapes with trailing-dimension alignment. Throws DimensionError.
Shape broadcast_shapes(const Shape& a, const Shape& b);

/// Dense row-major array. Value semantics; copying copies the buffer.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const;
  Index numel() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  T& at(std::initializer_list<Index> idx);
  const T& at(std::initializer_list<Index> idx) const;

  /// Same buffer, new shape with equal element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  /// Scalar value of a single-element tensor.
  T item() const;

  bool all_finite() const;
  void fill(T value);

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Index flat_index(std::initializer_list<Index> idx) const;

  Shape shape_;
  std::vector<T> data_;
};

/// Elementwise maximum absolute difference. Shapes must match.
template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

/// Element-wise bitwise equality, including shape.
template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace arwkv
