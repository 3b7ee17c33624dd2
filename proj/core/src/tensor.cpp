// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "arwkv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace arwkv {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

Shape contiguous_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (Index i = static_cast<Index>(shape.size()) - 2; i >= 0; --i)
    strides[i] = strides[i + 1] * shape[i + 1];
  return strides;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const Index da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const Index db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw DimensionError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    out[i] = da == 1 ? db : da;
  }
  return out;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<Index>(data_.size()))
    throw DimensionError("shape " + shape_str(shape_) + " does not match buffer of " +
                         std::to_string(data_.size()) + " elements");
}

template <typename T>
Index Tensor<T>::dim(Index axis) const {
  const Index r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  return shape_[static_cast<std::size_t>(axis)];
}

template <typename T>
Index Tensor<T>::flat_index(std::initializer_list<Index> idx) const {
  if (static_cast<Index>(idx.size()) != rank())
    throw DimensionError("index rank " + std::to_string(idx.size()) + " != tensor rank " + std::to_string(rank()));
  Index flat = 0;
  std::size_t i = 0;
  for (Index v : idx) {
    if (v < 0 || v >= shape_[i]) throw DimensionError("index out of range for shape " + shape_str(shape_));
    flat = flat * shape_[i] + v;
    ++i;
  }
  return flat;
}

template <typename T>
T& Tensor<T>::at(std::initializer_list<Index> idx) {
  return data_[static_cast<std::size_t>(flat_index(idx))];
}

template <typename T>
const T& Tensor<T>::at(std::initializer_list<Index> idx) const {
  return data_[static_cast<std::size_t>(flat_index(idx))];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
  if (shape_numel(shape) != numel())
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  shape_ = std::move(shape);
  return std::move(*this);
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  T m = 0;
  for (Index i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return a.numel() == 0 || std::memcmp(a.ptr(), b.ptr(), sizeof(T) * static_cast<std::size_t>(a.numel())) == 0;
}

template class Tensor<float>;
template class Tensor<double>;
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);
template bool bit_equal(const Tensor<float>&, const Tensor<float>&);
template bool bit_equal(const Tensor<double>&, const Tensor<double>&);

}  // namespace arwkv
