#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vaereg/errors.hpp"

namespace vaereg {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MatrixMap = Eigen::Map<Matrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const Matrix<T>>;

using Shape = std::vector<std::size_t>;

// Eigen picks its vectorized reduction split from the pointer's alignment, so
// storage is allocated at Eigen's maximum alignment to keep results identical
// across allocations.
template <typename T>
using Storage = std::vector<T, Eigen::aligned_allocator<T>>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

// Dense row-major tensor. Image batches are NHWC: (batch, height, width, channels).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, Storage<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_size();
  }
  Tensor(Shape shape, const std::vector<T>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_size();
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  Storage<T>& values() noexcept { return data_; }
  const Storage<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // Element (n, h, w, c) of a rank-4 tensor.
  T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
    return data_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
  }
  const T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return data_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
  }

  // Rows = first dimension, columns = product of the rest.
  MatrixMap<T> as_matrix() { return MatrixMap<T>(data(), rows(), cols()); }
  ConstMatrixMap<T> as_matrix() const { return ConstMatrixMap<T>(data(), rows(), cols()); }
  // Rows = product of all but the last dimension, columns = last dimension.
  MatrixMap<T> as_pixels() { return MatrixMap<T>(data(), size() / shape_.back(), shape_.back()); }
  ConstMatrixMap<T> as_pixels() const {
    return ConstMatrixMap<T>(data(), size() / shape_.back(), shape_.back());
  }

  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size())
      throw ArgumentError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    shape_ = std::move(shape);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T{0}); }

  // Slice [first, first + count) along the leading dimension.
  Tensor slice(std::size_t first, std::size_t count) const {
    const std::size_t stride = shape_.empty() || shape_[0] == 0 ? 0 : size() / shape_[0];
    if (first + count > shape_.at(0)) throw ArgumentError("tensor slice out of range");
    Shape s = shape_;
    s[0] = count;
    return Tensor(std::move(s), Storage<T>(data_.begin() + first * stride,
                                               data_.begin() + (first + count) * stride));
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, Storage<U>(data_.begin(), data_.end()));
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_size() const {
    if (data_.size() != shape_size(shape_))
      throw ArgumentError("tensor data size " + std::to_string(data_.size()) +
                          " does not match shape " + shape_str(shape_));
  }

  std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  std::size_t cols() const { return shape_.empty() || shape_[0] == 0 ? 0 : size() / shape_[0]; }

  Shape shape_;
  Storage<T> data_;
};

// Concatenate along the leading dimension.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
  if (items.empty()) throw ArgumentError("stack of zero tensors");
  Shape inner = items.front().shape();
  Shape out{items.size()};
  out.insert(out.end(), inner.begin(), inner.end());
  Storage<T> data;
  data.reserve(shape_size(out));
  for (const auto& t : items) {
    if (t.shape() != inner)
      throw ArgumentError("stack: shape " + shape_str(t.shape()) + " != " + shape_str(inner));
    data.insert(data.end(), t.values().begin(), t.values().end());
  }
  return Tensor<T>(std::move(out), std::move(data));
}

}  // namespace vaereg
