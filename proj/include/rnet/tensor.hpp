#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rnet/error.hpp"

namespace rnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
template <typename Scalar>
using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

/// Dense row-major n-dimensional array.
///
/// Storage is a flat vector whose length always equals the product of the
/// shape. Eigen views (`array()`, `matrix()`) alias the storage without
/// copying, so kernels can be written as Eigen expressions.
template <typename Scalar>
class BasicTensor {
 public:
  using value_type = Scalar;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), Scalar(0)) {
    check_dims();
  }

  BasicTensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

  static BasicTensor full(Shape shape, Scalar value) {
    BasicTensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static BasicTensor scalar(Scalar value) { return BasicTensor(Shape{}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<Scalar> data() { return data_; }
  std::span<const Scalar> data() const { return data_; }
  const std::vector<Scalar>& values() const { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  const Scalar& operator[](std::size_t i) const { return data_[i]; }

  /// Single element of a rank-0 or size-1 tensor.
  Scalar item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  ArrayMap<Scalar> array() { return ArrayMap<Scalar>(data_.data(), Eigen::Index(data_.size())); }
  ConstArrayMap<Scalar> array() const {
    return ConstArrayMap<Scalar>(data_.data(), Eigen::Index(data_.size()));
  }

  /// Row-major matrix view with an explicit row count; columns are inferred.
  MatrixMap<Scalar> matrix(std::size_t rows) {
    return MatrixMap<Scalar>(data_.data(), Eigen::Index(rows), Eigen::Index(cols_for(rows)));
  }
  ConstMatrixMap<Scalar> matrix(std::size_t rows) const {
    return ConstMatrixMap<Scalar>(data_.data(), Eigen::Index(rows), Eigen::Index(cols_for(rows)));
  }
  /// Matrix view of a rank-2 tensor.
  MatrixMap<Scalar> matrix() { return matrix(rank2_rows()); }
  ConstMatrixMap<Scalar> matrix() const { return matrix(rank2_rows()); }

  BasicTensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  /// Copy of samples [begin, end) along the leading axis.
  BasicTensor slice(std::size_t begin, std::size_t end) const {
    if (rank() == 0 || begin > end || end > shape_[0]) {
      throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                       ") out of range for " + shape_string(shape_));
    }
    const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
    Shape s = shape_;
    s[0] = end - begin;
    return BasicTensor(std::move(s), std::vector<Scalar>(data_.begin() + std::ptrdiff_t(begin * stride),
                                                         data_.begin() + std::ptrdiff_t(end * stride)));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  /// Bitwise equality of shape and every element.
  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ &&
           (a.data_.empty() || std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(Scalar)) == 0);
  }

 private:
  void check_dims() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
  }
  std::size_t cols_for(std::size_t rows) const {
    if (rows == 0 || data_.size() % rows != 0) {
      throw ShapeError("cannot view " + shape_string(shape_) + " as matrix with " + std::to_string(rows) + " rows");
    }
    return data_.size() / rows;
  }
  std::size_t rank2_rows() const {
    if (rank() != 2) throw ShapeError("expected rank-2 tensor, got " + shape_string(shape_));
    return shape_[0];
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

using Tensor = BasicTensor<double>;

/// Elementwise maximum absolute difference of two same-shape tensors.
template <typename Scalar>
Scalar max_abs_diff(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff shapes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  if (a.size() == 0) return Scalar(0);
  return (a.array() - b.array()).abs().maxCoeff();
}

}  // namespace rnet
