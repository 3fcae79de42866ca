#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lwm {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense row-major real tensor. The last dimension is the fastest-varying
/// one; most operations view the data as a (numel/lastdim, lastdim) matrix.
template <typename S>
class Tensor {
 public:
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;
  using MatrixMap =
      Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap = Eigen::Map<
      const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.setZero(shape_numel(shape_));
  }
  Tensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw std::invalid_argument("tensor data does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, S value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_[static_cast<size_t>(i)]; }
  Index numel() const { return data_.size(); }
  Index last_dim() const { return shape_.empty() ? 1 : shape_.back(); }
  Index rows() const { return last_dim() == 0 ? 0 : numel() / last_dim(); }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  S& operator[](Index i) { return data_[i]; }
  S operator[](Index i) const { return data_[i]; }

  /// View as (numel/lastdim, lastdim) row-major matrix.
  MatrixMap mat() { return MatrixMap(data_.data(), rows(), last_dim()); }
  ConstMatrixMap mat() const { return ConstMatrixMap(data_.data(), rows(), last_dim()); }

  /// View with an explicit row count (cols = numel / rows).
  MatrixMap mat(Index r) { return MatrixMap(data_.data(), r, numel() / r); }
  ConstMatrixMap mat(Index r) const {
    return ConstMatrixMap(data_.data(), r, numel() / r);
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw std::invalid_argument("reshape numel mismatch " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (Index i = 0; i < data_.size(); ++i)
      if (!std::isfinite(static_cast<double>(data_[i]))) return false;
    return true;
  }

  template <typename T>
  Tensor<T> cast() const {
    typename Tensor<T>::Array out = data_.template cast<T>();
    return Tensor<T>(shape_, std::move(out));
  }

 private:
  Shape shape_;
  Array data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace lwm
