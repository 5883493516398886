#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace microcl {

template <typename Scalar>
using MatrixR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);

inline Eigen::Index shape_size(const Shape& shape) {
  Eigen::Index n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

/// Dense row-major N-dimensional array. float for training, double for
/// gradient checks.
template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(VectorX<Scalar>::Zero(shape_size(shape_))) {}
  Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)), data_(VectorX<Scalar>::Constant(shape_size(shape_), fill)) {}
  Tensor(Shape shape, const std::vector<Scalar>& values) : shape_(std::move(shape)) {
    if (shape_size(shape_) != static_cast<Eigen::Index>(values.size()))
      throw std::invalid_argument("tensor value count does not match shape " + shape_string(shape_));
    data_ = Eigen::Map<const VectorX<Scalar>>(values.data(), values.size());
  }
  Tensor(Shape shape, VectorX<Scalar> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_size(shape_) != data_.size())
      throw std::invalid_argument("tensor value count does not match shape " + shape_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw std::out_of_range("tensor axis out of range");
    return shape_[axis];
  }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  VectorX<Scalar>& vec() { return data_; }
  const VectorX<Scalar>& vec() const { return data_; }
  std::span<Scalar> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const { return {data_.data(), static_cast<std::size_t>(data_.size())}; }

  Scalar& operator[](Eigen::Index i) { return data_[i]; }
  Scalar operator[](Eigen::Index i) const { return data_[i]; }

  /// Row-major matrix view: leading dimension vs the product of the rest.
  Eigen::Map<MatrixR<Scalar>> matrix() { return {data(), rows(), cols()}; }
  Eigen::Map<const MatrixR<Scalar>> matrix() const { return {data(), rows(), cols()}; }

  /// View of one leading-axis slice as a (dim1, rest) matrix, e.g. (C, H*W) for image n.
  Eigen::Map<MatrixR<Scalar>> slice_matrix(int n) {
    const auto [r, c] = slice_dims();
    return {data() + n * r * c, r, c};
  }
  Eigen::Map<const MatrixR<Scalar>> slice_matrix(int n) const {
    const auto [r, c] = slice_dims();
    return {data() + n * r * c, r, c};
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>().eval());
  }

  void set_zero() { data_.setZero(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Eigen::Index rows() const { return shape_.empty() ? 1 : shape_[0]; }
  Eigen::Index cols() const { return shape_.empty() ? data_.size() : (rows() == 0 ? 0 : data_.size() / rows()); }
  std::pair<Eigen::Index, Eigen::Index> slice_dims() const {
    if (rank() < 2) throw std::invalid_argument("slice_matrix needs rank >= 2");
    Eigen::Index r = shape_[1];
    Eigen::Index c = 1;
    for (int i = 2; i < rank(); ++i) c *= shape_[i];
    return {r, c};
  }

  Shape shape_;
  VectorX<Scalar> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Stack same-shaped tensors along a new leading axis.
template <typename Scalar>
Tensor<Scalar> stack(std::span<const Tensor<Scalar>> items) {
  if (items.empty()) throw std::invalid_argument("stack of zero tensors");
  Shape shape = items.front().shape();
  const Eigen::Index n = items.front().size();
  shape.insert(shape.begin(), static_cast<int>(items.size()));
  Tensor<Scalar> out(shape);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != items.front().shape()) throw std::invalid_argument("stack of mismatched shapes");
    out.vec().segment(static_cast<Eigen::Index>(i) * n, n) = items[i].vec();
  }
  return out;
}

/// Copy of item `i` along the leading axis.
template <typename Scalar>
Tensor<Scalar> unstack(const Tensor<Scalar>& batch, int i) {
  Shape shape(batch.shape().begin() + 1, batch.shape().end());
  const Eigen::Index n = shape_size(shape);
  return Tensor<Scalar>(shape, VectorX<Scalar>(batch.vec().segment(i * n, n)));
}

}  // namespace microcl
