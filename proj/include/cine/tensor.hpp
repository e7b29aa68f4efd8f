#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cine/types.hpp"

namespace cine::nn {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<int>;

std::string shape_string(const Shape& s);

/// Dense row-major tensor. Feature maps use the C x H x W layout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = 0);
  Tensor(Shape shape, Eigen::VectorXd data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }
  static Tensor scalar(Real v) { return Tensor({1}, v); }
  static Tensor from_image(const RealImage& image);

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  /// C, H, W of a 3-D tensor.
  int channels() const { return dim(0); }
  int height() const { return dim(1); }
  int width() const { return dim(2); }
  Eigen::Index plane() const { return static_cast<Eigen::Index>(height()) * width(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  Eigen::VectorXd& vec() { return data_; }
  const Eigen::VectorXd& vec() const { return data_; }

  Real& operator[](Eigen::Index i) { return data_[i]; }
  Real operator[](Eigen::Index i) const { return data_[i]; }
  Real& at(int c, int h, int w) { return data_[(static_cast<Eigen::Index>(c) * height() + h) * width() + w]; }
  Real at(int c, int h, int w) const { return data_[(static_cast<Eigen::Index>(c) * height() + h) * width() + w]; }

  /// View of a 3-D tensor as a C x (H*W) row-major matrix.
  Eigen::Map<RowMatrix> matrix() { return {data_.data(), channels(), plane()}; }
  Eigen::Map<const RowMatrix> matrix() const { return {data_.data(), channels(), plane()}; }
  /// Channel c as an H x W row-major matrix.
  Eigen::Map<RowMatrix> channel(int c) { return {data_.data() + c * plane(), height(), width()}; }
  Eigen::Map<const RowMatrix> channel(int c) const { return {data_.data() + c * plane(), height(), width()}; }

  RealImage to_image(int c = 0) const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const { return data_.allFinite(); }
  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_;
  Eigen::VectorXd data_;
};

}  // namespace cine::nn
