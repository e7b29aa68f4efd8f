#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace cine {

namespace detail {
void require_finite_spectrum(bool finite, const char* what);
}

/// Orthonormal 2D DFT: both directions scale by 1/sqrt(rows*cols), so the
/// transform is unitary and energy preserving. Zero frequency sits at (0, 0).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> dft2(
    const Eigen::MatrixBase<Derived>& image);

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> idft2(
    const Eigen::MatrixBase<Derived>& spectrum);

/// Moves the zero-frequency sample from (0, 0) to (rows/2, cols/2).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> fftshift(
    const Eigen::MatrixBase<Derived>& m) {
  const Eigen::Index rows = m.rows();
  const Eigen::Index cols = m.cols();
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r)
      out((r + rows / 2) % rows, (c + cols / 2) % cols) = m(r, c);
  return out;
}

/// Inverse of fftshift (differs from it for odd sizes).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> ifftshift(
    const Eigen::MatrixBase<Derived>& m) {
  const Eigen::Index rows = m.rows();
  const Eigen::Index cols = m.cols();
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r)
      out(r, c) = m((r + rows / 2) % rows, (c + cols / 2) % cols);
  return out;
}

}  // namespace cine

#include "cine/fourier_impl.hpp"
