#pragma once

#include <unsupported/Eigen/FFT>

namespace cine {
namespace detail {

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> transform2(
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> data, bool inverse) {
  using RealT = typename Scalar::value_type;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Eigen::FFT<RealT> fft;
  fft.SetFlag(Eigen::FFT<RealT>::Unscaled);
  const Eigen::Index rows = data.rows();
  const Eigen::Index cols = data.cols();

  // kissfft crashes on length 1, where the transform is the identity anyway.
  Vec in(cols), out(cols);
  for (Eigen::Index r = 0; cols > 1 && r < rows; ++r) {
    in = data.row(r).transpose();
    if (inverse)
      fft.inv(out, in);
    else
      fft.fwd(out, in);
    data.row(r) = out.transpose();
  }
  in.resize(rows);
  out.resize(rows);
  for (Eigen::Index c = 0; rows > 1 && c < cols; ++c) {
    in = data.col(c);
    if (inverse)
      fft.inv(out, in);
    else
      fft.fwd(out, in);
    data.col(c) = out;
  }
  data *= RealT(1) / std::sqrt(static_cast<RealT>(rows * cols));
  return data;
}

}  // namespace detail

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> dft2(
    const Eigen::MatrixBase<Derived>& image) {
  detail::require_finite_spectrum(image.allFinite(), "dft2");
  return detail::transform2<typename Derived::Scalar>(image.derived(), false);
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> idft2(
    const Eigen::MatrixBase<Derived>& spectrum) {
  detail::require_finite_spectrum(spectrum.allFinite(), "idft2");
  return detail::transform2<typename Derived::Scalar>(spectrum.derived(), true);
}

}  // namespace cine
