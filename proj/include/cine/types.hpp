#pragma once

#include <complex>
#include <vector>

#include <Eigen/Dense>

namespace cine {

using Real = double;
using Complex = std::complex<Real>;

/// Row index is the phase-encode direction, column index the readout direction.
using ComplexImage = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic>;
using RealImage = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;

/// A cine series of real frames, e.g. magnitude images.
using RealSequence = std::vector<RealImage>;

}  // namespace cine
