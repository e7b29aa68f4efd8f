#include "cine/forward_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "cine/fourier.hpp"
#include "cine/random.hpp"

namespace cine {

namespace {

constexpr double kPi = std::numbers::pi;

double wrap_phase(double v) {
  double w = std::fmod(v + kPi, 2.0 * kPi);
  if (w < 0) w += 2.0 * kPi;
  w -= kPi;
  return w >= kPi ? w - 2.0 * kPi : w;
}

}  // namespace

void ComplexCineSequence::validate() const {
  if (frames.size() < 2) throw std::invalid_argument("ComplexCineSequence: need at least 2 frames");
  const auto h = frames.front().rows();
  const auto w = frames.front().cols();
  if (h < 16 || w < 16) throw std::invalid_argument("ComplexCineSequence: frames must be at least 16x16");
  for (const auto& f : frames) {
    if (f.rows() != h || f.cols() != w) throw std::invalid_argument("ComplexCineSequence: frame shapes differ");
    if (!f.allFinite()) throw std::invalid_argument("ComplexCineSequence: non-finite entries");
  }
}

RealSequence ComplexCineSequence::magnitude() const { return cine::magnitude(frames); }

double ComplexCineSequence::max_magnitude() const {
  double m = 0.0;
  for (const auto& f : frames) m = std::max(m, f.cwiseAbs().maxCoeff());
  return m;
}

void ComplexCineSequence::normalize() {
  const double m = max_magnitude();
  if (m <= 0.0) throw std::invalid_argument("ComplexCineSequence: cannot normalize an all-zero sequence");
  for (auto& f : frames) f /= m;
}

RealSequence magnitude(const std::vector<ComplexImage>& frames) {
  RealSequence out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(f.cwiseAbs());
  return out;
}

PhaseMap make_phase_map(int height, int width, double amplitude, double freq_row, double freq_col, double offset) {
  PhaseMap p;
  p.amplitude = amplitude;
  p.freq_row = freq_row;
  p.freq_col = freq_col;
  p.offset = offset;
  p.values.resize(height, width);
  for (int c = 0; c < width; ++c)
    for (int r = 0; r < height; ++r) {
      const double arg = 2.0 * kPi * (freq_row * r / height + freq_col * c / width) + offset;
      p.values(r, c) = wrap_phase(amplitude * std::sin(arg));
    }
  return p;
}

PhaseMap synthesize_phase(int height, int width, std::uint64_t seed, double smoothness_bound) {
  if (height < 16 || width < 16) throw std::invalid_argument("synthesize_phase: H and W must be >= 16");
  Rng rng(seed);
  const double amplitude = rng.uniform(kPi / 4.0, kPi);
  // |d/dr a sin(.)| <= a 2 pi f / N per pixel; keep a margin below the bound.
  auto max_freq = [&](int n) { return std::min(3.0, 0.99 * smoothness_bound * n / (2.0 * kPi * amplitude)); };
  const double fr = rng.uniform(0.0, max_freq(height));
  const double fc = rng.uniform(0.0, max_freq(width));
  const double phi = rng.uniform(0.0, 2.0 * kPi);
  return make_phase_map(height, width, amplitude, fr, fc, phi);
}

double max_phase_gradient(const RealImage& phase) {
  double worst = 0.0;
  for (Eigen::Index c = 0; c < phase.cols(); ++c)
    for (Eigen::Index r = 0; r < phase.rows(); ++r) {
      if (r + 1 < phase.rows()) worst = std::max(worst, std::abs(wrap_phase(phase(r + 1, c) - phase(r, c))));
      if (c + 1 < phase.cols()) worst = std::max(worst, std::abs(wrap_phase(phase(r, c + 1) - phase(r, c))));
    }
  return worst;
}

ComplexCineSequence attach_phase(const RealSequence& magnitude, const PhaseMap& phase) {
  ComplexCineSequence seq;
  for (const auto& m : magnitude) {
    if (m.rows() != phase.values.rows() || m.cols() != phase.values.cols())
      throw std::invalid_argument("attach_phase: phase map shape differs from frames");
    ComplexImage f(m.rows(), m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) f(r, c) = std::polar(m(r, c), phase.values(r, c));
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

KSpaceSequence fully_sampled(const ComplexCineSequence& x) {
  KSpaceSequence y;
  y.centered = true;
  for (const auto& f : x.frames) y.frames.push_back(fftshift(dft2(f)));
  return y;
}

KSpaceSequence undersample(const ComplexCineSequence& x, const SamplingMask& mask, const NoiseSpec& noise,
                           const std::vector<SamplingMask>& frame_masks) {
  if (noise.sigma < 0) throw std::invalid_argument("undersample: noise sigma must be >= 0");
  if (!frame_masks.empty() && frame_masks.size() != x.frames.size())
    throw std::invalid_argument("undersample: need one mask per frame");
  KSpaceSequence y;
  y.centered = true;
  Rng rng(noise.seed);
  // Complex Gaussian with total std sigma: each component has sigma/sqrt(2).
  const double component_sigma = noise.sigma / std::sqrt(2.0);
  for (std::size_t t = 0; t < x.frames.size(); ++t) {
    const auto& m = frame_masks.empty() ? mask : frame_masks[t];
    const auto& f = x.frames[t];
    if (m.size() != f.rows())
      throw std::invalid_argument("undersample: mask length " + std::to_string(m.size()) +
                                  " differs from phase-encode size " + std::to_string(f.rows()));
    ComplexImage k = fftshift(dft2(f));
    for (Eigen::Index r = 0; r < k.rows(); ++r) {
      if (!m.sampled(static_cast<int>(r))) {
        k.row(r).setZero();
        continue;
      }
      if (noise.sigma > 0)
        for (Eigen::Index c = 0; c < k.cols(); ++c) {
          const double re = rng.normal() * component_sigma;
          const double im = rng.normal() * component_sigma;
          k(r, c) += Complex(re, im);
        }
    }
    y.frames.push_back(std::move(k));
  }
  return y;
}

ComplexCineSequence zero_filled(const KSpaceSequence& y) {
  ComplexCineSequence x;
  for (const auto& k : y.frames) x.frames.push_back(y.centered ? idft2(ifftshift(k)) : idft2(k));
  return x;
}

}  // namespace cine
