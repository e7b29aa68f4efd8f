#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cine/sampling.hpp"
#include "cine/types.hpp"

namespace cine {

struct PixelSpacing {
  double row_mm = 1.0;
  double col_mm = 1.0;
  double slice_mm = 1.0;
  bool operator==(const PixelSpacing&) const = default;
};

/// The fully sampled complex cine slice: T frames of H x W.
struct ComplexCineSequence {
  std::vector<ComplexImage> frames;
  std::optional<PixelSpacing> spacing;
  std::string subject_id;
  int slice_index = 0;

  int num_frames() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.empty() ? 0 : static_cast<int>(frames.front().rows()); }
  int width() const { return frames.empty() ? 0 : static_cast<int>(frames.front().cols()); }

  /// Throws if T < 2, H or W < 16, shapes disagree or any entry is non-finite.
  void validate() const;
  RealSequence magnitude() const;
  double max_magnitude() const;
  /// Divides every frame by the maximum magnitude over the sequence.
  void normalize();
};

/// T frames of k-space. `centered` records whether zero frequency sits at
/// (H/2, W/2) (true) or at (0, 0).
struct KSpaceSequence {
  std::vector<ComplexImage> frames;
  bool centered = true;

  int num_frames() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.empty() ? 0 : static_cast<int>(frames.front().rows()); }
  int width() const { return frames.empty() ? 0 : static_cast<int>(frames.front().cols()); }
};

struct NoiseSpec {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Smoothly varying phase: a sin(2 pi (f_r r/H + f_c c/W) + phi) wrapped to [-pi, pi).
struct PhaseMap {
  RealImage values;
  double amplitude = 0.0;
  double freq_row = 0.0;
  double freq_col = 0.0;
  double offset = 0.0;
};

/// Default bound on the per-pixel phase difference.
inline constexpr double kPhaseSmoothnessBound = 3.14159265358979323846 / 8.0;

PhaseMap make_phase_map(int height, int width, double amplitude, double freq_row, double freq_col, double offset);

/// Draws amplitude in [pi/4, pi], phi in [0, 2 pi) and frequencies in
/// [0, min(3, bound * N / (2 pi a))] so that the smoothness bound holds.
PhaseMap synthesize_phase(int height, int width, std::uint64_t seed, double smoothness_bound = kPhaseSmoothnessBound);

/// Largest absolute wrapped difference between neighbouring pixels.
double max_phase_gradient(const RealImage& phase);

/// Combines a magnitude series with a phase map into a complex sequence.
ComplexCineSequence attach_phase(const RealSequence& magnitude, const PhaseMap& phase);

/// y = M . F x + noise, per frame; the result is in centered layout and is
/// exactly zero on unsampled lines. `frame_masks`, when non-empty, overrides
/// `mask` frame by frame.
KSpaceSequence undersample(const ComplexCineSequence& x, const SamplingMask& mask, const NoiseSpec& noise,
                           const std::vector<SamplingMask>& frame_masks = {});

/// Fully sampled spectrum in centered layout.
KSpaceSequence fully_sampled(const ComplexCineSequence& x);

/// Per-frame inverse transform of (possibly undersampled) k-space.
ComplexCineSequence zero_filled(const KSpaceSequence& y);

RealSequence magnitude(const std::vector<ComplexImage>& frames);

}  // namespace cine
