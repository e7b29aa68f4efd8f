#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace cine {

/// Cartesian line mask over the phase-encode axis, indexed in centered
/// k-space layout (zero frequency at line H/2).
struct SamplingMask {
  std::vector<std::uint8_t> lines;
  double acceleration = 1.0;
  int center_lines = 0;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(lines.size()); }
  int sampled_count() const;
  bool sampled(int line) const { return lines[static_cast<std::size_t>(line)] != 0; }
  /// First line of the always-sampled center block.
  int center_begin() const { return size() / 2 - center_lines / 2; }

  /// Broadcast over columns: rows x cols matrix of 0/1.
  Eigen::MatrixXd broadcast(int cols) const;

  bool operator==(const SamplingMask&) const = default;
};

/// Autocalibration block default: 16 lines at 4x and 8 at 8x for H=256,
/// scaled proportionally with H.
int default_center_lines(int height, double acceleration);

/// Variable-density mask: the center block is always sampled, the remaining
/// round(H/acceleration) - center_lines lines are drawn without replacement
/// with weight exp(-d^2 / (2 (H/6)^2)), d the distance to the center line.
SamplingMask make_vd_mask(int height, double acceleration, int center_lines, std::uint64_t seed);

}  // namespace cine
