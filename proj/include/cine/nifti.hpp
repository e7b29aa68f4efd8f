#pragma once

#include <array>
#include <filesystem>
#include <vector>

namespace cine {

/// A NIfTI-1 volume with up to four dimensions, x fastest. Intensities are
/// converted to double with the header's scale slope/intercept applied.
struct NiftiVolume {
  std::array<int, 4> dims{1, 1, 1, 1};
  std::array<double, 4> spacing{1, 1, 1, 1};
  std::vector<double> data;

  double at(int x, int y, int z, int t) const {
    return data[static_cast<std::size_t>(((t * dims[2] + z) * dims[1] + y)) * static_cast<std::size_t>(dims[0]) +
                static_cast<std::size_t>(x)];
  }
};

/// Reads .nii or .nii.gz. Throws std::runtime_error on malformed input.
NiftiVolume read_nifti(const std::filesystem::path& path);

/// Writes a float32 .nii.gz (or .nii when the extension says so).
void write_nifti(const std::filesystem::path& path, const NiftiVolume& volume);

}  // namespace cine
