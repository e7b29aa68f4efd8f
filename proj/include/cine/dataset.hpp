#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cine/forward_model.hpp"

namespace cine {

enum class Split { train, val, test };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

/// Subject-level split weights; the defaults reproduce a 100/20/30 partition
/// of 150 subjects. Every split receives at least one subject.
struct SplitSpec {
  int train_weight = 100;
  int val_weight = 20;
  int test_weight = 30;
  std::uint64_t seed = 0;
};

struct IngestOptions {
  /// Centre crop / zero pad each frame to this size when set.
  std::optional<int> height;
  std::optional<int> width;
  std::uint64_t phase_seed = 0;
};

struct IngestedDataset {
  std::vector<ComplexCineSequence> sequences;
  std::vector<Split> splits;
  std::map<std::string, Split> subjects;
  std::vector<std::string> warnings;

  std::vector<ComplexCineSequence> of(Split s) const;
};

/// Assigns sorted subject ids to splits by a seeded shuffle.
std::map<std::string, Split> assign_splits(std::vector<std::string> subjects, const SplitSpec& spec);

/// Per-sequence phase seed derived from the dataset seed and identity.
std::uint64_t sequence_phase_seed(std::uint64_t phase_seed, const std::string& subject, int slice);

/// Scans `root` recursively for 4D magnitude volumes (*.nii, *.nii.gz) and
/// returns one normalised complex sequence per (subject, slice). Unreadable
/// files and all-zero slices are skipped with a warning.
IngestedDataset ingest_dataset(const std::filesystem::path& root, const SplitSpec& split, const IngestOptions& options = {});

/// Centre crop or zero pad to (height, width).
RealImage crop_or_pad(const RealImage& image, int height, int width);

/// Cardiac-like magnitude phantom: a torso ellipse, a contracting ventricle
/// ring and vessels, translated by a breathing drift. Values in [0, 1].
RealSequence synthetic_cine(int height, int width, int frames, std::uint64_t seed);

/// synthetic_cine with a synthesized phase map, normalised.
ComplexCineSequence synthetic_sequence(int height, int width, int frames, std::uint64_t seed);

/// Writes `subjects` NIfTI volumes (H x W x slices x frames) laid out like
/// the public cardiac dataset: <root>/patientNNN/patientNNN_4d.nii.gz.
void write_synthetic_root(const std::filesystem::path& root, int subjects, int slices, int frames, int height, int width,
                          std::uint64_t seed);

}  // namespace cine
