#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cine/dataset.hpp"
#include "cine/forward_model.hpp"
#include "cine/sampling.hpp"

namespace cine {

inline constexpr std::uint32_t kSequenceFormatVersion = 1;

/// One prepared sequence on disk: fully sampled frames plus everything
/// needed to regenerate its measurement.
struct SequenceRecord {
  ComplexCineSequence sequence;
  SamplingMask mask;
  std::vector<SamplingMask> frame_masks;
  std::uint64_t phase_seed = 0;
  NoiseSpec noise;
  Split split = Split::train;

  KSpaceSequence measure() const { return undersample(sequence, mask, noise, frame_masks); }
  std::string id() const;
};

/// How measurements are drawn for a prepared sequence. Mask and noise seeds
/// are derived per sequence from the base seed and the sequence id.
struct MaskSpec {
  double acceleration = 4.0;
  int center_lines = 0;  // 0: default_center_lines
  std::uint64_t mask_seed = 0;
  double noise_sigma = 0.0;
  bool per_frame = false;
};

SequenceRecord make_record(ComplexCineSequence sequence, Split split, std::uint64_t phase_seed, const MaskSpec& spec);
/// Redraws the masks and noise of `record` for another specification.
SequenceRecord remask(SequenceRecord record, const MaskSpec& spec);

/// Binary layout (little-endian):
///   8 bytes  magic "CINESEQ\0"
///   u32      format version
///   u32      header length N
///   N bytes  JSON header (ids, shapes, seeds, mask metadata, split)
///   T*H*W*2 f64  frames, row-major, (re, im) interleaved
///   H bytes  mask lines, then T*H bytes of per-frame masks if present
void write_sequence(const std::filesystem::path& path, const SequenceRecord& record);
SequenceRecord read_sequence(const std::filesystem::path& path);

/// Manifest listing prepared files per split.
struct Manifest {
  std::vector<std::string> train, val, test;
  double acceleration = 4.0;
  std::uint64_t split_seed = 0;
  std::uint64_t mask_seed = 0;

  const std::vector<std::string>& files(Split s) const;
};

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

/// Loads all records of one split; paths are resolved relative to the manifest.
std::vector<SequenceRecord> load_split(const std::filesystem::path& manifest_path, Split split);

}  // namespace cine
