#pragma once

#include <vector>

#include "cine/dataset.hpp"
#include "cine/model.hpp"
#include "cine/sequence_io.hpp"

namespace testutil {

// Small phantom sequences measured at `acceleration`, one seed per sequence.
inline std::vector<cine::NetInput> toy_inputs(int count, int size, int frames, double acceleration, std::uint64_t seed) {
  std::vector<cine::NetInput> out;
  for (int i = 0; i < count; ++i) {
    cine::MaskSpec spec;
    spec.acceleration = acceleration;
    spec.mask_seed = seed;
    auto seq = cine::synthetic_sequence(size, size, frames, seed * 1000 + static_cast<std::uint64_t>(i));
    seq.subject_id = "toy" + std::to_string(seed) + "_" + std::to_string(i);
    out.push_back(cine::make_input(cine::make_record(std::move(seq), cine::Split::train, seed, spec)));
  }
  return out;
}

inline cine::NetConfig tiny_net() {
  cine::NetConfig c;
  c.knet.depth = 2;
  c.knet.base_channels = 8;
  c.mgda.channels = 4;
  c.mgda.extractor_blocks = 1;
  c.mgda.pyramid_levels = 2;
  c.mgda.flow_channels = 4;
  c.mgda.flow_kernel = 3;
  c.mgda.offset_groups = 2;
  c.mgda.backbone_blocks = 1;
  c.mrf.channels = 4;
  c.mrf.window = 4;
  c.mrf.heads = {1, 2, 2};
  c.mrf.blocks_per_stage = 1;
  return c;
}

}  // namespace testutil
