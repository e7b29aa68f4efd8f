#include "cine/model.hpp"

#include <stdexcept>

namespace cine {

void NetConfig::validate() const {
  knet.validate();
  mgda.validate();
  mrf.validate();
}

NetConfig bypass_variant(NetConfig config, const std::string& module_name) {
  if (module_name == "mgda")
    config.mgda.enabled = false;
  else if (module_name == "mrf")
    config.mrf.enabled = false;
  else if (module_name != "none")
    throw std::invalid_argument("bypass_variant: unknown module '" + module_name + "' (expected mgda|mrf)");
  return config;
}

NetInput make_input(const SequenceRecord& record) {
  const KSpaceSequence measured = record.measure();
  NetInput in;
  in.id = record.id();
  for (std::size_t t = 0; t < measured.frames.size(); ++t) {
    in.kspace.push_back(nn::to_tensor(measured.frames[t]));
    in.masks.push_back(record.frame_masks.empty() ? record.mask.lines : record.frame_masks[t].lines);
  }
  in.target = record.sequence.magnitude();
  in.zero_filled = magnitude(zero_filled(measured).frames);
  return in;
}

namespace nn {

CineReconNet::CineReconNet(const NetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  // Separate streams so toggling one stage leaves the others' initialisation unchanged.
  Rng knet_rng(mix_seed(seed, 1)), mgda_rng(mix_seed(seed, 2)), fuse_rng(mix_seed(seed, 3));
  unet_ = &add_module<KSpaceUNet>("knet", config_.knet, knet_rng);
  mgda_ = &add_module<Mgda>("mgda", config_.mgda, mgda_rng);
  if (config_.mrf.enabled)
    mrf_ = &add_module<Mrf>("mrf", config_.mgda.channels, config_.mrf, fuse_rng);
  else
    head_ = &add_module<ConvHead>("head", config_.mgda.channels, config_.mgda.channels, fuse_rng);
}

std::vector<Var> CineReconNet::forward(const NetInput& input, PropagationTrace* trace) const {
  const std::size_t T = input.kspace.size();
  if (T < 2) throw std::invalid_argument("CineReconNet: need at least 2 frames");
  if (input.masks.size() != T) throw std::invalid_argument("CineReconNet: one row mask per frame required");
  std::vector<Var> kin;
  for (const auto& k : input.kspace) {
    if (k.ndim() != 3 || k.channels() != 2 || !k.same_shape(input.kspace.front()))
      throw std::invalid_argument("CineReconNet: k-space frames must share a 2 x H x W shape, got " + shape_string(k.shape()));
    kin.emplace_back(k);
  }
  const auto kr = unet_->forward(kin);
  std::vector<Var> mags;
  for (std::size_t t = 0; t < T; ++t) {
    const Var k = config_.knet.use_data_consistency ? replace_rows(kr[t], input.kspace[t], input.masks[t]) : kr[t];
    mags.push_back(complex_magnitude(kspace_to_image(k)));
  }
  const auto features = (*mgda_)(mags, trace);
  std::vector<Var> out;
  for (std::size_t t = 0; t < T; ++t) out.push_back(mrf_ ? (*mrf_)(features[t], mags[t]) : (*head_)(features[t], mags[t]));
  return out;
}

RealSequence CineReconNet::reconstruct(const NetInput& input) const {
  NoGradGuard no_grad;
  RealSequence out;
  for (const auto& v : forward(input)) out.push_back(v.value().to_image());
  return out;
}

}  // namespace nn
}  // namespace cine
