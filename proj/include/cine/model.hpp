#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cine/kspace_unet.hpp"
#include "cine/mgda.hpp"
#include "cine/mrf.hpp"
#include "cine/sequence_io.hpp"

namespace cine {

struct NetConfig {
  KNetConfig knet;
  MgdaConfig mgda;
  MrfConfig mrf;

  void validate() const;
};

/// Returns `config` with one stage replaced by its shape-preserving stand-in
/// ("mgda": raw extractor features, "mrf": three-layer conv head). "none"
/// returns the config unchanged.
NetConfig bypass_variant(NetConfig config, const std::string& module_name);

/// Network inputs for one sequence: measured k-space frames as 2 x H x W
/// tensors plus the row masks used for data consistency.
struct NetInput {
  std::vector<nn::Tensor> kspace;
  std::vector<std::vector<std::uint8_t>> masks;
  RealSequence target;  // fully sampled magnitude
  RealSequence zero_filled;
  std::string id;
};

NetInput make_input(const SequenceRecord& record);

namespace nn {

/// U-Net in k-space, inverse transform, magnitude, MGDA, then MRF (or the
/// conv head). The magnitude of the transformed U-Net output is added back
/// to the final projection.
class CineReconNet : public Module {
 public:
  CineReconNet(const NetConfig& config, std::uint64_t seed);

  std::vector<Var> forward(const NetInput& input, PropagationTrace* trace = nullptr) const;
  /// No-grad reconstruction.
  RealSequence reconstruct(const NetInput& input) const;

  const NetConfig& config() const { return config_; }
  const KSpaceUNet& unet() const { return *unet_; }
  const Mgda& mgda() const { return *mgda_; }

 private:
  NetConfig config_;
  KSpaceUNet* unet_ = nullptr;
  Mgda* mgda_ = nullptr;
  Mrf* mrf_ = nullptr;
  ConvHead* head_ = nullptr;
};

}  // namespace nn
}  // namespace cine
