#pragma once

#include <vector>

#include "cine/forward_model.hpp"
#include "cine/layers.hpp"
#include "cine/sampling.hpp"

namespace cine {

struct KNetConfig {
  int depth = 4;  ///< pooling levels
  int base_channels = 32;
  bool use_data_consistency = false;

  void validate() const;
};

namespace nn {

/// conv3x3 -> instance norm -> leaky ReLU, twice.
class UNetBlock : public Module {
 public:
  UNetBlock(int in_channels, int out_channels, Rng& rng);
  Var operator()(const Var& x) const;

 private:
  Conv2d& conv1_;
  Conv2d& conv2_;
};

/// Encoder-decoder over 2-channel (re, im) k-space with skip concatenation
/// and a residual output, applied frame by frame with shared weights.
class KSpaceUNet : public Module {
 public:
  KSpaceUNet(const KNetConfig& config, Rng& rng);

  /// One normalised frame, 2 x H x W -> 2 x H x W. Pads (reflect) to a
  /// multiple of 2^depth and crops back.
  Var forward(const Var& kspace) const;
  /// Whole sequence: scales by the sequence's peak magnitude, runs every
  /// frame, and undoes the scaling.
  std::vector<Var> forward(const std::vector<Var>& kspace) const;

  const KNetConfig& config() const { return config_; }

 private:
  KNetConfig config_;
  std::vector<UNetBlock*> encoder_;
  std::vector<Conv2d*> up_;
  std::vector<UNetBlock*> decoder_;
  Conv2d* head_;
};

Tensor to_tensor(const ComplexImage& z);
ComplexImage to_complex_image(const Tensor& t);

}  // namespace nn

/// Runs the network on a k-space sequence without recording gradients.
KSpaceSequence reconstruct_kspace(const KSpaceSequence& measured, const nn::KSpaceUNet& net);

/// Per-frame inverse transform of reconstructed k-space. With data
/// consistency, rows sampled by `mask` are first replaced by `measured`.
ComplexCineSequence to_image(const KSpaceSequence& reconstructed, const KSpaceSequence& measured, const SamplingMask& mask,
                             bool use_data_consistency);

}  // namespace cine
