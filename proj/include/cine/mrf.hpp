#pragma once

#include <array>
#include <string>
#include <vector>

#include "cine/layers.hpp"

namespace cine {

enum class BranchBlock { conv, attention };

/// Table-5 style layouts: every branch conv, every branch attention, or conv
/// on the full-resolution branch and attention below it.
enum class MrfVariant { conv, attention, hybrid };

const char* to_string(MrfVariant v);
MrfVariant mrf_variant_from_string(const std::string& s);

struct MrfConfig {
  int stages = 3;
  int channels = 64;  // branch widths are C, 2C, 4C
  int window = 8;
  std::array<int, 3> heads{1, 2, 4};
  MrfVariant variant = MrfVariant::hybrid;
  int blocks_per_stage = 2;
  int mlp_ratio = 2;
  bool enabled = true;

  void validate() const;
  int branch_channels(int b) const { return channels << b; }
  BranchBlock block_type(int branch) const;
  /// Spatial multiple the input is padded to.
  int pad_multiple() const;
};

namespace nn {

/// Max-pool 2x2, stride 2; odd sizes are replicate-padded first.
Var downsample(const Var& x);
/// Bilinear 2x, half-pixel centres.
Var upsample(const Var& x);

/// Pre-norm windowed attention + pointwise MLP, each with a residual.
class SwinLayer : public Module {
 public:
  SwinLayer(int channels, int heads, int window, int shift, int mlp_ratio, Rng& rng);
  Var operator()(const Var& x) const;

 private:
  int heads_, window_, shift_;
  LayerNorm& norm1_;
  Conv2d& qkv_;
  Var* rel_bias_;
  Conv2d& proj_;
  LayerNorm& norm2_;
  Conv2d& fc1_;
  Conv2d& fc2_;
};

/// Regular-window layer followed by a shifted-window layer.
class AttentionBlock : public Module {
 public:
  AttentionBlock(int channels, int heads, int window, int mlp_ratio, Rng& rng);
  Var operator()(const Var& x) const;

 private:
  int window_;
  SwinLayer& regular_;
  SwinLayer& shifted_;
};

class Mrf : public Module {
 public:
  Mrf(int in_channels, const MrfConfig& config, Rng& rng);

  /// features: in_channels x H x W. base (1 x H x W, optional) is added to
  /// the projected output.
  Var operator()(const Var& features, const Var& base = Var()) const;
  /// Per-branch states after the last stage, before the output head.
  std::vector<Var> branches(const Var& features) const;

  const MrfConfig& config() const { return config_; }

 private:
  struct Stage {
    std::vector<std::vector<Module*>> blocks;                // [branch][block]
    std::vector<std::vector<Conv2d*>> exchange;              // [target][source], null on the diagonal
  };
  Var run_block(const Module* block, BranchBlock type, const Var& x) const;
  Var resample(const Var& x, int from, int to, const Conv2d* proj) const;

  MrfConfig config_;
  int in_channels_;
  Conv2d& stem_;
  std::vector<Stage> stages_;
  std::vector<Conv2d*> head_proj_;  // branch b -> branch 0 width, null for b = 0
  Conv2d* head_ = nullptr;
};

/// Small convolutional head used when the fusion module is bypassed.
class ConvHead : public Module {
 public:
  ConvHead(int in_channels, int width, Rng& rng);
  Var operator()(const Var& features, const Var& base = Var()) const;

 private:
  Conv2d& c1_;
  Conv2d& c2_;
  Conv2d& c3_;
};

}  // namespace nn
}  // namespace cine
