#pragma once

#include <array>
#include <set>
#include <string>
#include <vector>

#include "cine/layers.hpp"

namespace cine {

enum class PropagationMode { first_order, second_order };

const char* to_string(PropagationMode m);
PropagationMode propagation_mode_from_string(const std::string& s);

struct MgdaConfig {
  bool enabled = true;
  int channels = 64;
  int extractor_blocks = 5;
  int pyramid_levels = 4;
  int flow_channels = 32;  ///< width of the per-level residual flow predictor
  int flow_kernel = 7;
  PropagationMode mode = PropagationMode::second_order;
  int offset_groups = 8;
  double offset_clamp_fraction = 0.25;
  int backbone_blocks = 2;  ///< residual blocks refining each propagated state

  void validate() const;
};

namespace nn {

/// conv3x3(1 -> C), leaky ReLU, then stacked residual blocks.
class FeatureExtractor : public Module {
 public:
  FeatureExtractor(int channels, int blocks, Rng& rng);
  Var operator()(const Var& image) const;

 private:
  Conv2d& stem_;
  std::vector<ResidualBlock*> blocks_;
};

/// Five-layer conv network predicting a residual flow from
/// (target, warped reference, current flow): 4 -> f -> 2f -> f -> f/2 -> 2.
class FlowPredictor : public Module {
 public:
  FlowPredictor(int width, int kernel, Rng& rng);
  Var operator()(const Var& input) const;

 private:
  std::vector<Conv2d*> layers_;
};

/// Coarse-to-fine spatial pyramid flow estimator. estimate(ref, target)
/// returns O such that warp(ref, O) approximates target.
class FlowEstimator : public Module {
 public:
  FlowEstimator(int levels, int width, int kernel, double clamp_fraction, Rng& rng);
  Var operator()(const Var& reference, const Var& target) const;

  int levels() const { return static_cast<int>(predictors_.size()); }
  const FlowPredictor& predictor(int level) const { return *predictors_[static_cast<std::size_t>(level)]; }

 private:
  std::vector<FlowPredictor*> predictors_;  // coarsest first
  double clamp_fraction_;
};

/// Flow-guided modulated deformable alignment of `neighbors` onto `current`.
/// Heads C_m / C_o see concat(current, warp(n_k, flow_k)...); the DCN runs on
/// concat(n_k...) with offsets clamp(C_o(.) + flow of the tap's neighbour)
/// and modulation sigmoid(C_m(.)).
class DeformableAlignment : public Module {
 public:
  DeformableAlignment(int channels, int neighbors, int groups, double clamp_fraction, Rng& rng);

  struct Result {
    Var aligned;
    Var offsets;
    Var modulation;
  };
  Result align(const Var& current, const std::vector<Var>& neighbors, const std::vector<Var>& flows) const;
  /// Same as align() but with head outputs given explicitly (pre-clamp
  /// residual offsets and pre-sigmoid mask logits).
  Result align_with_heads(const Var& current, const std::vector<Var>& neighbors, const std::vector<Var>& flows,
                          const Var& residual_offsets, const Var& mask_logits) const;

  int neighbors() const { return neighbors_; }
  int groups() const { return groups_; }
  Conv2d& offset_head() { return offset_head_; }
  Conv2d& mask_head() { return mask_head_; }
  Conv2d& dcn() { return dcn_; }

 private:
  Var broadcast_flows(const std::vector<Var>& flows) const;

  int channels_, neighbors_, groups_;
  double clamp_fraction_;
  Conv2d& offset_head_;
  Conv2d& mask_head_;
  Conv2d& dcn_;
};

/// Which frames' states each propagation step consumed, per branch.
struct PropagationTrace {
  static constexpr std::array<const char*, 4> kBranchNames{"forward_1", "backward_1", "forward_2", "backward_2"};
  std::array<std::vector<std::set<int>>, 4> dependencies;
  std::vector<std::string> order;  ///< "branch:frame" in execution order
};

/// Flows between neighbouring frames: forward[i] maps frame i-1 onto i
/// (undefined for i = 0); backward[i] maps frame i+1 onto i.
struct NeighborFlows {
  std::vector<Var> forward;
  std::vector<Var> backward;
};

/// Bidirectional grid propagation, branch order forward, backward, forward,
/// backward; per-frame outputs fuse the extractor features and all branch
/// states with a 1x1 convolution.
class Propagator : public Module {
 public:
  Propagator(int channels, int groups, int backbone_blocks, double clamp_fraction, PropagationMode mode, Rng& rng);

  std::vector<Var> operator()(const std::vector<Var>& features, const NeighborFlows& flows, PropagationTrace* trace = nullptr) const;
  std::vector<std::vector<Var>> branch_states(const std::vector<Var>& features, const NeighborFlows& flows,
                                              PropagationTrace* trace = nullptr) const;

  PropagationMode mode() const { return mode_; }
  void set_mode(PropagationMode m) { mode_ = m; }

 private:
  int channels_;
  PropagationMode mode_;
  std::vector<DeformableAlignment*> align_;
  std::vector<Conv2d*> backbone_in_;
  std::vector<std::vector<ResidualBlock*>> backbone_blocks_;
  Conv2d* fusion_;
};

/// Extractor + flow estimator + propagator. When disabled, the output is the
/// extractor features of each frame.
class Mgda : public Module {
 public:
  Mgda(const MgdaConfig& config, Rng& rng);

  /// images: T magnitude frames 1 x H x W -> T aligned feature maps C x H x W.
  std::vector<Var> operator()(const std::vector<Var>& images, PropagationTrace* trace = nullptr) const;
  NeighborFlows estimate_neighbor_flows(const std::vector<Var>& images) const;

  const MgdaConfig& config() const { return config_; }
  const FeatureExtractor& extractor() const { return extractor_; }
  const FlowEstimator& flow() const { return flow_; }
  Propagator& propagator() { return propagator_; }

 private:
  MgdaConfig config_;
  FeatureExtractor& extractor_;
  FlowEstimator& flow_;
  Propagator& propagator_;
};

}  // namespace nn

/// Pairwise alignment of F_i onto F_{i+1} given the flow O (single neighbour).
nn::Var align_pair(const nn::DeformableAlignment& unit, const nn::Var& f_i, const nn::Var& f_next, const nn::Var& flow);

}  // namespace cine
