#include "cine/mgda.hpp"

#include <algorithm>
#include <stdexcept>

namespace cine {

const char* to_string(PropagationMode m) { return m == PropagationMode::first_order ? "FOGP" : "SOGP"; }

PropagationMode propagation_mode_from_string(const std::string& s) {
  if (s == "FOGP" || s == "fogp" || s == "first_order") return PropagationMode::first_order;
  if (s == "SOGP" || s == "sogp" || s == "second_order") return PropagationMode::second_order;
  throw std::invalid_argument("unknown propagation mode '" + s + "' (expected FOGP|SOGP)");
}

void MgdaConfig::validate() const {
  if (channels < 1) throw std::invalid_argument("mgda.channels must be positive");
  if (extractor_blocks < 0) throw std::invalid_argument("mgda.extractor_blocks must be >= 0");
  if (pyramid_levels < 1) throw std::invalid_argument("mgda.pyramid_levels must be >= 1");
  if (flow_channels < 2) throw std::invalid_argument("mgda.flow_channels must be >= 2");
  if (flow_kernel < 1 || flow_kernel % 2 == 0) throw std::invalid_argument("mgda.flow_kernel must be odd");
  if (offset_groups < 2 || offset_groups % 2 || (2 * channels) % offset_groups)
    throw std::invalid_argument("mgda.offset_groups must be even and divide 2 * channels");
  if (!(offset_clamp_fraction > 0)) throw std::invalid_argument("mgda.offset_clamp_fraction must be positive");
  if (backbone_blocks < 0) throw std::invalid_argument("mgda.backbone_blocks must be >= 0");
}

namespace nn {

namespace {

Var zeros_like(const Var& v, int channels) {
  return Var(Tensor({channels, v.value().height(), v.value().width()}));
}

}  // namespace

FeatureExtractor::FeatureExtractor(int channels, int blocks, Rng& rng) : stem_(add_module<Conv2d>("stem", 1, channels, 3, rng)) {
  for (int i = 0; i < blocks; ++i) blocks_.push_back(&add_module<ResidualBlock>("block" + std::to_string(i), channels, rng));
}

Var FeatureExtractor::operator()(const Var& image) const {
  if (image.value().ndim() != 3 || image.value().channels() != 1)
    throw std::invalid_argument("FeatureExtractor: expected a 1 x H x W image, got " + shape_string(image.shape()));
  Var x = leaky_relu(stem_(image), 0.1);
  for (const auto* b : blocks_) x = (*b)(x);
  return x;
}

FlowPredictor::FlowPredictor(int width, int kernel, Rng& rng) {
  const int half = std::max(1, width / 2);
  const int widths[] = {4, width, 2 * width, width, half, 2};
  for (int i = 0; i < 5; ++i)
    layers_.push_back(&add_module<Conv2d>("conv" + std::to_string(i), widths[i], widths[i + 1], kernel, rng, true, i == 4 ? 0.0 : 1.0));
}

Var FlowPredictor::operator()(const Var& input) const {
  Var x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = (*layers_[i])(x);
    if (i + 1 < layers_.size()) x = relu(x);
  }
  return x;
}

FlowEstimator::FlowEstimator(int levels, int width, int kernel, double clamp_fraction, Rng& rng) : clamp_fraction_(clamp_fraction) {
  if (levels < 1) throw std::invalid_argument("FlowEstimator: need at least one level");
  for (int l = 0; l < levels; ++l) predictors_.push_back(&add_module<FlowPredictor>("level" + std::to_string(l), width, kernel, rng));
}

Var FlowEstimator::operator()(const Var& reference, const Var& target) const {
  const auto& r = reference.value();
  if (r.ndim() != 3 || r.channels() != 1 || !r.same_shape(target.value()))
    throw std::invalid_argument("FlowEstimator: expected two 1 x H x W images of equal shape, got " + shape_string(reference.shape()) +
                                " and " + shape_string(target.shape()));
  const int H = r.height(), W = r.width();
  const int L = levels();
  const int m = 1 << (L - 1);
  const int Hp = (H + m - 1) / m * m, Wp = (W + m - 1) / m * m;
  std::vector<Var> refs{pad_reflect(reference, Hp, Wp)}, tgts{pad_reflect(target, Hp, Wp)};
  for (int l = 1; l < L; ++l) {
    refs.push_back(avg_pool2(refs.back()));
    tgts.push_back(avg_pool2(tgts.back()));
  }
  Var flow(Tensor({2, Hp / m, Wp / m}));
  for (int l = L - 1; l >= 0; --l) {
    if (l != L - 1) flow = scale(upsample2(flow), 2.0);
    const Var warped = warp(refs[static_cast<std::size_t>(l)], flow);
    flow = flow + (*predictors_[static_cast<std::size_t>(L - 1 - l)])(concat({tgts[static_cast<std::size_t>(l)], warped, flow}));
  }
  const double bound = clamp_fraction_ * std::max(H, W);
  return clamp(crop(flow, H, W), -bound, bound);
}

DeformableAlignment::DeformableAlignment(int channels, int neighbors, int groups, double clamp_fraction, Rng& rng)
    : channels_(channels),
      neighbors_(neighbors),
      groups_(groups),
      clamp_fraction_(clamp_fraction),
      offset_head_(add_module<Conv2d>("offset_head", channels * (1 + neighbors), 2 * groups * 9, 3, rng, true, 0.0)),
      mask_head_(add_module<Conv2d>("mask_head", channels * (1 + neighbors), groups * 9, 3, rng, true, 0.0)),
      dcn_(add_module<Conv2d>("dcn", channels * neighbors, channels, 3, rng)) {
  if (neighbors < 1 || groups < neighbors || groups % neighbors || (channels * neighbors) % groups)
    throw std::invalid_argument("DeformableAlignment: offset groups must split evenly across neighbours and channels");
}

Var DeformableAlignment::broadcast_flows(const std::vector<Var>& flows) const {
  // Offset channel (g * 9 + tap) * 2 + {dx, dy}; groups are ordered by
  // neighbour, so each neighbour's flow is tiled over its groups' taps.
  std::vector<Var> parts;
  for (const auto& f : flows) parts.push_back(repeat(f, groups_ / neighbors_ * 9));
  return parts.size() == 1 ? parts.front() : concat(parts);
}

DeformableAlignment::Result DeformableAlignment::align(const Var& current, const std::vector<Var>& neighbors,
                                                       const std::vector<Var>& flows) const {
  if (static_cast<int>(neighbors.size()) != neighbors_ || flows.size() != neighbors.size())
    throw std::invalid_argument("DeformableAlignment: expected " + std::to_string(neighbors_) + " neighbours with flows");
  std::vector<Var> cond{current};
  for (std::size_t k = 0; k < neighbors.size(); ++k) {
    if (neighbors[k].value().channels() != channels_ || current.value().channels() != channels_)
      throw std::invalid_argument("DeformableAlignment: channel mismatch, expected " + std::to_string(channels_));
    cond.push_back(warp(neighbors[k], flows[k]));
  }
  const Var fc = concat(cond);
  return align_with_heads(current, neighbors, flows, offset_head_(fc), mask_head_(fc));
}

DeformableAlignment::Result DeformableAlignment::align_with_heads(const Var& current, const std::vector<Var>& neighbors,
                                                                  const std::vector<Var>& flows, const Var& residual_offsets,
                                                                  const Var& mask_logits) const {
  (void)current;
  const auto& v = neighbors.front().value();
  const double bound = clamp_fraction_ * std::max(v.height(), v.width());
  Result r;
  r.offsets = clamp(residual_offsets + broadcast_flows(flows), -bound, bound);
  r.modulation = sigmoid(mask_logits);
  const Var input = neighbors.size() == 1 ? neighbors.front() : concat(neighbors);
  r.aligned = deform_conv2d(input, r.offsets, r.modulation, dcn_.weight(), dcn_.bias(), groups_);
  return r;
}

Propagator::Propagator(int channels, int groups, int backbone_blocks, double clamp_fraction, PropagationMode mode, Rng& rng)
    : channels_(channels), mode_(mode) {
  backbone_blocks_.resize(4);
  for (int b = 0; b < 4; ++b) {
    const std::string name = PropagationTrace::kBranchNames[static_cast<std::size_t>(b)];
    align_.push_back(&add_module<DeformableAlignment>(name + ".align", channels, 2, groups, clamp_fraction, rng));
    backbone_in_.push_back(&add_module<Conv2d>(name + ".backbone_in", (2 + b) * channels, channels, 3, rng));
    for (int k = 0; k < backbone_blocks; ++k)
      backbone_blocks_[static_cast<std::size_t>(b)].push_back(
          &add_module<ResidualBlock>(name + ".backbone" + std::to_string(k), channels, rng));
  }
  fusion_ = &add_module<Conv2d>("fusion", 5 * channels, channels, 1, rng);
}

std::vector<std::vector<Var>> Propagator::branch_states(const std::vector<Var>& features, const NeighborFlows& flows,
                                                        PropagationTrace* trace) const {
  const int T = static_cast<int>(features.size());
  if (T < 2) throw std::invalid_argument("propagate: need at least 2 frames");
  if (static_cast<int>(flows.forward.size()) != T || static_cast<int>(flows.backward.size()) != T)
    throw std::invalid_argument("propagate: need forward and backward flows for every frame");
  std::vector<std::vector<Var>> states(4, std::vector<Var>(static_cast<std::size_t>(T)));
  if (trace) {
    *trace = PropagationTrace{};
    for (auto& d : trace->dependencies) d.assign(static_cast<std::size_t>(T), {});
  }
  const Var zero_feat = zeros_like(features.front(), channels_);
  const Var zero_flow = zeros_like(features.front(), 2);

  for (int b = 0; b < 4; ++b) {
    const bool forward = b % 2 == 0;
    const int dir = forward ? -1 : 1;  // neighbour offset
    auto& own = states[static_cast<std::size_t>(b)];
    const auto& flow_to_neighbor = forward ? flows.forward : flows.backward;
    for (int step = 0; step < T; ++step) {
      const int i = forward ? step : T - 1 - step;
      std::set<int> deps{i};
      Var aligned = zero_feat;
      if (step >= 1) {
        const int j1 = i + dir;
        const Var& flow1 = flow_to_neighbor[static_cast<std::size_t>(i)];
        Var n2 = zero_feat, flow2 = zero_flow;
        if (mode_ == PropagationMode::second_order && step >= 2) {
          const int j2 = i + 2 * dir;
          flow2 = flow1 + warp(flow_to_neighbor[static_cast<std::size_t>(j1)], flow1);
          n2 = own[static_cast<std::size_t>(j2)];
          deps.insert(j2);
        }
        aligned = align_[static_cast<std::size_t>(b)]->align(features[static_cast<std::size_t>(i)], {own[static_cast<std::size_t>(j1)], n2}, {flow1, flow2}).aligned;
        deps.insert(j1);
      }
      std::vector<Var> inputs{features[static_cast<std::size_t>(i)]};
      for (int e = 0; e < b; ++e) inputs.push_back(states[static_cast<std::size_t>(e)][static_cast<std::size_t>(i)]);
      inputs.push_back(aligned);
      Var h = leaky_relu((*backbone_in_[static_cast<std::size_t>(b)])(concat(inputs)), 0.1);
      for (const auto* blk : backbone_blocks_[static_cast<std::size_t>(b)]) h = (*blk)(h);
      own[static_cast<std::size_t>(i)] = aligned + h;
      if (trace) {
        trace->dependencies[static_cast<std::size_t>(b)][static_cast<std::size_t>(i)] = deps;
        trace->order.push_back(std::string(PropagationTrace::kBranchNames[static_cast<std::size_t>(b)]) + ":" + std::to_string(i));
      }
    }
  }
  return states;
}

std::vector<Var> Propagator::operator()(const std::vector<Var>& features, const NeighborFlows& flows, PropagationTrace* trace) const {
  const auto states = branch_states(features, flows, trace);
  std::vector<Var> out;
  for (std::size_t i = 0; i < features.size(); ++i)
    out.push_back((*fusion_)(concat({features[i], states[0][i], states[1][i], states[2][i], states[3][i]})));
  return out;
}

Mgda::Mgda(const MgdaConfig& config, Rng& rng)
    : config_(config),
      extractor_(add_module<FeatureExtractor>("extractor", config.channels, config.extractor_blocks, rng)),
      flow_(add_module<FlowEstimator>("flow", config.pyramid_levels, config.flow_channels, config.flow_kernel, config.offset_clamp_fraction, rng)),
      propagator_(add_module<Propagator>("propagator", config.channels, config.offset_groups, config.backbone_blocks,
                                         config.offset_clamp_fraction, config.mode, rng)) {
  config_.validate();
}

NeighborFlows Mgda::estimate_neighbor_flows(const std::vector<Var>& images) const {
  const std::size_t T = images.size();
  NeighborFlows flows;
  flows.forward.resize(T);
  flows.backward.resize(T);
  for (std::size_t i = 0; i < T; ++i) {
    if (i > 0) flows.forward[i] = flow_(images[i - 1], images[i]);
    if (i + 1 < T) flows.backward[i] = flow_(images[i + 1], images[i]);
  }
  return flows;
}

std::vector<Var> Mgda::operator()(const std::vector<Var>& images, PropagationTrace* trace) const {
  if (images.size() < 2) throw std::invalid_argument("MGDA: need at least 2 frames");
  std::vector<Var> features;
  for (const auto& im : images) features.push_back(extractor_(im));
  if (!config_.enabled) return features;
  return propagator_(features, estimate_neighbor_flows(images), trace);
}

}  // namespace nn

nn::Var align_pair(const nn::DeformableAlignment& unit, const nn::Var& f_i, const nn::Var& f_next, const nn::Var& flow) {
  if (unit.neighbors() != 1) throw std::invalid_argument("align_pair: alignment unit must take a single neighbour");
  return unit.align(f_next, {f_i}, {flow}).aligned;
}

}  // namespace cine
