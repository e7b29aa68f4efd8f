#include "cine/mrf.hpp"

#include <stdexcept>

namespace cine {

const char* to_string(MrfVariant v) {
  switch (v) {
    case MrfVariant::conv: return "conv";
    case MrfVariant::attention: return "attention";
    case MrfVariant::hybrid: return "hybrid";
  }
  return "?";
}

MrfVariant mrf_variant_from_string(const std::string& s) {
  if (s == "conv" || s == "cnn") return MrfVariant::conv;
  if (s == "attention" || s == "transformer") return MrfVariant::attention;
  if (s == "hybrid") return MrfVariant::hybrid;
  throw std::invalid_argument("unknown mrf block type '" + s + "' (expected conv|attention|hybrid)");
}

void MrfConfig::validate() const {
  if (stages < 1) throw std::invalid_argument("mrf.stages must be >= 1");
  if (channels < 1) throw std::invalid_argument("mrf.channels must be positive");
  if (window < 1) throw std::invalid_argument("mrf.window must be positive");
  if (blocks_per_stage < 1) throw std::invalid_argument("mrf.blocks_per_stage must be >= 1");
  if (mlp_ratio < 1) throw std::invalid_argument("mrf.mlp_ratio must be >= 1");
  const int branches = std::min(stages, 3);
  for (int b = 0; b < branches; ++b) {
    if (block_type(b) != BranchBlock::attention) continue;
    const int h = heads[static_cast<std::size_t>(b)];
    if (h < 1 || branch_channels(b) % h)
      throw std::invalid_argument("mrf.heads: branch " + std::to_string(b + 1) + " width " + std::to_string(branch_channels(b)) +
                                  " not divisible by " + std::to_string(h) + " heads");
  }
}

BranchBlock MrfConfig::block_type(int branch) const {
  switch (variant) {
    case MrfVariant::conv: return BranchBlock::conv;
    case MrfVariant::attention: return BranchBlock::attention;
    case MrfVariant::hybrid: return branch == 0 ? BranchBlock::conv : BranchBlock::attention;
  }
  return BranchBlock::conv;
}

int MrfConfig::pad_multiple() const { return window << (std::min(stages, 3) - 1); }

namespace nn {

Var downsample(const Var& x) {
  const auto& v = x.value();
  if (v.ndim() != 3) throw std::invalid_argument("downsample: expected C x H x W, got " + shape_string(v.shape()));
  return max_pool2(pad_replicate(x, v.height() + v.height() % 2, v.width() + v.width() % 2));
}

Var upsample(const Var& x) { return upsample2(x); }

SwinLayer::SwinLayer(int channels, int heads, int window, int shift, int mlp_ratio, Rng& rng)
    : heads_(heads),
      window_(window),
      shift_(shift),
      norm1_(add_module<LayerNorm>("norm1", channels)),
      qkv_(add_module<Conv2d>("qkv", channels, 3 * channels, 1, rng)),
      rel_bias_(nullptr),
      proj_(add_module<Conv2d>("proj", channels, channels, 1, rng)),
      norm2_(add_module<LayerNorm>("norm2", channels)),
      fc1_(add_module<Conv2d>("fc1", channels, mlp_ratio * channels, 1, rng)),
      fc2_(add_module<Conv2d>("fc2", mlp_ratio * channels, channels, 1, rng)) {
  const int span = 2 * window - 1;
  Tensor table({span * span, heads});
  for (Eigen::Index i = 0; i < table.size(); ++i) table[i] = rng.uniform(-0.02, 0.02);
  rel_bias_ = &register_parameter("relative_bias", std::move(table));
}

Var SwinLayer::operator()(const Var& x) const {
  const Var a = proj_(window_attention(qkv_(norm1_(x)), *rel_bias_, heads_, window_, shift_));
  const Var y = x + a;
  return y + fc2_(gelu(fc1_(norm2_(y))));
}

AttentionBlock::AttentionBlock(int channels, int heads, int window, int mlp_ratio, Rng& rng)
    : window_(window),
      regular_(add_module<SwinLayer>("regular", channels, heads, window, 0, mlp_ratio, rng)),
      shifted_(add_module<SwinLayer>("shifted", channels, heads, window, window / 2, mlp_ratio, rng)) {}

Var AttentionBlock::operator()(const Var& x) const {
  const auto& v = x.value();
  if (v.ndim() != 3) throw std::invalid_argument("attention block: expected C x H x W, got " + shape_string(v.shape()));
  const int w = std::min({window_, v.height(), v.width()});
  if (v.height() % w || v.width() % w)
    throw std::invalid_argument("attention block: " + std::to_string(v.height()) + "x" + std::to_string(v.width()) +
                                " is not divisible by window " + std::to_string(window_));
  return shifted_(regular_(x));
}

Mrf::Mrf(int in_channels, const MrfConfig& config, Rng& rng)
    : config_(config), in_channels_(in_channels), stem_(add_module<Conv2d>("stem", in_channels, config.channels, 3, rng)) {
  config_.validate();
  if (in_channels < 1) throw std::invalid_argument("mrf: input channels must be positive");
  for (int s = 0; s < config_.stages; ++s) {
    const int nb = std::min(s + 1, 3);
    Stage st;
    st.blocks.resize(static_cast<std::size_t>(nb));
    for (int b = 0; b < nb; ++b) {
      const int c = config_.branch_channels(b);
      for (int k = 0; k < config_.blocks_per_stage; ++k) {
        const std::string name = "stage" + std::to_string(s) + ".branch" + std::to_string(b) + ".block" + std::to_string(k);
        Module* m = config_.block_type(b) == BranchBlock::conv
                        ? static_cast<Module*>(&add_module<ResidualBlock>(name, c, rng))
                        : static_cast<Module*>(&add_module<AttentionBlock>(name, c, config_.heads[static_cast<std::size_t>(b)],
                                                                           config_.window, config_.mlp_ratio, rng));
        st.blocks[static_cast<std::size_t>(b)].push_back(m);
      }
    }
    if (s + 1 < config_.stages) {
      const int next = std::min(s + 2, 3);
      st.exchange.assign(static_cast<std::size_t>(next), std::vector<Conv2d*>(static_cast<std::size_t>(nb), nullptr));
      for (int t = 0; t < next; ++t)
        for (int j = 0; j < nb; ++j) {
          if (t == j) continue;
          st.exchange[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] =
              &add_module<Conv2d>("stage" + std::to_string(s) + ".fuse" + std::to_string(j) + "to" + std::to_string(t),
                                  config_.branch_channels(j), config_.branch_channels(t), 1, rng);
        }
    }
    stages_.push_back(std::move(st));
  }
  const int nb = std::min(config_.stages, 3);
  head_proj_.assign(static_cast<std::size_t>(nb), nullptr);
  for (int b = 1; b < nb; ++b)
    head_proj_[static_cast<std::size_t>(b)] =
        &add_module<Conv2d>("head.fuse" + std::to_string(b), config_.branch_channels(b), config_.channels, 1, rng);
  head_ = &add_module<Conv2d>("head.out", config_.channels, 1, 3, rng);
}

Var Mrf::run_block(const Module* block, BranchBlock type, const Var& x) const {
  if (type == BranchBlock::conv) return (*static_cast<const ResidualBlock*>(block))(x);
  return (*static_cast<const AttentionBlock*>(block))(x);
}

Var Mrf::resample(const Var& x, int from, int to, const Conv2d* proj) const {
  if (from == to) return x;
  Var y = x;
  if (to > from) {
    for (int i = from; i < to; ++i) y = downsample(y);
    return (*proj)(y);
  }
  y = (*proj)(y);
  for (int i = to; i < from; ++i) y = upsample(y);
  return y;
}

std::vector<Var> Mrf::branches(const Var& features) const {
  const auto& v = features.value();
  if (v.ndim() != 3 || v.channels() != in_channels_)
    throw std::invalid_argument("mrf: expected " + std::to_string(in_channels_) + " x H x W features, got " + shape_string(v.shape()));
  const int m = config_.pad_multiple();
  const int Hp = (v.height() + m - 1) / m * m, Wp = (v.width() + m - 1) / m * m;
  std::vector<Var> state{leaky_relu(stem_(pad_reflect(features, Hp, Wp)), 0.1)};
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const Stage& st = stages_[s];
    for (std::size_t b = 0; b < state.size(); ++b)
      for (const Module* blk : st.blocks[b]) state[b] = run_block(blk, config_.block_type(static_cast<int>(b)), state[b]);
    if (st.exchange.empty()) continue;
    std::vector<Var> next;
    for (std::size_t t = 0; t < st.exchange.size(); ++t) {
      std::vector<Var> terms;
      for (std::size_t j = 0; j < state.size(); ++j)
        terms.push_back(resample(state[j], static_cast<int>(j), static_cast<int>(t), st.exchange[t][j]));
      next.push_back(terms.size() == 1 ? terms.front() : add_n(terms));
    }
    state = std::move(next);
  }
  return state;
}

Var Mrf::operator()(const Var& features, const Var& base) const {
  const auto& v = features.value();
  const auto state = branches(features);
  std::vector<Var> terms;
  for (std::size_t b = 0; b < state.size(); ++b) terms.push_back(resample(state[b], static_cast<int>(b), 0, head_proj_[b]));
  const Var fused = terms.size() == 1 ? terms.front() : add_n(terms);
  Var out = crop((*head_)(fused), v.height(), v.width());
  if (base.defined()) {
    if (base.shape() != Shape{1, v.height(), v.width()})
      throw std::invalid_argument("mrf: base image must be 1 x H x W, got " + shape_string(base.shape()));
    out = out + base;
  }
  return out;
}

ConvHead::ConvHead(int in_channels, int width, Rng& rng)
    : c1_(add_module<Conv2d>("conv1", in_channels, width, 3, rng)),
      c2_(add_module<Conv2d>("conv2", width, width, 3, rng)),
      c3_(add_module<Conv2d>("conv3", width, 1, 3, rng)) {}

Var ConvHead::operator()(const Var& features, const Var& base) const {
  Var out = c3_(leaky_relu(c2_(leaky_relu(c1_(features), 0.1)), 0.1));
  if (base.defined()) out = out + base;
  return out;
}

}  // namespace nn
}  // namespace cine
