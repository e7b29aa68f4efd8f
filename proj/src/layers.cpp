#include "cine/layers.hpp"

#include <cmath>

namespace cine::nn {

std::vector<NamedParameter> Module::parameters() const {
  std::vector<NamedParameter> out;
  collect("", out);
  return out;
}

std::size_t Module::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : parameters()) n += static_cast<std::size_t>(p.value().size());
  return n;
}

void Module::zero_grad() const {
  for (const auto& [name, p] : parameters()) p.zero_grad();
}

Var& Module::register_parameter(std::string name, Tensor init) {
  params_.emplace_back(std::move(name), Var(std::move(init), true));
  return params_.back().second;
}

void Module::register_module(std::string name, Module& child) { children_.emplace_back(std::move(name), &child); }

void Module::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
  for (const auto& [name, p] : params_) out.emplace_back(prefix + name, p);
  for (const auto& [name, child] : children_) child->collect(prefix + name + ".", out);
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, Rng& rng, bool bias, Real gain) : in_(in_channels), out_(out_channels) {
  const Real bound = 1.0 / std::sqrt(static_cast<Real>(in_channels * kernel * kernel));
  Tensor w({out_channels, in_channels, kernel, kernel});
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = gain * rng.uniform(-bound, bound);
  weight_ = &register_parameter("weight", std::move(w));
  if (bias) {
    Tensor b({out_channels});
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = gain * rng.uniform(-bound, bound);
    bias_ = &register_parameter("bias", std::move(b));
  }
}

Var Conv2d::operator()(const Var& x) const { return conv2d(x, *weight_, bias_ ? *bias_ : Var()); }

ResidualBlock::ResidualBlock(int channels, Rng& rng)
    : conv1_(add_module<Conv2d>("conv1", channels, channels, 3, rng)), conv2_(add_module<Conv2d>("conv2", channels, channels, 3, rng)) {}

Var ResidualBlock::operator()(const Var& x) const { return x + conv2_(relu(conv1_(x))); }

LayerNorm::LayerNorm(int channels) {
  gamma_ = &register_parameter("gamma", Tensor({channels}, 1.0));
  beta_ = &register_parameter("beta", Tensor({channels}, 0.0));
}

Var LayerNorm::operator()(const Var& x) const { return layer_norm(x, *gamma_, *beta_); }

}  // namespace cine::nn
