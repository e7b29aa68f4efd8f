#pragma once

#include <deque>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cine/ops.hpp"
#include "cine/random.hpp"

namespace cine::nn {

using NamedParameter = std::pair<std::string, Var>;

/// Owner of named parameters and child modules. Modules are neither copied
/// nor moved, so child pointers registered in the constructor stay valid.
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  /// All parameters, depth first, with dotted names.
  std::vector<NamedParameter> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad() const;

 protected:
  Var& register_parameter(std::string name, Tensor init);
  void register_module(std::string name, Module& child);
  template <typename M, typename... Args>
  M& add_module(std::string name, Args&&... args) {
    auto owned = std::make_unique<M>(std::forward<Args>(args)...);
    M& ref = *owned;
    register_module(std::move(name), ref);
    owned_.push_back(std::move(owned));
    return ref;
  }

 private:
  void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;

  std::deque<std::pair<std::string, Var>> params_;  // stable references
  std::vector<std::pair<std::string, Module*>> children_;
  std::vector<std::unique_ptr<Module>> owned_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and bias, scaled by `gain`.
class Conv2d : public Module {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, Rng& rng, bool bias = true, Real gain = 1.0);
  Var operator()(const Var& x) const;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Var& weight() { return *weight_; }
  Var& bias() { return *bias_; }
  const Var& weight() const { return *weight_; }
  Var bias() const { return bias_ ? *bias_ : Var(); }

 private:
  int in_, out_;
  Var* weight_;
  Var* bias_ = nullptr;
};

/// x + conv(relu(conv(x))).
class ResidualBlock : public Module {
 public:
  ResidualBlock(int channels, Rng& rng);
  Var operator()(const Var& x) const;

 private:
  Conv2d& conv1_;
  Conv2d& conv2_;
};

/// Per-pixel layer norm over channels.
class LayerNorm : public Module {
 public:
  LayerNorm(int channels);
  Var operator()(const Var& x) const;

 private:
  Var* gamma_;
  Var* beta_;
};

}  // namespace cine::nn
