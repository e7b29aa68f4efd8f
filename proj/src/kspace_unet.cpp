#include "cine/kspace_unet.hpp"

#include <algorithm>
#include <stdexcept>

#include "cine/fourier.hpp"

namespace cine {

void KNetConfig::validate() const {
  if (depth < 2) throw std::invalid_argument("knet.depth must be >= 2");
  if (base_channels < 8) throw std::invalid_argument("knet.base_channels must be >= 8");
}

namespace nn {

UNetBlock::UNetBlock(int in_channels, int out_channels, Rng& rng)
    : conv1_(add_module<Conv2d>("conv1", in_channels, out_channels, 3, rng, false)),
      conv2_(add_module<Conv2d>("conv2", out_channels, out_channels, 3, rng, false)) {}

Var UNetBlock::operator()(const Var& x) const {
  Var y = leaky_relu(instance_norm(conv1_(x)), 0.2);
  return leaky_relu(instance_norm(conv2_(y)), 0.2);
}

KSpaceUNet::KSpaceUNet(const KNetConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const int b = config.base_channels;
  int ch = b;
  encoder_.push_back(&add_module<UNetBlock>("enc0", 2, b, rng));
  for (int i = 1; i <= config.depth; ++i) {
    encoder_.push_back(&add_module<UNetBlock>("enc" + std::to_string(i), ch, ch * 2, rng));
    ch *= 2;
  }
  for (int i = config.depth - 1; i >= 0; --i) {
    up_.push_back(&add_module<Conv2d>("up" + std::to_string(i), ch, ch / 2, 1, rng));
    decoder_.push_back(&add_module<UNetBlock>("dec" + std::to_string(i), ch, ch / 2, rng));
    ch /= 2;
  }
  // Small output gain keeps the initial correction close to zero.
  head_ = &add_module<Conv2d>("head", b, 2, 1, rng, true, 0.1);
}

Var KSpaceUNet::forward(const Var& kspace) const {
  const auto& v = kspace.value();
  if (v.ndim() != 3 || v.channels() != 2)
    throw std::invalid_argument("KSpaceUNet: expected 2 x H x W k-space, got " + shape_string(v.shape()));
  const int H = v.height(), W = v.width();
  const int m = 1 << config_.depth;
  const int Hp = (H + m - 1) / m * m, Wp = (W + m - 1) / m * m;
  Var x = pad_reflect(kspace, Hp, Wp);

  std::vector<Var> skips;
  Var y = (*encoder_[0])(x);
  for (int i = 1; i <= config_.depth; ++i) {
    skips.push_back(y);
    y = (*encoder_[static_cast<std::size_t>(i)])(max_pool2(y));
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    Var up = (*up_[i])(upsample2(y));
    y = (*decoder_[i])(concat({skips[skips.size() - 1 - i], up}));
  }
  return kspace + crop((*head_)(y), H, W);
}

std::vector<Var> KSpaceUNet::forward(const std::vector<Var>& kspace) const {
  Real peak = 0.0;
  for (const auto& k : kspace) {
    const auto& t = k.value();
    peak = std::max(peak, (t.matrix().row(0).array().square() + t.matrix().row(1).array().square()).sqrt().maxCoeff());
  }
  const Real s = peak > 0.0 ? peak : 1.0;
  std::vector<Var> out;
  out.reserve(kspace.size());
  for (const auto& k : kspace) out.push_back(scale(forward(scale(k, 1.0 / s)), s));
  return out;
}

Tensor to_tensor(const ComplexImage& z) {
  Tensor t({2, static_cast<int>(z.rows()), static_cast<int>(z.cols())});
  for (int h = 0; h < z.rows(); ++h)
    for (int w = 0; w < z.cols(); ++w) {
      t.at(0, h, w) = z(h, w).real();
      t.at(1, h, w) = z(h, w).imag();
    }
  return t;
}

ComplexImage to_complex_image(const Tensor& t) {
  ComplexImage z(t.height(), t.width());
  for (int h = 0; h < t.height(); ++h)
    for (int w = 0; w < t.width(); ++w) z(h, w) = Complex(t.at(0, h, w), t.at(1, h, w));
  return z;
}

}  // namespace nn

KSpaceSequence reconstruct_kspace(const KSpaceSequence& measured, const nn::KSpaceUNet& net) {
  if (!measured.centered) throw std::invalid_argument("reconstruct_kspace: expected centered k-space");
  nn::NoGradGuard no_grad;
  std::vector<nn::Var> in;
  for (const auto& f : measured.frames) {
    if (!f.allFinite()) throw std::invalid_argument("reconstruct_kspace: non-finite k-space");
    in.emplace_back(nn::to_tensor(f));
  }
  KSpaceSequence out;
  out.centered = true;
  for (const auto& v : net.forward(in)) out.frames.push_back(nn::to_complex_image(v.value()));
  return out;
}

ComplexCineSequence to_image(const KSpaceSequence& reconstructed, const KSpaceSequence& measured, const SamplingMask& mask,
                             bool use_data_consistency) {
  if (!use_data_consistency) return zero_filled(reconstructed);
  if (reconstructed.num_frames() != measured.num_frames() || reconstructed.centered != measured.centered)
    throw std::invalid_argument("to_image: reconstructed and measured k-space disagree in layout");
  KSpaceSequence merged = reconstructed;
  for (std::size_t t = 0; t < merged.frames.size(); ++t) {
    if (mask.size() != merged.frames[t].rows()) throw std::invalid_argument("to_image: mask length mismatch");
    for (int r = 0; r < mask.size(); ++r)
      if (mask.sampled(r)) merged.frames[t].row(r) = measured.frames[t].row(r);
  }
  return zero_filled(merged);
}

}  // namespace cine
