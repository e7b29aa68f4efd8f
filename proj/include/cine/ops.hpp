#pragma once

#include <vector>

#include "cine/autograd.hpp"

namespace cine::nn {

// Elementwise arithmetic; shapes must match exactly.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Real s);
Var add_n(const std::vector<Var>& xs);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(Real s, const Var& a) { return scale(a, s); }

Var relu(const Var& x);
Var leaky_relu(const Var& x, Real slope);
Var sigmoid(const Var& x);
/// Exact GELU, x * Phi(x).
Var gelu(const Var& x);
Var clamp(const Var& x, Real lo, Real hi);

/// Concatenation / slicing / tiling along the leading (channel) axis.
Var concat(const std::vector<Var>& xs);
Var slice(const Var& x, int begin, int count);
Var repeat(const Var& x, int times);

Var sum(const Var& x);
/// sum(x * weights) for a constant weight tensor; used by gradient checks.
Var weighted_sum(const Var& x, const Tensor& weights);
/// mean((a - b)^2); b may be a constant.
Var mse_loss(const Var& prediction, const Var& target);

/// Stride-1 'same' convolution: x C x H x W, weight O x C x k x k (k odd),
/// optional bias O.
Var conv2d(const Var& x, const Var& weight, const Var& bias);

/// Per-channel normalisation over H x W, no affine parameters.
Var instance_norm(const Var& x, Real eps = 1e-5);
/// Per-pixel normalisation over channels with affine gamma/beta (length C).
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps = 1e-5);

/// 2x2 stride-2 max / mean pooling; H and W must be even.
Var max_pool2(const Var& x);
Var avg_pool2(const Var& x);
/// 2x bilinear upsampling, half-pixel centres (align_corners = false).
Var upsample2(const Var& x);

/// Reflection padding at the bottom/right up to (height, width), and the
/// matching crop.
Var pad_reflect(const Var& x, int height, int width);
Var crop(const Var& x, int height, int width);
Var pad_replicate(const Var& x, int height, int width);

/// Backward warp: out(c, r, q) = x(c, r + flow_y, q + flow_x), bilinear, zero
/// outside the image. flow is 2 x H x W, channel 0 horizontal, 1 vertical.
Var warp(const Var& x, const Var& flow);

/// Modulated deformable convolution (stride 1, 'same' padding).
///   x       C x H x W
///   offset  2*G*K*K x H x W, channel (g*K*K + tap)*2 + {0: dx, 1: dy}
///   mask    G*K*K x H x W, channel g*K*K + tap
///   weight  O x C x K x K, bias O (optional)
/// Input channel c belongs to offset group c / (C / G).
Var deform_conv2d(const Var& x, const Var& offset, const Var& mask, const Var& weight, const Var& bias, int groups);

/// Windowed multi-head self-attention on a fused q/k/v map (3C x H x W),
/// with learned relative position bias ((2w-1)^2 x heads). With shift > 0
/// windows are cyclically shifted and cross-region pairs are masked.
Var window_attention(const Var& qkv, const Var& rel_bias, int heads, int window, int shift);

/// Centered 2-channel (re, im) k-space -> 2-channel image, orthonormal
/// inverse DFT.
Var kspace_to_image(const Var& kspace);
/// Inverse of kspace_to_image.
Var image_to_kspace(const Var& image);
/// sqrt(re^2 + im^2 + eps) of a 2-channel tensor, 1 x H x W.
Var complex_magnitude(const Var& x, Real eps = 1e-12);
/// Replaces rows flagged in `row_mask` with the measured values.
Var replace_rows(const Var& predicted, const Tensor& measured, const std::vector<std::uint8_t>& row_mask);

}  // namespace cine::nn
