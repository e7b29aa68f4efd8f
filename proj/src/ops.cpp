#include "cine/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "cine/fourier.hpp"

namespace cine::nn {

namespace {

void require_same(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

void require_chw(const Var& x, const char* op) {
  if (x.value().ndim() != 3) throw std::invalid_argument(std::string(op) + ": expected a C x H x W tensor, got " + shape_string(x.shape()));
}

template <typename F>
Var unary(const Var& x, F&& derivative_fn, Tensor out) {
  return make_op(std::move(out), {x}, [derivative_fn](Node& self) {
    Tensor g = Tensor::zeros_like(self.value);
    derivative_fn(self, g);
    self.parents[0]->accumulate(g);
  });
}

inline void kink(std::uint64_t v) {
  if (KinkMonitor::active()) KinkMonitor::record(v);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out(a.shape(), a.value().vec() + b.value().vec());
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (self.parent_needs_grad(i)) self.parents[i]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out(a.shape(), a.value().vec() - b.value().vec());
  return make_op(std::move(out), {a, b}, [](Node& self) {
    if (self.parent_needs_grad(0)) self.parents[0]->accumulate(self.grad);
    if (self.parent_needs_grad(1)) self.parents[1]->accumulate(Tensor(self.grad.shape(), -self.grad.vec()));
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out(a.shape(), a.value().vec().cwiseProduct(b.value().vec()));
  return make_op(std::move(out), {a, b}, [](Node& self) {
    if (self.parent_needs_grad(0))
      self.parents[0]->accumulate(Tensor(self.grad.shape(), self.grad.vec().cwiseProduct(self.parent_value(1).vec())));
    if (self.parent_needs_grad(1))
      self.parents[1]->accumulate(Tensor(self.grad.shape(), self.grad.vec().cwiseProduct(self.parent_value(0).vec())));
  });
}

Var scale(const Var& a, Real s) {
  Tensor out(a.shape(), a.value().vec() * s);
  return make_op(std::move(out), {a}, [s](Node& self) { self.parents[0]->accumulate(Tensor(self.grad.shape(), self.grad.vec() * s)); });
}

Var add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("add_n: empty input");
  Tensor out = xs.front().value();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    require_same(xs.front(), xs[i], "add_n");
    out.vec() += xs[i].value().vec();
  }
  return make_op(std::move(out), xs, [](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i)
      if (self.parent_needs_grad(i)) self.parents[i]->accumulate(self.grad);
  });
}

Var relu(const Var& x) {
  const auto& in = x.value().vec();
  if (KinkMonitor::active())
    for (Eigen::Index i = 0; i < in.size(); ++i) kink(in[i] > 0 ? 2 * i + 1 : 2 * i);
  return unary(
      x,
      [](Node& self, Tensor& g) {
        g.vec() = (self.parent_value(0).vec().array() > 0).select(self.grad.vec(), 0.0);
      },
      Tensor(x.shape(), in.cwiseMax(0.0)));
}

Var leaky_relu(const Var& x, Real slope) {
  const auto& in = x.value().vec();
  if (KinkMonitor::active())
    for (Eigen::Index i = 0; i < in.size(); ++i) kink(in[i] > 0 ? 2 * i + 1 : 2 * i);
  Tensor out(x.shape(), (in.array() > 0).select(in, slope * in));
  return unary(
      x,
      [slope](Node& self, Tensor& g) {
        g.vec() = (self.parent_value(0).vec().array() > 0).select(self.grad.vec(), slope * self.grad.vec());
      },
      std::move(out));
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape(), (1.0 / (1.0 + (-x.value().vec().array()).exp())).matrix());
  return unary(
      x,
      [](Node& self, Tensor& g) {
        const auto s = self.value.vec().array();
        g.vec() = (self.grad.vec().array() * s * (1.0 - s)).matrix();
      },
      std::move(out));
}

Var gelu(const Var& x) {
  const auto& in = x.value().vec();
  Tensor out(x.shape());
  for (Eigen::Index i = 0; i < in.size(); ++i) out[i] = 0.5 * in[i] * (1.0 + std::erf(in[i] / std::numbers::sqrt2));
  return unary(
      x,
      [](Node& self, Tensor& g) {
        const auto& v = self.parent_value(0).vec();
        constexpr double kInvSqrt2Pi = 0.3989422804014327;
        for (Eigen::Index i = 0; i < v.size(); ++i) {
          const double cdf = 0.5 * (1.0 + std::erf(v[i] / std::numbers::sqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v[i] * v[i]);
          g[i] = self.grad[i] * (cdf + v[i] * pdf);
        }
      },
      std::move(out));
}

Var clamp(const Var& x, Real lo, Real hi) {
  const auto& in = x.value().vec();
  if (KinkMonitor::active())
    for (Eigen::Index i = 0; i < in.size(); ++i) kink(3 * i + (in[i] < lo ? 0 : in[i] > hi ? 2 : 1));
  return unary(
      x,
      [lo, hi](Node& self, Tensor& g) {
        const auto v = self.parent_value(0).vec().array();
        g.vec() = (v >= lo && v <= hi).select(self.grad.vec(), 0.0);
      },
      Tensor(x.shape(), in.cwiseMax(lo).cwiseMin(hi)));
}

Var concat(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat: empty input");
  Shape shape = xs.front().shape();
  int channels = 0;
  for (const auto& x : xs) {
    Shape s = x.shape();
    if (s.size() != shape.size()) throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t i = 1; i < s.size(); ++i)
      if (s[i] != shape[i]) throw std::invalid_argument("concat: trailing dims differ " + shape_string(s) + " vs " + shape_string(shape));
    channels += s[0];
  }
  shape[0] = channels;
  Tensor out(shape);
  Eigen::Index pos = 0;
  std::vector<Eigen::Index> offsets;
  for (const auto& x : xs) {
    offsets.push_back(pos);
    out.vec().segment(pos, x.value().size()) = x.value().vec();
    pos += x.value().size();
  }
  return make_op(std::move(out), xs, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (!self.parent_needs_grad(i)) continue;
      const Tensor& pv = self.parent_value(i);
      self.parents[i]->accumulate(Tensor(pv.shape(), self.grad.vec().segment(offsets[i], pv.size())));
    }
  });
}

Var slice(const Var& x, int begin, int count) {
  const Shape& s = x.shape();
  if (begin < 0 || count < 0 || begin + count > s[0]) throw std::invalid_argument("slice: range out of bounds");
  Eigen::Index inner = x.value().size() / std::max(1, s[0]);
  Shape os = s;
  os[0] = count;
  Tensor out(os, x.value().vec().segment(begin * inner, count * inner));
  return make_op(std::move(out), {x}, [begin, inner](Node& self) {
    Tensor g = Tensor::zeros_like(self.parent_value(0));
    g.vec().segment(begin * inner, self.grad.size()) = self.grad.vec();
    self.parents[0]->accumulate(g);
  });
}

Var repeat(const Var& x, int times) {
  if (times < 1) throw std::invalid_argument("repeat: times must be >= 1");
  Shape os = x.shape();
  os[0] *= times;
  Tensor out(os);
  const Eigen::Index n = x.value().size();
  for (int i = 0; i < times; ++i) out.vec().segment(i * n, n) = x.value().vec();
  return make_op(std::move(out), {x}, [times, n](Node& self) {
    Tensor g = Tensor::zeros_like(self.parent_value(0));
    for (int i = 0; i < times; ++i) g.vec() += self.grad.vec().segment(i * n, n);
    self.parents[0]->accumulate(g);
  });
}

Var sum(const Var& x) {
  return make_op(Tensor::scalar(x.value().vec().sum()), {x}, [](Node& self) {
    self.parents[0]->accumulate(Tensor(self.parent_value(0).shape(), self.grad[0]));
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  if (!weights.same_shape(x.value())) throw std::invalid_argument("weighted_sum: shape mismatch");
  return make_op(Tensor::scalar(x.value().vec().dot(weights.vec())), {x}, [weights](Node& self) {
    self.parents[0]->accumulate(Tensor(weights.shape(), weights.vec() * self.grad[0]));
  });
}

Var mse_loss(const Var& prediction, const Var& target) {
  require_same(prediction, target, "mse_loss");
  const Eigen::Index n = prediction.value().size();
  const Real loss = (prediction.value().vec() - target.value().vec()).squaredNorm() / static_cast<Real>(n);
  return make_op(Tensor::scalar(loss), {prediction, target}, [n](Node& self) {
    const Eigen::VectorXd diff = self.parent_value(0).vec() - self.parent_value(1).vec();
    const Real k = 2.0 * self.grad[0] / static_cast<Real>(n);
    if (self.parent_needs_grad(0)) self.parents[0]->accumulate(Tensor(self.parent_value(0).shape(), diff * k));
    if (self.parent_needs_grad(1)) self.parents[1]->accumulate(Tensor(self.parent_value(1).shape(), diff * -k));
  });
}

// ---------------------------------------------------------------- convolution

namespace {

/// im2col for a stride-1 'same' convolution: rows (c, ky, kx), cols (h, w).
void im2col(const Tensor& x, int k, RowMatrix& col) {
  const int C = x.channels(), H = x.height(), W = x.width(), pad = k / 2;
  col.setZero(static_cast<Eigen::Index>(C) * k * k, static_cast<Eigen::Index>(H) * W);
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        Real* dst = col.row((c * k + ky) * k + kx).data();
        const int dx = kx - pad;
        const int w0 = std::max(0, -dx), w1 = std::min(W, W - dx);
        for (int h = 0; h < H; ++h) {
          const int sh = h + ky - pad;
          if (sh < 0 || sh >= H) continue;
          const Real* src = x.data() + (static_cast<Eigen::Index>(c) * H + sh) * W;
          for (int w = w0; w < w1; ++w) dst[h * W + w] = src[w + dx];
        }
      }
}

void col2im(const RowMatrix& col, int k, Tensor& dx) {
  const int C = dx.channels(), H = dx.height(), W = dx.width(), pad = k / 2;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Real* src = col.row((c * k + ky) * k + kx).data();
        const int ddx = kx - pad;
        const int w0 = std::max(0, -ddx), w1 = std::min(W, W - ddx);
        for (int h = 0; h < H; ++h) {
          const int sh = h + ky - pad;
          if (sh < 0 || sh >= H) continue;
          Real* dst = dx.data() + (static_cast<Eigen::Index>(c) * H + sh) * W;
          for (int w = w0; w < w1; ++w) dst[w + ddx] += src[h * W + w];
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
  require_chw(x, "conv2d");
  const Tensor& w = weight.value();
  if (w.ndim() != 4 || w.dim(1) != x.value().channels() || w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0)
    throw std::invalid_argument("conv2d: weight " + shape_string(w.shape()) + " incompatible with input " + shape_string(x.shape()));
  const int O = w.dim(0), k = w.dim(2);
  if (bias.defined() && (bias.value().ndim() != 1 || bias.value().dim(0) != O)) throw std::invalid_argument("conv2d: bias shape");
  const Tensor& in = x.value();
  const int H = in.height(), W = in.width();
  const Eigen::Map<const RowMatrix> wm(w.data(), O, w.size() / O);

  Tensor out({O, H, W});
  if (k == 1) {
    out.matrix().noalias() = wm * in.matrix();
  } else {
    RowMatrix col;
    im2col(in, k, col);
    out.matrix().noalias() = wm * col;
  }
  if (bias.defined()) out.matrix().colwise() += bias.value().vec();

  return make_op(std::move(out), {x, weight, bias}, [O, k](Node& self) {
    const Tensor& in = self.parent_value(0);
    const Tensor& w = self.parent_value(1);
    const Eigen::Map<const RowMatrix> wm(w.data(), O, w.size() / O);
    const auto gm = self.grad.matrix();
    RowMatrix col;
    if (k != 1 && (self.parent_needs_grad(1))) im2col(in, k, col);
    if (self.parent_needs_grad(1)) {
      Tensor gw = Tensor::zeros_like(w);
      Eigen::Map<RowMatrix> gwm(gw.data(), O, w.size() / O);
      if (k == 1)
        gwm.noalias() = gm * in.matrix().transpose();
      else
        gwm.noalias() = gm * col.transpose();
      self.parents[1]->accumulate(gw);
    }
    if (self.parent_needs_grad(2)) {
      Tensor gb({O});
      gb.vec() = gm.rowwise().sum();
      self.parents[2]->accumulate(gb);
    }
    if (self.parent_needs_grad(0)) {
      Tensor gx = Tensor::zeros_like(in);
      if (k == 1) {
        gx.matrix().noalias() = wm.transpose() * gm;
      } else {
        RowMatrix dcol = wm.transpose() * gm;
        col2im(dcol, k, gx);
      }
      self.parents[0]->accumulate(gx);
    }
  });
}

// ---------------------------------------------------------------- normalisation

Var instance_norm(const Var& x, Real eps) {
  require_chw(x, "instance_norm");
  const Tensor& in = x.value();
  const int C = in.channels();
  const Eigen::Index n = in.plane();
  Tensor out = Tensor::zeros_like(in);
  Eigen::VectorXd inv_std(C);
  for (int c = 0; c < C; ++c) {
    const auto row = in.matrix().row(c).array();
    const Real mean = row.mean();
    const Real var = (row - mean).square().mean();
    inv_std[c] = 1.0 / std::sqrt(var + eps);
    out.matrix().row(c) = ((row - mean) * inv_std[c]).matrix();
  }
  return make_op(std::move(out), {x}, [inv_std, n](Node& self) {
    Tensor g = Tensor::zeros_like(self.value);
    for (int c = 0; c < self.value.channels(); ++c) {
      const auto y = self.value.matrix().row(c).array();
      const auto gy = self.grad.matrix().row(c).array();
      const Real mg = gy.mean();
      const Real mgy = (gy * y).mean();
      g.matrix().row(c) = (inv_std[c] * (gy - mg - y * mgy)).matrix();
    }
    (void)n;
    self.parents[0]->accumulate(g);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps) {
  require_chw(x, "layer_norm");
  const Tensor& in = x.value();
  const int C = in.channels();
  if (gamma.value().size() != C || beta.value().size() != C) throw std::invalid_argument("layer_norm: affine size mismatch");
  const auto m = in.matrix();
  const Eigen::RowVectorXd mean = m.colwise().mean();
  const Eigen::RowVectorXd var = (m.rowwise() - mean).array().square().colwise().mean();
  const Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt();
  Tensor normed = Tensor::zeros_like(in);
  normed.matrix() = ((m.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
  Tensor out = Tensor::zeros_like(in);
  out.matrix() = (normed.matrix().array().colwise() * gamma.value().vec().array()).colwise() + beta.value().vec().array();
  return make_op(std::move(out), {x, gamma, beta}, [normed, inv_std](Node& self) {
    const auto gm = self.grad.matrix();
    if (self.parent_needs_grad(1)) {
      Tensor gg({normed.channels()});
      gg.vec() = (gm.array() * normed.matrix().array()).rowwise().sum();
      self.parents[1]->accumulate(gg);
    }
    if (self.parent_needs_grad(2)) {
      Tensor gb({normed.channels()});
      gb.vec() = gm.rowwise().sum();
      self.parents[2]->accumulate(gb);
    }
    if (self.parent_needs_grad(0)) {
      const Eigen::ArrayXd gamma = self.parent_value(1).vec().array();
      const RowMatrix gy = (gm.array().colwise() * gamma).matrix();
      const Eigen::RowVectorXd mg = gy.colwise().mean();
      const Eigen::RowVectorXd mgy = (gy.array() * normed.matrix().array()).colwise().mean();
      Tensor g = Tensor::zeros_like(normed);
      const RowMatrix centered = (gy.rowwise() - mg) - (normed.matrix().array().rowwise() * mgy.array()).matrix();
      g.matrix() = (centered.array().rowwise() * inv_std.array()).matrix();
      self.parents[0]->accumulate(g);
    }
  });
}

// ---------------------------------------------------------------- resampling

Var max_pool2(const Var& x) {
  require_chw(x, "max_pool2");
  const Tensor& in = x.value();
  const int C = in.channels(), H = in.height(), W = in.width();
  if (H % 2 || W % 2) throw std::invalid_argument("max_pool2: spatial dims must be even, got " + shape_string(in.shape()));
  Tensor out({C, H / 2, W / 2});
  std::vector<int> arg(static_cast<std::size_t>(out.size()));
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H / 2; ++h)
      for (int w = 0; w < W / 2; ++w) {
        int best = 0;
        Real bv = in.at(c, 2 * h, 2 * w);
        for (int q = 1; q < 4; ++q) {
          const Real v = in.at(c, 2 * h + q / 2, 2 * w + q % 2);
          if (v > bv) {
            bv = v;
            best = q;
          }
        }
        const auto idx = (static_cast<std::size_t>(c) * (H / 2) + h) * (W / 2) + w;
        arg[idx] = best;
        out[static_cast<Eigen::Index>(idx)] = bv;
        kink(idx * 4 + best);
      }
  return make_op(std::move(out), {x}, [arg](Node& self) {
    const Tensor& in = self.parent_value(0);
    Tensor g = Tensor::zeros_like(in);
    const int C = in.channels(), Ho = in.height() / 2, Wo = in.width() / 2;
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < Ho; ++h)
        for (int w = 0; w < Wo; ++w) {
          const auto idx = (static_cast<std::size_t>(c) * Ho + h) * Wo + w;
          const int q = arg[idx];
          g.at(c, 2 * h + q / 2, 2 * w + q % 2) += self.grad[static_cast<Eigen::Index>(idx)];
        }
    self.parents[0]->accumulate(g);
  });
}

Var avg_pool2(const Var& x) {
  require_chw(x, "avg_pool2");
  const Tensor& in = x.value();
  const int C = in.channels(), H = in.height(), W = in.width();
  if (H % 2 || W % 2) throw std::invalid_argument("avg_pool2: spatial dims must be even");
  Tensor out({C, H / 2, W / 2});
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H / 2; ++h)
      for (int w = 0; w < W / 2; ++w)
        out.at(c, h, w) = 0.25 * (in.at(c, 2 * h, 2 * w) + in.at(c, 2 * h, 2 * w + 1) + in.at(c, 2 * h + 1, 2 * w) + in.at(c, 2 * h + 1, 2 * w + 1));
  return make_op(std::move(out), {x}, [](Node& self) {
    Tensor g = Tensor::zeros_like(self.parent_value(0));
    for (int c = 0; c < self.value.channels(); ++c)
      for (int h = 0; h < self.value.height(); ++h)
        for (int w = 0; w < self.value.width(); ++w) {
          const Real v = 0.25 * self.grad.at(c, h, w);
          g.at(c, 2 * h, 2 * w) += v;
          g.at(c, 2 * h, 2 * w + 1) += v;
          g.at(c, 2 * h + 1, 2 * w) += v;
          g.at(c, 2 * h + 1, 2 * w + 1) += v;
        }
    self.parents[0]->accumulate(g);
  });
}

namespace {

/// Source taps for one output index of 2x half-pixel bilinear upsampling.
struct UpTap {
  int i0, i1;
  Real w0, w1;
};

std::vector<UpTap> upsample_taps(int n) {
  std::vector<UpTap> taps(static_cast<std::size_t>(2 * n));
  for (int o = 0; o < 2 * n; ++o) {
    const Real src = std::max(0.0, (o + 0.5) / 2.0 - 0.5);
    const int i0 = std::min(static_cast<int>(std::floor(src)), n - 1);
    const int i1 = std::min(i0 + 1, n - 1);
    const Real l = src - i0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - l, l};
  }
  return taps;
}

}  // namespace

Var upsample2(const Var& x) {
  require_chw(x, "upsample2");
  const Tensor& in = x.value();
  const int C = in.channels(), H = in.height(), W = in.width();
  const auto ty = upsample_taps(H);
  const auto tx = upsample_taps(W);
  Tensor out({C, 2 * H, 2 * W});
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < 2 * H; ++h) {
      const auto& a = ty[static_cast<std::size_t>(h)];
      for (int w = 0; w < 2 * W; ++w) {
        const auto& b = tx[static_cast<std::size_t>(w)];
        out.at(c, h, w) = a.w0 * (b.w0 * in.at(c, a.i0, b.i0) + b.w1 * in.at(c, a.i0, b.i1)) +
                          a.w1 * (b.w0 * in.at(c, a.i1, b.i0) + b.w1 * in.at(c, a.i1, b.i1));
      }
    }
  return make_op(std::move(out), {x}, [ty, tx](Node& self) {
    Tensor g = Tensor::zeros_like(self.parent_value(0));
    for (int c = 0; c < self.value.channels(); ++c)
      for (int h = 0; h < self.value.height(); ++h) {
        const auto& a = ty[static_cast<std::size_t>(h)];
        for (int w = 0; w < self.value.width(); ++w) {
          const auto& b = tx[static_cast<std::size_t>(w)];
          const Real v = self.grad.at(c, h, w);
          g.at(c, a.i0, b.i0) += v * a.w0 * b.w0;
          g.at(c, a.i0, b.i1) += v * a.w0 * b.w1;
          g.at(c, a.i1, b.i0) += v * a.w1 * b.w0;
          g.at(c, a.i1, b.i1) += v * a.w1 * b.w1;
        }
      }
    self.parents[0]->accumulate(g);
  });
}

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

Var pad_reflect(const Var& x, int height, int width) {
  require_chw(x, "pad_reflect");
  const Tensor& in = x.value();
  const int C = in.channels(), H = in.height(), W = in.width();
  if (height < H || width < W) throw std::invalid_argument("pad_reflect: target smaller than input");
  if (height == H && width == W) return x;
  Tensor out({C, height, width});
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < height; ++h)
      for (int w = 0; w < width; ++w) out.at(c, h, w) = in.at(c, reflect_index(h, H), reflect_index(w, W));
  return make_op(std::move(out), {x}, [H, W](Node& self) {
    Tensor g = Tensor::zeros_like(self.parent_value(0));
    for (int c = 0; c < self.value.channels(); ++c)
      for (int h = 0; h < self.value.height(); ++h)
        for (int w = 0; w < self.value.width(); ++w) g.at(c, reflect_index(h, H), reflect_index(w, W)) += self.grad.at(c, h, w);
    self.parents[0]->accumulate(g);
  });
}

Var pad_replicate(const Var& x, int height, int width) {
  require_chw(x, "pad_replicate");
  const Tensor& in = x.value();
  const int C = in.channels(), H = in.height(), W = in.width();
  if (height < H || width < W) throw std::invalid_argument("pad_replicate: target smaller than input");
  if (height == H && width == W) return x;
  Tensor out({C, height, width});
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < height; ++h)
      for (int w = 0; w < width; ++w) out.at(c, h, w) = in.at(c, std::min(h, H - 1), std::min(w, W - 1));
  return make_op(std::move(out), {x}, [H, W](Node& self) {
    Tensor g = Tensor::zeros_like(self.parent_value(0));
    for (int c = 0; c < self.value.channels(); ++c)
      for (int h = 0; h < self.value.height(); ++h)
        for (int w = 0; w < self.value.width(); ++w) g.at(c, std::min(h, H - 1), std::min(w, W - 1)) += self.grad.at(c, h, w);
    self.parents[0]->accumulate(g);
  });
}

Var crop(const Var& x, int height, int width) {
  require_chw(x, "crop");
  const Tensor& in = x.value();
  const int C = in.channels();
  if (height > in.height() || width > in.width()) throw std::invalid_argument("crop: target larger than input");
  if (height == in.height() && width == in.width()) return x;
  Tensor out({C, height, width});
  for (int c = 0; c < C; ++c) out.channel(c) = in.channel(c).topLeftCorner(height, width);
  return make_op(std::move(out), {x}, [height, width](Node& self) {
    Tensor g = Tensor::zeros_like(self.parent_value(0));
    for (int c = 0; c < g.channels(); ++c) g.channel(c).topLeftCorner(height, width) = self.grad.channel(c);
    self.parents[0]->accumulate(g);
  });
}

// ---------------------------------------------------------------- bilinear sampling

namespace {

/// Bilinear sample of one H x W plane at (y, x) with zero padding, plus the
/// partial derivatives with respect to y and x.
struct Sample {
  int y0, x0;
  Real ly, lx;
  Real value, d_dy, d_dx;
};

inline Sample bilinear(const Real* plane, int H, int W, Real y, Real x) {
  Sample s;
  const Real fy = std::floor(y), fx = std::floor(x);
  s.y0 = static_cast<int>(fy);
  s.x0 = static_cast<int>(fx);
  s.ly = y - fy;
  s.lx = x - fx;
  auto px = [&](int r, int c) -> Real { return (r >= 0 && r < H && c >= 0 && c < W) ? plane[r * W + c] : 0.0; };
  const Real v00 = px(s.y0, s.x0), v01 = px(s.y0, s.x0 + 1), v10 = px(s.y0 + 1, s.x0), v11 = px(s.y0 + 1, s.x0 + 1);
  s.value = (1 - s.ly) * ((1 - s.lx) * v00 + s.lx * v01) + s.ly * ((1 - s.lx) * v10 + s.lx * v11);
  s.d_dx = (1 - s.ly) * (v01 - v00) + s.ly * (v11 - v10);
  s.d_dy = (1 - s.lx) * (v10 - v00) + s.lx * (v11 - v01);
  return s;
}

inline void scatter(Real* plane, int H, int W, const Sample& s, Real g) {
  auto add = [&](int r, int c, Real v) {
    if (r >= 0 && r < H && c >= 0 && c < W) plane[r * W + c] += v;
  };
  add(s.y0, s.x0, g * (1 - s.ly) * (1 - s.lx));
  add(s.y0, s.x0 + 1, g * (1 - s.ly) * s.lx);
  add(s.y0 + 1, s.x0, g * s.ly * (1 - s.lx));
  add(s.y0 + 1, s.x0 + 1, g * s.ly * s.lx);
}

inline void kink_cell(std::uint64_t salt, Real y, Real x) {
  if (KinkMonitor::active())
    KinkMonitor::record(salt ^ (static_cast<std::uint64_t>(static_cast<std::int64_t>(std::floor(y))) * 0x9E3779B1u) ^
                        (static_cast<std::uint64_t>(static_cast<std::int64_t>(std::floor(x))) << 32));
}

}  // namespace

Var warp(const Var& x, const Var& flow) {
  require_chw(x, "warp");
  require_chw(flow, "warp");
  const Tensor& in = x.value();
  const Tensor& f = flow.value();
  if (f.channels() != 2 || f.height() != in.height() || f.width() != in.width())
    throw std::invalid_argument("warp: flow " + shape_string(f.shape()) + " does not match input " + shape_string(in.shape()));
  const int C = in.channels(), H = in.height(), W = in.width();
  Tensor out = Tensor::zeros_like(in);
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      const Real sy = h + f.at(1, h, w), sx = w + f.at(0, h, w);
      kink_cell(static_cast<std::uint64_t>(h * W + w), sy, sx);
      for (int c = 0; c < C; ++c) out.at(c, h, w) = bilinear(in.data() + c * in.plane(), H, W, sy, sx).value;
    }
  return make_op(std::move(out), {x, flow}, [](Node& self) {
    const Tensor& in = self.parent_value(0);
    const Tensor& f = self.parent_value(1);
    const int C = in.channels(), H = in.height(), W = in.width();
    Tensor gx = Tensor::zeros_like(in);
    Tensor gf = Tensor::zeros_like(f);
    const bool need_x = self.parent_needs_grad(0), need_f = self.parent_needs_grad(1);
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const Real sy = h + f.at(1, h, w), sx = w + f.at(0, h, w);
        for (int c = 0; c < C; ++c) {
          const Real g = self.grad.at(c, h, w);
          if (g == 0.0) continue;
          const Sample s = bilinear(in.data() + c * in.plane(), H, W, sy, sx);
          if (need_x) scatter(gx.data() + c * gx.plane(), H, W, s, g);
          if (need_f) {
            gf.at(0, h, w) += g * s.d_dx;
            gf.at(1, h, w) += g * s.d_dy;
          }
        }
      }
    if (need_x) self.parents[0]->accumulate(gx);
    if (need_f) self.parents[1]->accumulate(gf);
  });
}

Var deform_conv2d(const Var& x, const Var& offset, const Var& mask, const Var& weight, const Var& bias, int groups) {
  require_chw(x, "deform_conv2d");
  const Tensor& in = x.value();
  const Tensor& w = weight.value();
  const int C = in.channels(), H = in.height(), W = in.width();
  if (w.ndim() != 4 || w.dim(1) != C || w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0)
    throw std::invalid_argument("deform_conv2d: weight " + shape_string(w.shape()) + " incompatible with input " + shape_string(in.shape()));
  if (groups < 1 || C % groups) throw std::invalid_argument("deform_conv2d: channels not divisible by offset groups");
  const int O = w.dim(0), K = w.dim(2), taps = K * K, pad = K / 2;
  const Shape off_shape{2 * groups * taps, H, W}, mask_shape{groups * taps, H, W};
  if (offset.shape() != off_shape)
    throw std::invalid_argument("deform_conv2d: offset shape " + shape_string(offset.shape()) + ", expected " + shape_string(off_shape));
  if (mask.shape() != mask_shape)
    throw std::invalid_argument("deform_conv2d: mask shape " + shape_string(mask.shape()) + ", expected " + shape_string(mask_shape));
  const int per_group = C / groups;

  auto build_columns = [=](const Tensor& in, const Tensor& off, const Tensor& msk, RowMatrix& col, bool record) {
    col.resize(static_cast<Eigen::Index>(C) * taps, static_cast<Eigen::Index>(H) * W);
    for (int c = 0; c < C; ++c) {
      const int g = c / per_group;
      const Real* plane = in.data() + c * in.plane();
      for (int t = 0; t < taps; ++t) {
        const int ch = g * taps + t;
        Real* dst = col.row(c * taps + t).data();
        for (int h = 0; h < H; ++h)
          for (int q = 0; q < W; ++q) {
            const Real sy = h + t / K - pad + off.at(2 * ch + 1, h, q);
            const Real sx = q + t % K - pad + off.at(2 * ch, h, q);
            if (record && c % per_group == 0) kink_cell(static_cast<std::uint64_t>((ch * H + h) * W + q), sy, sx);
            dst[h * W + q] = msk.at(ch, h, q) * bilinear(plane, H, W, sy, sx).value;
          }
      }
    }
  };

  RowMatrix col;
  build_columns(in, offset.value(), mask.value(), col, true);
  const Eigen::Map<const RowMatrix> wm(w.data(), O, static_cast<Eigen::Index>(C) * taps);
  Tensor out({O, H, W});
  out.matrix().noalias() = wm * col;
  if (bias.defined()) out.matrix().colwise() += bias.value().vec();

  return make_op(std::move(out), {x, offset, mask, weight, bias}, [=](Node& self) {
    const Tensor& in = self.parent_value(0);
    const Tensor& off = self.parent_value(1);
    const Tensor& msk = self.parent_value(2);
    const Tensor& w = self.parent_value(3);
    const Eigen::Map<const RowMatrix> wm(w.data(), O, static_cast<Eigen::Index>(C) * taps);
    const auto gm = self.grad.matrix();
    if (self.parent_needs_grad(3)) {
      RowMatrix col;
      build_columns(in, off, msk, col, false);
      Tensor gw = Tensor::zeros_like(w);
      Eigen::Map<RowMatrix>(gw.data(), O, static_cast<Eigen::Index>(C) * taps).noalias() = gm * col.transpose();
      self.parents[3]->accumulate(gw);
    }
    if (self.parent_needs_grad(4)) {
      Tensor gb({O});
      gb.vec() = gm.rowwise().sum();
      self.parents[4]->accumulate(gb);
    }
    const bool need_x = self.parent_needs_grad(0), need_off = self.parent_needs_grad(1), need_m = self.parent_needs_grad(2);
    if (!(need_x || need_off || need_m)) return;
    const RowMatrix dcol = wm.transpose() * gm;
    Tensor gx = Tensor::zeros_like(in), goff = Tensor::zeros_like(off), gmask = Tensor::zeros_like(msk);
    for (int c = 0; c < C; ++c) {
      const int g = c / per_group;
      const Real* plane = in.data() + c * in.plane();
      Real* gplane = gx.data() + c * gx.plane();
      for (int t = 0; t < taps; ++t) {
        const int ch = g * taps + t;
        const Real* src = dcol.row(c * taps + t).data();
        for (int h = 0; h < H; ++h)
          for (int q = 0; q < W; ++q) {
            const Real d = src[h * W + q];
            if (d == 0.0) continue;
            const Real sy = h + t / K - pad + off.at(2 * ch + 1, h, q);
            const Real sx = q + t % K - pad + off.at(2 * ch, h, q);
            const Sample s = bilinear(plane, H, W, sy, sx);
            const Real m = msk.at(ch, h, q);
            if (need_m) gmask.at(ch, h, q) += d * s.value;
            if (need_off) {
              goff.at(2 * ch, h, q) += d * m * s.d_dx;
              goff.at(2 * ch + 1, h, q) += d * m * s.d_dy;
            }
            if (need_x) scatter(gplane, H, W, s, d * m);
          }
      }
    }
    if (need_x) self.parents[0]->accumulate(gx);
    if (need_off) self.parents[1]->accumulate(goff);
    if (need_m) self.parents[2]->accumulate(gmask);
  });
}

// ---------------------------------------------------------------- attention

namespace {

struct WindowLayout {
  int window = 0;
  int shift = 0;
  int H = 0, W = 0;
  int windows_y = 0, windows_x = 0;
  int tokens = 0;
  /// pixel index for (window, token) in original coordinates
  std::vector<int> pixel;
  /// region label of (window, token) after the cyclic shift
  std::vector<int> region;
};

WindowLayout make_layout(int H, int W, int window, int shift) {
  WindowLayout L;
  if (std::min(H, W) <= window) {
    window = std::min(H, W);
    shift = 0;
  }
  if (H % window || W % window)
    throw std::invalid_argument("window_attention: spatial size " + std::to_string(H) + "x" + std::to_string(W) +
                                " not divisible by window " + std::to_string(window));
  L.window = window;
  L.shift = shift;
  L.H = H;
  L.W = W;
  L.windows_y = H / window;
  L.windows_x = W / window;
  L.tokens = window * window;
  const int nw = L.windows_y * L.windows_x;
  L.pixel.resize(static_cast<std::size_t>(nw * L.tokens));
  L.region.resize(L.pixel.size());
  auto label = [&](int i, int n) { return i < n - window ? 0 : (i < n - shift ? 1 : 2); };
  for (int wy = 0; wy < L.windows_y; ++wy)
    for (int wx = 0; wx < L.windows_x; ++wx)
      for (int t = 0; t < L.tokens; ++t) {
        const int i = wy * window + t / window;  // shifted coordinates
        const int j = wx * window + t % window;
        const auto idx = static_cast<std::size_t>((wy * L.windows_x + wx) * L.tokens + t);
        L.pixel[idx] = ((i + shift) % H) * W + (j + shift) % W;
        L.region[idx] = shift > 0 ? label(i, H) * 3 + label(j, W) : 0;
      }
  return L;
}

}  // namespace

Var window_attention(const Var& qkv, const Var& rel_bias, int heads, int window, int shift) {
  require_chw(qkv, "window_attention");
  const Tensor& in = qkv.value();
  if (in.channels() % (3 * heads)) throw std::invalid_argument("window_attention: channels not divisible by 3 * heads");
  const int C = in.channels() / 3, d = C / heads;
  const int span = 2 * window - 1;
  if (rel_bias.shape() != Shape{span * span, heads})
    throw std::invalid_argument("window_attention: relative bias table must be " + shape_string({span * span, heads}));
  const auto L = std::make_shared<WindowLayout>(make_layout(in.height(), in.width(), window, shift));
  const int N = L->tokens, nw = L->windows_y * L->windows_x;
  const Real scale_qk = 1.0 / std::sqrt(static_cast<Real>(d));
  const Eigen::Index P = in.plane();

  auto bias_index = [span, window, w = L->window](int a, int b) {
    const int dr = a / w - b / w, dc = a % w - b % w;
    return (dr + window - 1) * span + (dc + window - 1);
  };
  // Attention probabilities per (window, head), kept for the backward pass.
  auto probs = std::make_shared<std::vector<RowMatrix>>(static_cast<std::size_t>(nw * heads));
  Tensor out({C, in.height(), in.width()});
  RowMatrix Q(N, d), K(N, d), V(N, d);
  for (int win = 0; win < nw; ++win) {
    const int* pix = L->pixel.data() + win * N;
    const int* reg = L->region.data() + win * N;
    for (int hd = 0; hd < heads; ++hd) {
      for (int t = 0; t < N; ++t)
        for (int e = 0; e < d; ++e) {
          const Eigen::Index ch = hd * d + e;
          Q(t, e) = in[ch * P + pix[t]];
          K(t, e) = in[(C + ch) * P + pix[t]];
          V(t, e) = in[(2 * C + ch) * P + pix[t]];
        }
      RowMatrix S = (Q * K.transpose()) * scale_qk;
      for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b) {
          if (reg[a] != reg[b])
            S(a, b) = -std::numeric_limits<Real>::infinity();
          else
            S(a, b) += rel_bias.value()[bias_index(a, b) * heads + hd];
        }
      for (int a = 0; a < N; ++a) {
        const Real m = S.row(a).maxCoeff();
        S.row(a) = (S.row(a).array() - m).exp();
        S.row(a) /= S.row(a).sum();
      }
      const RowMatrix O = S * V;
      for (int t = 0; t < N; ++t)
        for (int e = 0; e < d; ++e) out[(hd * d + e) * P + pix[t]] = O(t, e);
      (*probs)[static_cast<std::size_t>(win * heads + hd)] = std::move(S);
    }
  }
  return make_op(std::move(out), {qkv, rel_bias}, [=](Node& self) {
    const Tensor& in = self.parent_value(0);
    Tensor gin = Tensor::zeros_like(in);
    Tensor gbias = Tensor::zeros_like(self.parent_value(1));
    RowMatrix Q(N, d), K(N, d), V(N, d), dO(N, d);
    for (int win = 0; win < nw; ++win) {
      const int* pix = L->pixel.data() + win * N;
      for (int hd = 0; hd < heads; ++hd) {
        for (int t = 0; t < N; ++t)
          for (int e = 0; e < d; ++e) {
            const Eigen::Index ch = hd * d + e;
            Q(t, e) = in[ch * P + pix[t]];
            K(t, e) = in[(C + ch) * P + pix[t]];
            V(t, e) = in[(2 * C + ch) * P + pix[t]];
            dO(t, e) = self.grad[ch * P + pix[t]];
          }
        const RowMatrix& A = (*probs)[static_cast<std::size_t>(win * heads + hd)];
        const RowMatrix dV = A.transpose() * dO;
        const RowMatrix dA = dO * V.transpose();
        const Eigen::VectorXd rowdot = (dA.array() * A.array()).rowwise().sum();
        const RowMatrix dS = (A.array() * (dA.array().colwise() - rowdot.array())).matrix();
        const RowMatrix dQ = (dS * K) * scale_qk;
        const RowMatrix dK = (dS.transpose() * Q) * scale_qk;
        for (int t = 0; t < N; ++t)
          for (int e = 0; e < d; ++e) {
            const Eigen::Index ch = hd * d + e;
            gin[ch * P + pix[t]] += dQ(t, e);
            gin[(C + ch) * P + pix[t]] += dK(t, e);
            gin[(2 * C + ch) * P + pix[t]] += dV(t, e);
          }
        for (int a = 0; a < N; ++a)
          for (int b = 0; b < N; ++b) gbias[bias_index(a, b) * heads + hd] += dS(a, b);
      }
    }
    if (self.parent_needs_grad(0)) self.parents[0]->accumulate(gin);
    if (self.parent_needs_grad(1)) self.parents[1]->accumulate(gbias);
  });
}

// ---------------------------------------------------------------- complex helpers

namespace {

ComplexImage to_complex(const Tensor& t) {
  ComplexImage z(t.height(), t.width());
  for (int h = 0; h < t.height(); ++h)
    for (int w = 0; w < t.width(); ++w) z(h, w) = Complex(t.at(0, h, w), t.at(1, h, w));
  return z;
}

Tensor from_complex(const ComplexImage& z) {
  Tensor t({2, static_cast<int>(z.rows()), static_cast<int>(z.cols())});
  for (int h = 0; h < z.rows(); ++h)
    for (int w = 0; w < z.cols(); ++w) {
      t.at(0, h, w) = z(h, w).real();
      t.at(1, h, w) = z(h, w).imag();
    }
  return t;
}

void require_complex(const Var& x, const char* op) {
  require_chw(x, op);
  if (x.value().channels() != 2) throw std::invalid_argument(std::string(op) + ": expected 2 channels (re, im)");
}

}  // namespace

Var kspace_to_image(const Var& kspace) {
  require_complex(kspace, "kspace_to_image");
  Tensor out = from_complex(idft2(ifftshift(to_complex(kspace.value()))));
  // The map is unitary, so its adjoint is the forward transform.
  return make_op(std::move(out), {kspace}, [](Node& self) { self.parents[0]->accumulate(from_complex(fftshift(dft2(to_complex(self.grad))))); });
}

Var image_to_kspace(const Var& image) {
  require_complex(image, "image_to_kspace");
  Tensor out = from_complex(fftshift(dft2(to_complex(image.value()))));
  return make_op(std::move(out), {image}, [](Node& self) { self.parents[0]->accumulate(from_complex(idft2(ifftshift(to_complex(self.grad))))); });
}

Var complex_magnitude(const Var& x, Real eps) {
  require_complex(x, "complex_magnitude");
  const Tensor& in = x.value();
  Tensor out({1, in.height(), in.width()});
  const auto re = in.matrix().row(0).array(), im = in.matrix().row(1).array();
  out.matrix().row(0) = (re.square() + im.square() + eps).sqrt().matrix();
  return make_op(std::move(out), {x}, [](Node& self) {
    const Tensor& in = self.parent_value(0);
    Tensor g = Tensor::zeros_like(in);
    const auto gm = self.grad.matrix().row(0).array() / self.value.matrix().row(0).array();
    g.matrix().row(0) = (gm * in.matrix().row(0).array()).matrix();
    g.matrix().row(1) = (gm * in.matrix().row(1).array()).matrix();
    self.parents[0]->accumulate(g);
  });
}

Var replace_rows(const Var& predicted, const Tensor& measured, const std::vector<std::uint8_t>& row_mask) {
  require_chw(predicted, "replace_rows");
  if (!measured.same_shape(predicted.value())) throw std::invalid_argument("replace_rows: measured shape mismatch");
  if (static_cast<int>(row_mask.size()) != predicted.value().height()) throw std::invalid_argument("replace_rows: mask length mismatch");
  Tensor out = predicted.value();
  for (int c = 0; c < out.channels(); ++c)
    for (int h = 0; h < out.height(); ++h)
      if (row_mask[static_cast<std::size_t>(h)]) out.channel(c).row(h) = measured.channel(c).row(h);
  return make_op(std::move(out), {predicted}, [row_mask](Node& self) {
    Tensor g = self.grad;
    for (int c = 0; c < g.channels(); ++c)
      for (int h = 0; h < g.height(); ++h)
        if (row_mask[static_cast<std::size_t>(h)]) g.channel(c).row(h).setZero();
    self.parents[0]->accumulate(g);
  });
}

}  // namespace cine::nn
