#include <doctest.h>

#include <cmath>

#include "cine/fourier.hpp"
#include "cine/ops.hpp"
#include "test_util.hpp"

using namespace cine;
using namespace cine::nn;
using testutil::grad_check;
using testutil::probe;
using testutil::random_tensor;
using testutil::random_var;

namespace {

void require_grad(const testutil::GradCheck& r, int coords = 50) {
  INFO(r.first_failure);
  CHECK(r.failed == 0);
  CHECK(r.checked >= coords);
}

double bilinear_oracle(const Tensor& x, int c, double y, double xx) {
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(xx));
  double v = 0;
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      const int r = y0 + dy, q = x0 + dx;
      if (r < 0 || q < 0 || r >= x.height() || q >= x.width()) continue;
      v += (dy ? y - y0 : 1 - (y - y0)) * (dx ? xx - x0 : 1 - (xx - x0)) * x.at(c, r, q);
    }
  return v;
}

Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor* b) {
  const int O = w.dim(0), C = w.dim(1), K = w.dim(2), p = K / 2;
  Tensor out({O, x.height(), x.width()});
  for (int o = 0; o < O; ++o)
    for (int h = 0; h < x.height(); ++h)
      for (int q = 0; q < x.width(); ++q) {
        double s = b ? (*b)[o] : 0.0;
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j) {
              const int r = h + i - p, cc = q + j - p;
              if (r >= 0 && cc >= 0 && r < x.height() && cc < x.width())
                s += w[((static_cast<Eigen::Index>(o) * C + c) * K + i) * K + j] * x.at(c, r, cc);
            }
        out.at(o, h, q) = s;
      }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  return (a.vec() - b.vec()).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("conv2d matches direct summation") {
  Rng rng(1);
  const Tensor x = random_tensor({3, 7, 9}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
  CHECK(max_abs_diff(conv2d(Var(x), Var(w), Var(b)).value(), conv_oracle(x, w, &b)) < 1e-12);
  const Tensor w5 = random_tensor({2, 3, 5, 5}, rng);
  CHECK(max_abs_diff(conv2d(Var(x), Var(w5), Var()).value(), conv_oracle(x, w5, nullptr)) < 1e-12);
}

TEST_CASE("zero-flow warp is the identity, bit for bit") {
  Rng rng(2);
  const Tensor x = random_tensor({3, 11, 13}, rng);
  CHECK(warp(Var(x), Var(Tensor::zeros({2, 11, 13}))).value() == x);
}

TEST_CASE("integer-shift warp matches the shifted image with zeros outside") {
  Rng rng(3);
  const Tensor x = random_tensor({2, 8, 10}, rng);
  const int sx = 2, sy = -1;
  Tensor flow({2, 8, 10});
  for (Eigen::Index i = 0; i < flow.plane(); ++i) {
    flow[i] = sx;
    flow[flow.plane() + i] = sy;
  }
  const Tensor out = warp(Var(x), Var(flow)).value();
  for (int c = 0; c < 2; ++c)
    for (int h = 0; h < 8; ++h)
      for (int q = 0; q < 10; ++q) {
        const int r = h + sy, cc = q + sx;
        const double expect = (r >= 0 && r < 8 && cc >= 0 && cc < 10) ? x.at(c, r, cc) : 0.0;
        CHECK(out.at(c, h, q) == expect);
      }
}

TEST_CASE("fractional warp matches a bilinear oracle") {
  Rng rng(4);
  const Tensor x = random_tensor({2, 9, 9}, rng), flow = random_tensor({2, 9, 9}, rng, 3.0);
  const Tensor out = warp(Var(x), Var(flow)).value();
  double worst = 0;
  for (int c = 0; c < 2; ++c)
    for (int h = 0; h < 9; ++h)
      for (int q = 0; q < 9; ++q)
        worst = std::max(worst, std::abs(out.at(c, h, q) - bilinear_oracle(x, c, h + flow.at(1, h, q), q + flow.at(0, h, q))));
  CHECK(worst < 1e-12);
}

TEST_CASE("deformable conv with zero offsets and unit mask equals conv2d (10 trials)") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const int C = 4, H = 6 + trial % 3, W = 7, G = trial % 2 ? 2 : 1;
    const Tensor x = random_tensor({C, H, W}, rng), w = random_tensor({3, C, 3, 3}, rng), b = random_tensor({3}, rng);
    const Var out = deform_conv2d(Var(x), Var(Tensor::zeros({2 * G * 9, H, W})), Var(Tensor({G * 9, H, W}, 1.0)), Var(w), Var(b), G);
    CHECK(max_abs_diff(out.value(), conv2d(Var(x), Var(w), Var(b)).value()) < 1e-5);
  }
}

TEST_CASE("deformable conv with offsets and modulation matches a per-tap oracle") {
  Rng rng(6);
  const int C = 4, H = 5, W = 6, G = 2, K = 3;
  const Tensor x = random_tensor({C, H, W}, rng), w = random_tensor({2, C, K, K}, rng);
  const Tensor off = random_tensor({2 * G * 9, H, W}, rng, 1.5), m = random_tensor({G * 9, H, W}, rng);
  const Tensor out = deform_conv2d(Var(x), Var(off), Var(m), Var(w), Var(), G).value();
  double worst = 0;
  for (int o = 0; o < 2; ++o)
    for (int h = 0; h < H; ++h)
      for (int q = 0; q < W; ++q) {
        double s = 0;
        for (int c = 0; c < C; ++c) {
          const int g = c / (C / G);
          for (int t = 0; t < 9; ++t) {
            const int ch = g * 9 + t;
            const double y = h + t / 3 - 1 + off.at(2 * ch + 1, h, q), xx = q + t % 3 - 1 + off.at(2 * ch, h, q);
            s += w[((o * C + c) * 3 + t / 3) * 3 + t % 3] * m.at(ch, h, q) * bilinear_oracle(x, c, y, xx);
          }
        }
        worst = std::max(worst, std::abs(s - out.at(o, h, q)));
      }
  CHECK(worst < 1e-12);
}

TEST_CASE("pooling, upsampling, padding and cropping values") {
  Rng rng(7);
  const Tensor x = random_tensor({2, 4, 6}, rng);
  const Tensor mp = max_pool2(Var(x)).value(), ap = avg_pool2(Var(x)).value();
  for (int c = 0; c < 2; ++c)
    for (int h = 0; h < 2; ++h)
      for (int q = 0; q < 3; ++q) {
        const double a = x.at(c, 2 * h, 2 * q), b = x.at(c, 2 * h, 2 * q + 1), d = x.at(c, 2 * h + 1, 2 * q),
                     e = x.at(c, 2 * h + 1, 2 * q + 1);
        CHECK(mp.at(c, h, q) == std::max({a, b, d, e}));
        CHECK(ap.at(c, h, q) == doctest::Approx((a + b + d + e) / 4));
      }
  CHECK_THROWS(max_pool2(Var(Tensor({1, 3, 4}))));

  const Tensor up = upsample2(Var(x)).value();
  REQUIRE(up.shape() == Shape{2, 8, 12});
  auto src = [](int i, int n) {
    const double s = std::max(0.0, (i + 0.5) / 2 - 0.5);
    const int i0 = std::min(static_cast<int>(s), n - 1);
    return std::tuple{i0, std::min(i0 + 1, n - 1), s - i0};
  };
  for (int c = 0; c < 2; ++c)
    for (int h = 0; h < 8; ++h)
      for (int q = 0; q < 12; ++q) {
        const auto [r0, r1, fr] = src(h, 4);
        const auto [c0, c1, fc] = src(q, 6);
        const double v = (1 - fr) * ((1 - fc) * x.at(c, r0, c0) + fc * x.at(c, r0, c1)) + fr * ((1 - fc) * x.at(c, r1, c0) + fc * x.at(c, r1, c1));
        CHECK(up.at(c, h, q) == doctest::Approx(v).epsilon(1e-12));
      }

  const Tensor pr = pad_reflect(Var(x), 6, 9).value();
  CHECK(pr.at(1, 4, 2) == x.at(1, 2, 2));
  CHECK(pr.at(1, 5, 8) == x.at(1, 1, 2));
  CHECK(crop(Var(pr), 4, 6).value() == x);
  const Tensor pp = pad_replicate(Var(x), 5, 8).value();
  CHECK(pp.at(0, 4, 7) == x.at(0, 3, 5));
  CHECK(pp.at(0, 1, 6) == x.at(0, 1, 5));
}

TEST_CASE("normalisations and activations match scalar formulas") {
  Rng rng(8);
  const Tensor x = random_tensor({3, 4, 5}, rng, 2.0);
  const Tensor in = instance_norm(Var(x)).value();
  for (int c = 0; c < 3; ++c) {
    const double mean = x.channel(c).mean();
    const double var = (x.channel(c).array() - mean).square().mean();
    CHECK(in.at(c, 2, 3) == doctest::Approx((x.at(c, 2, 3) - mean) / std::sqrt(var + 1e-5)).epsilon(1e-12));
  }
  const Tensor g = random_tensor({3}, rng), b = random_tensor({3}, rng);
  const Tensor ln = layer_norm(Var(x), Var(g), Var(b)).value();
  for (int h = 0; h < 4; ++h) {
    double mean = 0, var = 0;
    for (int c = 0; c < 3; ++c) mean += x.at(c, h, 1) / 3;
    for (int c = 0; c < 3; ++c) var += std::pow(x.at(c, h, 1) - mean, 2) / 3;
    for (int c = 0; c < 3; ++c)
      CHECK(ln.at(c, h, 1) == doctest::Approx(g[c] * (x.at(c, h, 1) - mean) / std::sqrt(var + 1e-5) + b[c]).epsilon(1e-12));
  }
  const Tensor ge = gelu(Var(x)).value(), sg = sigmoid(Var(x)).value(), lr = leaky_relu(Var(x), 0.1).value();
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    CHECK(ge[i] == doctest::Approx(0.5 * x[i] * (1 + std::erf(x[i] / std::sqrt(2.0)))).epsilon(1e-13));
    CHECK(sg[i] == doctest::Approx(1 / (1 + std::exp(-x[i]))).epsilon(1e-13));
    CHECK(lr[i] == (x[i] > 0 ? x[i] : 0.1 * x[i]));
  }
}

TEST_CASE("kspace_to_image agrees with the complex inverse DFT of the shifted spectrum") {
  Rng rng(9);
  const Tensor k = random_tensor({2, 6, 8}, rng);
  ComplexImage kc(6, 8);
  for (int h = 0; h < 6; ++h)
    for (int q = 0; q < 8; ++q) kc(h, q) = {k.at(0, h, q), k.at(1, h, q)};
  const ComplexImage img = idft2(ifftshift(kc));
  const Tensor out = kspace_to_image(Var(k)).value();
  for (int h = 0; h < 6; ++h)
    for (int q = 0; q < 8; ++q) {
      CHECK(out.at(0, h, q) == doctest::Approx(img(h, q).real()).epsilon(1e-12));
      CHECK(out.at(1, h, q) == doctest::Approx(img(h, q).imag()).epsilon(1e-12));
    }
  CHECK(max_abs_diff(image_to_kspace(Var(out)).value(), k) < 1e-12);
  const Tensor mag = complex_magnitude(Var(out), 0.0).value();
  CHECK(mag.at(0, 3, 4) == doctest::Approx(std::abs(img(3, 4))).epsilon(1e-12));
}

TEST_CASE("replace_rows keeps measured rows") {
  Rng rng(10);
  const Tensor p = random_tensor({2, 4, 3}, rng), m = random_tensor({2, 4, 3}, rng);
  const Tensor out = replace_rows(Var(p), m, {1, 0, 0, 1}).value();
  for (int c = 0; c < 2; ++c)
    for (int q = 0; q < 3; ++q) {
      CHECK(out.at(c, 0, q) == m.at(c, 0, q));
      CHECK(out.at(c, 1, q) == p.at(c, 1, q));
      CHECK(out.at(c, 3, q) == m.at(c, 3, q));
    }
}

TEST_CASE("window attention matches a per-pixel oracle, with and without shift") {
  Rng rng(11);
  const int C = 4, heads = 2, w = 4, H = 8, W = 8, d = C / heads;
  const Tensor qkv = random_tensor({3 * C, H, W}, rng), bias = random_tensor({(2 * w - 1) * (2 * w - 1), heads}, rng);
  for (int shift : {0, 2}) {
    const Tensor out = window_attention(Var(qkv), Var(bias), heads, w, shift).value();
    double worst = 0;
    // Work in rolled coordinates: rolled pixel (i, j) is original ((i + s) % H, (j + s) % W).
    auto region = [&](int i, int n) { return shift == 0 ? 0 : (i < n - w ? 0 : (i < n - shift ? 1 : 2)); };
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        for (int hd = 0; hd < heads; ++hd) {
          const int pi = (i + shift) % H, pj = (j + shift) % W;
          std::vector<double> logits, vals[2];
          for (int a = (i / w) * w; a < (i / w + 1) * w; ++a)
            for (int b = (j / w) * w; b < (j / w + 1) * w; ++b) {
              if (region(a, H) != region(i, H) || region(b, W) != region(j, W)) continue;
              const int qa = (a + shift) % H, qb = (b + shift) % W;
              double s = 0;
              for (int e = 0; e < d; ++e) s += qkv.at(hd * d + e, pi, pj) * qkv.at(C + hd * d + e, qa, qb);
              s = s / std::sqrt(static_cast<double>(d)) + bias[((i - a + w - 1) * (2 * w - 1) + (j - b + w - 1)) * heads + hd];
              logits.push_back(s);
              for (int e = 0; e < d; ++e) vals[e].push_back(qkv.at(2 * C + hd * d + e, qa, qb));
            }
          double z = 0;
          for (double l : logits) z += std::exp(l);
          for (int e = 0; e < d; ++e) {
            double o = 0;
            for (std::size_t k = 0; k < logits.size(); ++k) o += std::exp(logits[k]) / z * vals[e][k];
            worst = std::max(worst, std::abs(o - out.at(hd * d + e, pi, pj)));
          }
        }
    CHECK(worst < 1e-12);
  }
  CHECK_THROWS(window_attention(Var(Tensor({3 * C, 6, 8})), Var(bias), heads, w, 0));
}

TEST_CASE("gradients: elementwise, reductions and shape ops") {
  Rng rng(12);
  Var a = random_var({3, 4, 5}, rng), b = random_var({3, 4, 5}, rng);
  require_grad(grad_check([&] { return probe(add(mul(a, b), scale(sub(a, b), 0.7)), 1); }, {a, b}, 60, 1));
  require_grad(grad_check([&] { return probe(add_n({a, b, a}), 2); }, {a, b}, 60, 2));
  require_grad(grad_check([&] { return probe(relu(a), 3); }, {a}, 50, 3));
  require_grad(grad_check([&] { return probe(leaky_relu(a, 0.1), 4); }, {a}, 50, 4));
  require_grad(grad_check([&] { return probe(sigmoid(a), 5); }, {a}, 50, 5));
  require_grad(grad_check([&] { return probe(gelu(a), 6); }, {a}, 50, 6));
  require_grad(grad_check([&] { return probe(clamp(a, -0.5, 0.5), 7); }, {a}, 50, 7));
  require_grad(grad_check([&] { return probe(concat({a, slice(b, 1, 2), repeat(slice(a, 0, 1), 2)}), 8); }, {a, b}, 60, 8));
  require_grad(grad_check([&] { return sum(mul(a, a)); }, {a}, 50, 9));
  require_grad(grad_check([&] { return mse_loss(a, b); }, {a, b}, 60, 10));
  require_grad(grad_check([&] { return mse_loss(a, b.detach()); }, {a}, 50, 11));
}

TEST_CASE("gradients: conv, norms and resampling") {
  Rng rng(13);
  Var x = random_var({3, 6, 8}, rng), w = random_var({2, 3, 3, 3}, rng), bias = random_var({2}, rng);
  Var g = random_var({3}, rng), beta = random_var({3}, rng);
  require_grad(grad_check([&] { return probe(conv2d(x, w, bias), 1); }, {x, w, bias}, 80, 1));
  require_grad(grad_check([&] { return probe(instance_norm(x), 2); }, {x}, 50, 2));
  require_grad(grad_check([&] { return probe(layer_norm(x, g, beta), 3); }, {x, g, beta}, 60, 3));
  require_grad(grad_check([&] { return probe(max_pool2(x), 4); }, {x}, 50, 4));
  require_grad(grad_check([&] { return probe(avg_pool2(x), 5); }, {x}, 50, 5));
  require_grad(grad_check([&] { return probe(upsample2(x), 6); }, {x}, 50, 6));
  require_grad(grad_check([&] { return probe(pad_reflect(x, 9, 11), 7); }, {x}, 50, 7));
  require_grad(grad_check([&] { return probe(pad_replicate(x, 9, 11), 8); }, {x}, 50, 8));
  require_grad(grad_check([&] { return probe(crop(x, 4, 5), 9); }, {x}, 50, 9));
}

TEST_CASE("gradients: warp with respect to image and flow") {
  Rng rng(14);
  Var x = random_var({2, 7, 7}, rng), flow = random_var({2, 7, 7}, rng, 2.0);
  const auto r = grad_check([&] { return probe(warp(x, flow), 1); }, {x, flow}, 80, 1);
  require_grad(r, 80);
  Var fl = random_var({2, 7, 7}, rng, 2.0);
  require_grad(grad_check([&] { return probe(warp(x.detach(), fl), 2); }, {fl}, 60, 2), 60);
}

TEST_CASE("gradients: modulated deformable convolution") {
  Rng rng(15);
  const int C = 4, G = 2, H = 5, W = 6;
  Var x = random_var({C, H, W}, rng), off = random_var({2 * G * 9, H, W}, rng, 1.5), m = random_var({G * 9, H, W}, rng),
      w = random_var({3, C, 3, 3}, rng), b = random_var({3}, rng);
  require_grad(grad_check([&] { return probe(deform_conv2d(x, off, m, w, b, G), 1); }, {x, off, m, w, b}, 150, 1), 150);
}

TEST_CASE("gradients: window attention and relative bias") {
  Rng rng(16);
  Var qkv = random_var({12, 8, 8}, rng), bias = random_var({49, 2}, rng, 0.1);
  for (int shift : {0, 2})
    require_grad(grad_check([&] { return probe(window_attention(qkv, bias, 2, 4, shift), 1); }, {qkv, bias}, 80, 17 + shift), 80);
}

TEST_CASE("gradients: k-space ops and data consistency") {
  Rng rng(17);
  Var k = random_var({2, 6, 8}, rng);
  const Tensor meas = random_tensor({2, 6, 8}, rng);
  require_grad(grad_check([&] { return probe(kspace_to_image(k), 1); }, {k}, 50, 1));
  require_grad(grad_check([&] { return probe(image_to_kspace(k), 2); }, {k}, 50, 2));
  require_grad(grad_check([&] { return probe(complex_magnitude(k), 3); }, {k}, 50, 3));
  require_grad(grad_check([&] { return probe(replace_rows(k, meas, {0, 1, 1, 0, 0, 1}), 4); }, {k}, 50, 4));
}

TEST_CASE("no graph is recorded under NoGradGuard") {
  Rng rng(18);
  Var a = random_var({1, 2, 2}, rng);
  NoGradGuard guard;
  const Var y = mul(a, a);
  CHECK_FALSE(y.requires_grad());
}
