#include <doctest.h>

#include "cine/mrf.hpp"
#include "cine/training.hpp"
#include "test_util.hpp"

using namespace cine;
using namespace cine::nn;
using testutil::grad_check;
using testutil::probe;
using testutil::random_tensor;
using testutil::random_var;

namespace {

MrfConfig tiny(MrfVariant v = MrfVariant::hybrid) {
  MrfConfig c;
  c.channels = 4;
  c.window = 4;
  c.heads = {1, 2, 2};
  c.blocks_per_stage = 1;
  c.variant = v;
  return c;
}

}  // namespace

TEST_CASE("variants and config") {
  CHECK(mrf_variant_from_string("hybrid") == MrfVariant::hybrid);
  CHECK(mrf_variant_from_string("cnn") == MrfVariant::conv);
  CHECK(mrf_variant_from_string("transformer") == MrfVariant::attention);
  CHECK_THROWS(mrf_variant_from_string("mlp"));
  const MrfConfig h = tiny();
  CHECK(h.block_type(0) == BranchBlock::conv);
  CHECK(h.block_type(1) == BranchBlock::attention);
  CHECK(h.block_type(2) == BranchBlock::attention);
  CHECK(tiny(MrfVariant::conv).block_type(2) == BranchBlock::conv);
  CHECK(tiny(MrfVariant::attention).block_type(0) == BranchBlock::attention);
  CHECK(h.branch_channels(2) == 16);
  CHECK(h.pad_multiple() == 16);
  MrfConfig bad = tiny();
  bad.heads = {1, 3, 2};
  CHECK_THROWS(bad.validate());
  bad = tiny();
  bad.stages = 0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("downsample: constants, block maxima, monotonicity, odd sizes") {
  CHECK(downsample(Var(Tensor({2, 6, 8}, 0.7))).value() == Tensor({2, 3, 4}, 0.7));
  Tensor x({1, 4, 4});
  const double v[16] = {1, 5, 2, 0, 3, 4, 9, 1, 0, 0, 7, 7, 2, -1, 8, 6};
  for (int i = 0; i < 16; ++i) x[i] = v[i];
  const Tensor d = downsample(Var(x)).value();
  CHECK(d.at(0, 0, 0) == 5);
  CHECK(d.at(0, 0, 1) == 9);
  CHECK(d.at(0, 1, 0) == 2);
  CHECK(d.at(0, 1, 1) == 8);
  Rng rng(1);
  const Tensor f = random_tensor({3, 6, 6}, rng);
  Tensor g = f;
  for (Eigen::Index i = 0; i < g.size(); ++i) g[i] += rng.uniform();
  CHECK(((downsample(Var(g)).value().vec() - downsample(Var(f)).value().vec()).array() >= 0).all());
  const Tensor o = random_tensor({1, 5, 7}, rng);
  const Tensor od = downsample(Var(o)).value();
  CHECK(od.shape() == Shape{1, 3, 4});
  CHECK(od.at(0, 2, 3) == o.at(0, 4, 6));
  CHECK(od.at(0, 2, 0) == std::max(o.at(0, 4, 0), o.at(0, 4, 1)));
}

TEST_CASE("upsample: constants and linear ramps") {
  CHECK(upsample(Var(Tensor({1, 3, 5}, -0.25))).value() == Tensor({1, 6, 10}, -0.25));
  CHECK(upsample(downsample(Var(Tensor({2, 8, 8}, 1.5)))).value() == Tensor({2, 8, 8}, 1.5));
  CHECK(downsample(upsample(Var(Tensor({2, 3, 3}, 1.5)))).value() == Tensor({2, 3, 3}, 1.5));
  Tensor ramp({1, 6, 6});
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) ramp.at(0, r, c) = 0.5 * r - 2.0 * c + 1;
  const Tensor up = upsample(Var(ramp)).value();
  // Fine pixel i sits at coarse coordinate (i + 0.5) / 2 - 0.5.
  for (int r = 1; r < 11; ++r)
    for (int c = 1; c < 11; ++c) {
      const double rr = (r + 0.5) / 2 - 0.5, cc = (c + 0.5) / 2 - 0.5;
      CHECK(std::abs(up.at(0, r, c) - (0.5 * rr - 2.0 * cc + 1)) < 1e-6);
    }
}

TEST_CASE("attention block: shape, determinism, divisibility") {
  Rng rng(2);
  const AttentionBlock blk(8, 2, 4, 2, rng);
  const Var z(Tensor({8, 8, 12}));
  const Tensor out = blk(z).value();
  CHECK(out.shape() == Shape{8, 8, 12});
  CHECK(out.all_finite());
  CHECK(out == blk(z).value());
  CHECK_THROWS(blk(Var(Tensor({8, 6, 8}))));
}

TEST_CASE("attention block gradients, 8x8 window, 16 channels") {
  Rng rng(3);
  const AttentionBlock blk(16, 2, 8, 2, rng);
  Var x = random_var({16, 16, 16}, rng);
  std::vector<Var> ps{x};
  for (const auto& [n, p] : blk.parameters()) ps.push_back(p);
  const auto r = grad_check([&] { return probe(blk(x), 3); }, ps, 80, 3);
  INFO(r.first_failure);
  CHECK(r.failed == 0);
  CHECK(r.checked >= 80);
}

TEST_CASE("mrf forward: shape for padded sizes, all variants finite and deterministic") {
  for (auto v : {MrfVariant::conv, MrfVariant::attention, MrfVariant::hybrid}) {
    Rng rng(4);
    const Mrf mrf(6, tiny(v), rng);
    const Var f = random_var({6, 20, 28}, rng);
    const Tensor out = mrf(f).value();
    CHECK(out.shape() == Shape{1, 20, 28});
    CHECK(out.all_finite());
    CHECK(out == mrf(f).value());
    const auto br = mrf.branches(f);
    REQUIRE(br.size() == 3);
    CHECK(br[0].shape() == Shape{4, 32, 32});
    CHECK(br[1].shape() == Shape{8, 16, 16});
    CHECK(br[2].shape() == Shape{16, 8, 8});
    const Var base = random_var({1, 20, 28}, rng);
    CHECK((mrf(f, base).value().vec() - out.vec() - base.value().vec()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK_THROWS(mrf(random_var({5, 20, 28}, rng)));
  }
}

TEST_CASE("mrf: every parameter receives gradient") {
  Rng rng(5);
  const Mrf mrf(6, tiny(), rng);
  const Var f = random_var({6, 16, 16}, rng);
  mrf.zero_grad();
  probe(mrf(f), 5).backward();
  for (const auto& [name, p] : mrf.parameters()) {
    INFO(name);
    REQUIRE(p.has_grad());
    CHECK(p.grad().vec().cwiseAbs().maxCoeff() > 0);
  }
}

TEST_CASE("mrf gradients end to end") {
  Rng rng(6);
  const Mrf mrf(3, tiny(), rng);
  Var f = random_var({3, 16, 16}, rng);
  std::vector<Var> ps{f};
  for (const auto& [n, p] : mrf.parameters()) ps.push_back(p);
  const auto r = grad_check([&] { return probe(mrf(f), 6); }, ps, 80, 6);
  INFO(r.first_failure);
  CHECK(r.failed == 0);
  CHECK(r.checked >= 80);
}

TEST_CASE("hybrid mrf overfits frozen random features in 500 steps") {
  Rng rng(7);
  Mrf mrf(4, tiny(), rng);
  const Var f(random_tensor({4, 16, 16}, rng));
  Tensor target({1, 16, 16});
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) target.at(0, r, c) = std::exp(-((r - 7.5) * (r - 7.5) + (c - 6.0) * (c - 6.0)) / 20.0);
  AdamW opt(mrf.parameters(), 1e-3, 0.0);
  double first = 0, last = 0;
  for (int step = 0; step < 500; ++step) {
    opt.zero_grad();
    const Var loss = mse_loss(mrf(f), Var(target));
    loss.backward();
    opt.step();
    if (step == 0) first = loss.value()[0];
    last = loss.value()[0];
  }
  MESSAGE("initial " << first << " final " << last);
  CHECK(last < 0.1 * first);
}

TEST_CASE("conv head keeps the spatial size") {
  Rng rng(8);
  const ConvHead head(6, 8, rng);
  CHECK(head(random_var({6, 9, 11}, rng)).shape() == Shape{1, 9, 11});
}
