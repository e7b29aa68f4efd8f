#include <doctest.h>

#include <cmath>

#include "cine/mgda.hpp"
#include "cine/training.hpp"
#include "test_util.hpp"

using namespace cine;
using namespace cine::nn;
using testutil::grad_check;
using testutil::probe;
using testutil::random_tensor;
using testutil::random_var;

namespace {

MgdaConfig tiny(PropagationMode mode = PropagationMode::second_order) {
  MgdaConfig c;
  c.channels = 4;
  c.extractor_blocks = 1;
  c.pyramid_levels = 2;
  c.flow_channels = 4;
  c.flow_kernel = 3;
  c.offset_groups = 2;
  c.backbone_blocks = 1;
  c.mode = mode;
  return c;
}

void require_grad(const testutil::GradCheck& r, int coords = 50) {
  INFO(r.first_failure);
  CHECK(r.failed == 0);
  CHECK(r.checked >= coords);
}

std::vector<Var> params_of(const Module& m) {
  std::vector<Var> out;
  for (const auto& [n, p] : m.parameters()) out.push_back(p);
  return out;
}

// Smooth random blob image sampled at (r - dy, c + dx) style coordinates.
struct Blobs {
  std::vector<std::array<double, 4>> b;  // row, col, radius, amplitude
  explicit Blobs(Rng& rng, int n, int size) {
    for (int i = 0; i < n; ++i) b.push_back({rng.uniform(-4, size + 4), rng.uniform(-4, size + 4), rng.uniform(2.0, 4.0), rng.uniform(0.3, 1.0)});
  }
  double operator()(double r, double c) const {
    double v = 0;
    for (const auto& [br, bc, rad, a] : b) v += a * std::exp(-((r - br) * (r - br) + (c - bc) * (c - bc)) / (2 * rad * rad));
    return v;
  }
  Tensor image(int size, double dx, double dy) const {
    Tensor t({1, size, size});
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) t.at(0, r, c) = (*this)(r + dy, c + dx);
    return t;
  }
};

}  // namespace

TEST_CASE("mode names and config validation") {
  CHECK(propagation_mode_from_string("SOGP") == PropagationMode::second_order);
  CHECK(propagation_mode_from_string("fogp") == PropagationMode::first_order);
  CHECK_THROWS(propagation_mode_from_string("third"));
  CHECK_NOTHROW(tiny().validate());
  MgdaConfig bad = tiny();
  bad.offset_groups = 3;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("feature extractor: finite, deterministic, gradients") {
  Rng rng(1);
  const FeatureExtractor e(4, 2, rng);
  const Var z(Tensor({1, 16, 16}));
  CHECK(e(z).value().all_finite());
  CHECK(e(z).value() == e(z).value());
  CHECK(e(z).shape() == Shape{4, 16, 16});
  Var x = random_var({1, 16, 16}, rng);
  auto ps = params_of(e);
  ps.push_back(x);
  require_grad(grad_check([&] { return probe(e(x), 1); }, ps, 60, 1), 60);
}

TEST_CASE("residual block gradients") {
  Rng rng(2);
  const ResidualBlock blk(4, rng);
  Var x = random_var({4, 16, 16}, rng);
  auto ps = params_of(blk);
  ps.push_back(x);
  require_grad(grad_check([&] { return probe(blk(x), 2); }, ps, 60, 2), 60);
}

TEST_CASE("flow estimator: shape, finiteness, clamp and single-level structure") {
  Rng rng(3);
  const FlowEstimator fe(3, 8, 3, 0.25, rng);
  const Var a = random_var({1, 18, 22}, rng), b = random_var({1, 18, 22}, rng);
  const Var f = fe(a, b);
  CHECK(f.shape() == Shape{2, 18, 22});
  CHECK(f.value().all_finite());
  CHECK_THROWS(fe(a, random_var({1, 16, 16}, rng)));

  // Predictors start at zero output; push the last layer so the clamp engages.
  FlowEstimator big(2, 4, 3, 0.25, rng);
  for (auto& [name, p] : big.parameters())
    if (name.find("bias") != std::string::npos) p.mutable_value().vec().setConstant(50.0);
  const Tensor fb = big(a, b).value();
  CHECK(fb.vec().cwiseAbs().maxCoeff() <= 0.25 * 22 + 1e-12);
  CHECK(fb.vec().cwiseAbs().maxCoeff() == doctest::Approx(0.25 * 22));

  FlowEstimator one(1, 4, 3, 10.0, rng);
  for (auto& [name, p] : one.parameters()) p.mutable_value() = random_tensor(p.shape(), rng, 0.3);
  const Var zero(Tensor({2, 18, 22}));
  const Tensor direct = (zero + one.predictor(0)(concat({b, a, zero}))).value();
  CHECK(one(a, b).value() == direct);
}

TEST_CASE("flow estimator learns a pure translation") {
  // Target frame content sits at +3 columns and -2 rows relative to the
  // reference, i.e. warp(ref, (3, -2)) == target away from the border.
  const int S = 32;
  const double dx = 3, dy = -2;
  Rng rng(4);
  FlowEstimator fe(3, 16, 5, 0.25, rng);
  AdamW opt(fe.parameters(), 3e-4, 0.0);
  const int margin = 5;
  auto interior_loss = [&](const Var& ref, const Var& tgt) {
    const Var w = warp(ref, fe(ref, tgt));
    return mse_loss(crop(w, S - margin, S - margin), crop(tgt, S - margin, S - margin));
  };
  Rng data(40);
  for (int step = 0; step < 400; ++step) {
    const Blobs blobs(data, 12, S);
    const Var ref(blobs.image(S, 0, 0)), tgt(blobs.image(S, dx, dy));
    opt.zero_grad();
    interior_loss(ref, tgt).backward();
    opt.step();
  }
  Rng held(99);
  double mx = 0, my = 0;
  int n = 0;
  for (int k = 0; k < 5; ++k) {
    const Blobs blobs(held, 12, S);
    const Tensor f = fe(Var(blobs.image(S, 0, 0)), Var(blobs.image(S, dx, dy))).value();
    for (int r = margin; r < S - margin; ++r)
      for (int c = margin; c < S - margin; ++c, ++n) {
        mx += f.at(0, r, c);
        my += f.at(1, r, c);
      }
  }
  mx /= n;
  my /= n;
  MESSAGE("mean flow (" << mx << ", " << my << ")");
  CHECK(std::abs(mx - dx) < 0.5);
  CHECK(std::abs(my - dy) < 0.5);
}

TEST_CASE("alignment with zero offsets and unit modulation is a plain convolution") {
  Rng rng(5);
  DeformableAlignment unit(4, 1, 2, 0.25, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const Var cur = random_var({4, 12, 12}, rng), nb = random_var({4, 12, 12}, rng);
    unit.dcn().weight().mutable_value() = random_tensor(unit.dcn().weight().shape(), rng);
    const Var zero_flow(Tensor({2, 12, 12}));
    const auto r = unit.align_with_heads(cur, {nb}, {zero_flow}, Var(Tensor({36, 12, 12})), Var(Tensor({18, 12, 12}, 50.0)));
    const Tensor conv = conv2d(nb, unit.dcn().weight(), unit.dcn().bias()).value();
    CHECK((r.aligned.value().vec() - conv.vec()).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("offsets are the clamped sum of head residuals and the broadcast flow") {
  Rng rng(6);
  const DeformableAlignment unit(4, 2, 2, 0.25, rng);
  const Var cur = random_var({4, 8, 12}, rng), n1 = random_var({4, 8, 12}, rng), n2 = random_var({4, 8, 12}, rng);
  const Var f1 = random_var({2, 8, 12}, rng), f2 = random_var({2, 8, 12}, rng);
  const Tensor res = random_tensor({36, 8, 12}, rng, 0.5);
  const auto r = unit.align_with_heads(cur, {n1, n2}, {f1, f2}, Var(res), Var(Tensor({18, 8, 12})));
  // Group g < 1 belongs to neighbour 0, tap offsets (dx, dy) get that neighbour's flow.
  for (int g = 0; g < 2; ++g)
    for (int t = 0; t < 9; ++t)
      for (int comp = 0; comp < 2; ++comp) {
        const int ch = (g * 9 + t) * 2 + comp;
        const Tensor& f = (g == 0 ? f1 : f2).value();
        CHECK(r.offsets.value().at(ch, 3, 5) == doctest::Approx(res.at(ch, 3, 5) + f.at(comp, 3, 5)));
      }
  CHECK(r.modulation.value().vec().maxCoeff() == doctest::Approx(0.5));

  Tensor huge({36, 8, 12}, 1e3);
  for (Eigen::Index i = 0; i < huge.size(); i += 2) huge[i] = -1e3;
  const auto rc = unit.align_with_heads(cur, {n1, n2}, {f1, f2}, Var(huge), Var(Tensor({18, 8, 12}, 1e3)));
  CHECK(rc.offsets.value().vec().cwiseAbs().maxCoeff() <= 0.25 * 12);
  const Tensor& m = rc.modulation.value();
  CHECK(m.vec().maxCoeff() <= 1.0);
  CHECK(unit.align(cur, {n1, n2}, {f1, f2}).modulation.value().vec().minCoeff() > 0.0);
}

TEST_CASE("align_pair: zero flow with untrained heads, channel checks") {
  Rng rng(7);
  const DeformableAlignment unit(4, 1, 2, 0.25, rng);
  const Var fi = random_var({4, 10, 10}, rng), fn = random_var({4, 10, 10}, rng);
  const Var out = align_pair(unit, fi, fn, Var(Tensor({2, 10, 10})));
  CHECK(out.shape() == Shape{4, 10, 10});
  CHECK(out.value().all_finite());
  CHECK_THROWS(align_pair(unit, random_var({3, 10, 10}, rng), fn, Var(Tensor({2, 10, 10}))));
  const DeformableAlignment two(4, 2, 2, 0.25, rng);
  CHECK_THROWS(align_pair(two, fi, fn, Var(Tensor({2, 10, 10}))));
}

TEST_CASE("deformable alignment gradients through heads, flows and features") {
  Rng rng(8);
  DeformableAlignment unit(4, 1, 2, 0.25, rng);
  for (auto& [n, p] : unit.parameters()) p.mutable_value() = random_tensor(p.shape(), rng, 0.2);
  Var cur = random_var({4, 16, 16}, rng), nb = random_var({4, 16, 16}, rng), flow = random_var({2, 16, 16}, rng, 1.5);
  auto ps = params_of(unit);
  ps.insert(ps.end(), {cur, nb, flow});
  require_grad(grad_check([&] { return probe(unit.align(cur, {nb}, {flow}).aligned, 8); }, ps, 120, 8), 120);
}

TEST_CASE("propagation dependency sets and end frames") {
  for (auto mode : {PropagationMode::first_order, PropagationMode::second_order}) {
    Rng rng(9);
    const Mgda m(tiny(mode), rng);
    std::vector<Var> imgs;
    for (int t = 0; t < 5; ++t) imgs.push_back(random_var({1, 16, 16}, rng));
    PropagationTrace trace;
    const auto out = m(imgs, &trace);
    REQUIRE(out.size() == 5);
    CHECK(out[0].shape() == Shape{4, 16, 16});
    REQUIRE(trace.order.size() == 20);
    CHECK(trace.order.front() == "forward_1:0");
    CHECK(trace.order[5] == "backward_1:4");
    CHECK(trace.order[10] == "forward_2:0");
    CHECK(trace.order.back() == "backward_2:0");
    const bool so = mode == PropagationMode::second_order;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 5; ++i) {
        std::set<int> expect{i};
        const int dir = b % 2 == 0 ? -1 : 1;
        for (int k = 1; k <= (so ? 2 : 1); ++k)
          if (i + k * dir >= 0 && i + k * dir < 5) expect.insert(i + k * dir);
        CHECK(trace.dependencies[static_cast<std::size_t>(b)][static_cast<std::size_t>(i)] == expect);
      }
  }
}

TEST_CASE("first forward state depends on frame 0 features only") {
  Rng rng(10);
  const Propagator prop(4, 2, 1, 0.25, PropagationMode::second_order, rng);
  std::vector<Var> feats;
  NeighborFlows flows;
  for (int t = 0; t < 4; ++t) {
    feats.push_back(random_var({4, 8, 8}, rng));
    flows.forward.push_back(random_var({2, 8, 8}, rng));
    flows.backward.push_back(random_var({2, 8, 8}, rng));
  }
  const auto states = prop.branch_states(feats, flows);
  sum(states[0][0]).backward();
  CHECK(feats[0].has_grad());
  for (int t = 1; t < 4; ++t) CHECK_FALSE(feats[t].has_grad());
  for (const auto& f : flows.forward) CHECK_FALSE(f.has_grad());

  for (auto& f : feats) f.zero_grad();
  sum(states[0][2]).backward();
  CHECK(feats[0].has_grad());
  CHECK(feats[2].has_grad());
  CHECK_FALSE(feats[3].has_grad());
}

TEST_CASE("two frames: second-order equals first-order; shapes agree for any T") {
  Rng rng(11);
  Mgda m(tiny(PropagationMode::second_order), rng);
  std::vector<Var> two{random_var({1, 16, 16}, rng), random_var({1, 16, 16}, rng)};
  const auto so = m(two);
  m.propagator().set_mode(PropagationMode::first_order);
  const auto fo = m(two);
  for (int i = 0; i < 2; ++i) CHECK(so[i].value() == fo[i].value());

  std::vector<Var> six;
  for (int t = 0; t < 6; ++t) six.push_back(random_var({1, 16, 16}, rng));
  const auto a = m(six);
  m.propagator().set_mode(PropagationMode::second_order);
  const auto b = m(six);
  for (int i = 0; i < 6; ++i) CHECK(a[i].shape() == b[i].shape());
  CHECK_THROWS(m({six[0]}));
}

TEST_CASE("disabled MGDA returns extractor features") {
  Rng rng(12);
  MgdaConfig c = tiny();
  c.enabled = false;
  const Mgda m(c, rng);
  std::vector<Var> imgs{random_var({1, 16, 16}, rng), random_var({1, 16, 16}, rng)};
  const auto out = m(imgs);
  CHECK(out[1].value() == m.extractor()(imgs[1]).value());
}

TEST_CASE("end-to-end MGDA gradients with respect to images") {
  Rng rng(13);
  Mgda m(tiny(), rng);
  for (auto& [n, p] : m.parameters())
    if (n.find("head") != std::string::npos || n.find("level") != std::string::npos) p.mutable_value() = random_tensor(p.shape(), rng, 0.05);
  std::vector<Var> imgs;
  for (int t = 0; t < 3; ++t) imgs.push_back(random_var({1, 16, 16}, rng));
  auto ps = imgs;
  const auto r = grad_check([&] {
    const auto out = m(imgs);
    return add_n({probe(out[0], 1), probe(out[1], 2), probe(out[2], 3)});
  }, ps, 50, 13);
  require_grad(r, 50);
}
