#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cine/dataset.hpp"
#include "cine/fourier.hpp"
#include "cine/kspace_unet.hpp"
#include "cine/param_store.hpp"
#include "cine/training.hpp"
#include "test_util.hpp"

using namespace cine;
using namespace cine::nn;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

KNetConfig small(int depth = 2, int base = 8) {
  KNetConfig c;
  c.depth = depth;
  c.base_channels = base;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("cinerecon_test_knet_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("config limits") {
  CHECK_NOTHROW(small().validate());
  CHECK_THROWS(small(1, 8).validate());
  CHECK_THROWS(small(2, 4).validate());
}

TEST_CASE("output shape equals input shape, including sizes needing padding") {
  Rng rng(1);
  const KSpaceUNet net(small(), rng);
  for (auto [h, w] : {std::pair{16, 16}, std::pair{18, 22}, std::pair{33, 20}}) {
    const Var out = net.forward(Var(random_tensor({2, h, w}, rng)));
    CHECK(out.shape() == Shape{2, h, w});
    CHECK(out.value().all_finite());
  }
  CHECK_THROWS(net.forward(Var(Tensor({3, 16, 16}))));
}

TEST_CASE("zero input gives a finite deterministic response") {
  Rng a(2), b(2);
  const KSpaceUNet n1(small(), a), n2(small(), b);
  const Tensor z({2, 16, 16});
  const Tensor o1 = n1.forward(Var(z)).value();
  CHECK(o1.all_finite());
  CHECK(o1 == n2.forward(Var(z)).value());
  CHECK(o1 == n1.forward(Var(z)).value());
}

TEST_CASE("frame permutation gives the identically permuted output") {
  Rng rng(3);
  const KSpaceUNet net(small(), rng);
  std::vector<Var> frames;
  for (int t = 0; t < 4; ++t) frames.emplace_back(random_tensor({2, 16, 16}, rng));
  const auto out = net.forward(frames);
  const std::vector<Var> perm{frames[2], frames[0], frames[3], frames[1]};
  const auto pout = net.forward(perm);
  CHECK(pout[0].value() == out[2].value());
  CHECK(pout[1].value() == out[0].value());
  CHECK(pout[2].value() == out[3].value());
  CHECK(pout[3].value() == out[1].value());
}

TEST_CASE("parameter gradients of an MSE loss match central differences") {
  Rng rng(4);
  const KSpaceUNet net(small(), rng);
  const Var x(random_tensor({2, 16, 16}, rng));
  const Var target(random_tensor({2, 16, 16}, rng));
  std::vector<Var> params;
  for (const auto& [name, p] : net.parameters()) params.push_back(p);
  const auto r = grad_check([&] { return mse_loss(net.forward(x), target); }, params, 50, 4);
  INFO(r.first_failure);
  CHECK(r.failed == 0);
  CHECK(r.checked >= 50);
}

TEST_CASE("a single 64x64 frame can be overfit in 500 steps") {
  Rng rng(5);
  KSpaceUNet net(small(), rng);
  const ComplexCineSequence seq = synthetic_sequence(64, 64, 2, 5);
  const SamplingMask mask = make_vd_mask(64, 4.0, 0, 5);
  const KSpaceSequence y = undersample(seq, mask, {});
  const KSpaceSequence full = fully_sampled(seq);
  const Var x(to_tensor(y.frames[0]));
  const Var target(to_tensor(full.frames[0]));
  AdamW opt(net.parameters(), 1e-3, 0.0);
  double first = 0, last = 0;
  for (int step = 0; step < 500; ++step) {
    opt.zero_grad();
    const Var loss = mse_loss(net.forward(x), target);
    loss.backward();
    opt.step();
    if (step == 0) first = loss.value()[0];
    last = loss.value()[0];
  }
  MESSAGE("initial " << first << " final " << last);
  CHECK(last < 0.1 * first);
}

TEST_CASE("to_image inverts the spectrum; data consistency pins sampled lines") {
  const ComplexCineSequence seq = synthetic_sequence(32, 32, 3, 6);
  const KSpaceSequence full = fully_sampled(seq);
  const SamplingMask mask = make_vd_mask(32, 4.0, 0, 6);
  const KSpaceSequence y = undersample(seq, mask, {});
  const ComplexCineSequence back = to_image(full, y, mask, false);
  for (int t = 0; t < 3; ++t) CHECK((back.frames[t] - seq.frames[t]).norm() < 1e-10);

  Rng rng(6);
  const KSpaceUNet net(small(), rng);
  const KSpaceSequence rec = reconstruct_kspace(y, net);
  REQUIRE(rec.num_frames() == 3);
  const ComplexCineSequence dc = to_image(rec, y, mask, true);
  for (int t = 0; t < 3; ++t) {
    const ComplexImage k = fftshift(dft2(dc.frames[t]));
    for (int r = 0; r < 32; ++r)
      if (mask.sampled(r)) CHECK((k.row(r) - y.frames[t].row(r)).norm() < 1e-10);
  }

  SamplingMask all = mask;
  std::fill(all.lines.begin(), all.lines.end(), std::uint8_t{1});
  const KSpaceSequence yfull = undersample(seq, all, {});
  const ComplexCineSequence z = zero_filled(yfull);
  const ComplexCineSequence dcf = to_image(reconstruct_kspace(yfull, net), yfull, all, true);
  for (int t = 0; t < 3; ++t) CHECK((dcf.frames[t] - z.frames[t]).norm() < 1e-12);
}

TEST_CASE("parameter store: bit-exact round trip and diagnostics") {
  const auto dir = scratch("params");
  Rng r1(7), r2(8);
  KSpaceUNet a(small(), r1), b(small(), r2);
  save_params(dir / "a.prm", snapshot(a));
  restore(b, load_params(dir / "a.prm"));
  const Var x(random_tensor({2, 16, 16}, r1));
  CHECK(a.forward(x).value() == b.forward(x).value());

  ParameterStore future = snapshot(a);
  future.version = kParameterFormatVersion + 1;
  save_params(dir / "v.prm", future);
  CHECK_THROWS_WITH(load_params(dir / "v.prm"), doctest::Contains("version"));

  std::string bytes;
  {
    std::ifstream is(dir / "a.prm", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  bytes[bytes.size() / 2] ^= 0x40;
  std::ofstream(dir / "c.prm", std::ios::binary) << bytes;
  CHECK_THROWS_WITH(load_params(dir / "c.prm"), doctest::Contains("corrupt"));

  Rng r3(9);
  KSpaceUNet wide(small(2, 16), r3);
  std::string msg;
  try {
    restore(wide, snapshot(a));
  } catch (const std::exception& e) {
    msg = e.what();
  }
  CHECK(msg.find("mismatch") != std::string::npos);
  CHECK(msg.find(wide.parameters().front().first) != std::string::npos);
}
