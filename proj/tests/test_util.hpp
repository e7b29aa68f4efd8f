#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cine/autograd.hpp"
#include "cine/ops.hpp"
#include "cine/random.hpp"

namespace testutil {

using cine::nn::Tensor;
using cine::nn::Var;

inline Tensor random_tensor(cine::nn::Shape shape, cine::Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = scale * rng.uniform(-1.0, 1.0);
  return t;
}

inline Var random_var(cine::nn::Shape shape, cine::Rng& rng, double scale = 1.0) {
  return Var(random_tensor(std::move(shape), rng, scale), true);
}

struct GradCheck {
  int checked = 0;
  int skipped = 0;  // perturbation crossed a kink
  int failed = 0;
  double worst = 0.0;
  std::string first_failure;
};

/// Central differences (step h) against reverse-mode gradients of the scalar
/// f() with respect to coordinates sampled uniformly from `wrt`, until
/// `coords` coordinates are compared. A coordinate passes when
/// |analytic - numeric| <= rtol * max(|analytic|, |numeric|) + atol.
inline GradCheck grad_check(const std::function<Var()>& f, const std::vector<Var>& wrt, int coords, std::uint64_t seed,
                            double h = 1e-3, double rtol = 1e-4, double atol = 1e-9) {
  for (const auto& v : wrt) v.zero_grad();
  std::uint64_t base_sig = 0;
  {
    cine::nn::KinkMonitor mon;
    f().backward();
    base_sig = mon.signature();
  }
  std::vector<Tensor> analytic;
  for (const auto& v : wrt) analytic.push_back(v.has_grad() ? v.grad() : Tensor::zeros_like(v.value()));

  cine::Rng rng(seed);
  std::size_t total = 0;
  for (const auto& v : wrt) total += static_cast<std::size_t>(v.value().size());
  GradCheck r;
  cine::nn::NoGradGuard no_grad;
  for (int attempt = 0; r.checked < coords && attempt < 20 * coords; ++attempt) {
    std::size_t k = rng.below(total);
    std::size_t p = 0;
    while (k >= static_cast<std::size_t>(wrt[p].value().size())) k -= static_cast<std::size_t>(wrt[p++].value().size());
    Var v = wrt[p];
    double& x = v.mutable_value()[static_cast<Eigen::Index>(k)];
    const double x0 = x;
    double fp, fm;
    std::uint64_t sp, sm;
    {
      cine::nn::KinkMonitor mon;
      x = x0 + h;
      fp = f().value()[0];
      sp = mon.signature();
    }
    {
      cine::nn::KinkMonitor mon;
      x = x0 - h;
      fm = f().value()[0];
      sm = mon.signature();
    }
    x = x0;
    if (sp != base_sig || sm != base_sig) {
      ++r.skipped;
      continue;
    }
    const double numeric = (fp - fm) / (2 * h);
    const double a = analytic[p][static_cast<Eigen::Index>(k)];
    const double err = std::abs(a - numeric);
    const double bound = rtol * std::max(std::abs(a), std::abs(numeric)) + atol;
    r.worst = std::max(r.worst, err / (std::max(std::abs(a), std::abs(numeric)) + atol));
    if (err > bound) {
      if (r.failed++ == 0)
        r.first_failure = "input " + std::to_string(p) + " index " + std::to_string(k) + ": analytic " + std::to_string(a) +
                          " numeric " + std::to_string(numeric);
    }
    ++r.checked;
  }
  return r;
}

/// Scalar probe sum(x * w) with fixed random weights, so every output
/// element carries a distinct gradient.
inline Var probe(const Var& out, std::uint64_t seed) {
  cine::Rng rng(seed);
  return cine::nn::weighted_sum(out, random_tensor(out.shape(), rng));
}

}  // namespace testutil
