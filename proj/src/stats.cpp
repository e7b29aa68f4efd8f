#include "cine/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace cine {

namespace {

// Continued fraction for the incomplete beta function (modified Lentz).
double beta_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (a <= 0 || b <= 0) throw std::invalid_argument("incomplete_beta: a and b must be positive");
  if (x <= 0) return 0.0;
  if (x >= 1) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(a, b, x) / a;
  return 1.0 - front * beta_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double dof) {
  if (!(dof > 0)) throw std::invalid_argument("student_t_two_sided: dof must be positive");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_ttest: samples differ in length");
  const std::size_t n = a.size();
  if (n < 3) throw std::invalid_argument("paired_ttest: need at least 3 pairs");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += b[i] - a[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = b[i] - a[i] - mean;
    ss += d * d;
  }
  const double var = ss / static_cast<double>(n - 1);
  // Differences that agree to rounding carry no spread to test against.
  if (!(var > 1e-24 * std::max(1.0, mean * mean)))
    throw std::invalid_argument("paired_ttest: differences have zero variance, t is undefined");
  TTestResult r;
  r.dof = static_cast<int>(n - 1);
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  r.p_value = student_t_two_sided(r.t, r.dof);
  return r;
}

}  // namespace cine
