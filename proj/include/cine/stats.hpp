#pragma once

#include <span>

namespace cine {

struct TTestResult {
  double t = 0.0;
  double p_value = 1.0;
  int dof = 0;
};

/// Two-sided paired t-test on the differences b - a.
/// Throws on fewer than 3 pairs, unequal lengths or zero-variance differences.
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
double student_t_two_sided(double t, double dof);

}  // namespace cine
