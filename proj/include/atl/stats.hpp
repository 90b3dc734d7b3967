#pragma once

#include <span>

namespace atl {

/// Regularized incomplete beta I_x(a, b). `y` must equal 1 - x; passing it
/// separately keeps precision when x is close to 1.
double regularized_incomplete_beta(double a, double b, double x, double y);

/// Two-sided tail probability P(|T| >= |t|) for Student's t with `df`
/// (possibly fractional) degrees of freedom.
double student_t_two_sided_p(double t, double df);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

/// Variance floor applied when exactly one sample is constant.
inline constexpr double kWelchVarianceFloor = 1e-12;

/// Welch's unequal-variance two-sample t-test, two-sided.
/// Both samples constant: p = 1 when the means agree, else p = 0.
/// Throws DegenerateSample when either sample has fewer than 2 values.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

double welch_t_p_value(std::span<const double> a, std::span<const double> b);

}  // namespace atl
