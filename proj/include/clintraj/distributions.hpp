#pragma once

// Special functions and distribution tails used by the quantification and
// testing code. Implemented here so the numerics are pinned and testable.

namespace clintraj::dist {

double normal_cdf(double x);

/// Inverse of the standard normal CDF on (0, 1). Absolute error below 1e-12
/// after one Halley refinement of a rational initial guess.
double normal_quantile(double p);

/// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);
/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), computed directly
/// in the tail for accuracy.
double gamma_q(double a, double x);

/// Regularized incomplete beta I_x(a, b).
double beta_inc(double a, double b, double x);

double chi2_sf(double statistic, double dof);
double f_sf(double statistic, double dof1, double dof2);
/// Two-sided p-value of a Student t statistic.
double t_two_sided(double statistic, double dof);
/// Two-sided p-value of a standard normal statistic.
double z_two_sided(double statistic);

}  // namespace clintraj::dist
