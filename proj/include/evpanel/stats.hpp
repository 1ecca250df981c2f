#pragma once

namespace evpanel {

// Standard normal quantile (inverse CDF). Wichura's AS 241 rational
// approximation (PPND16), accurate to roughly 1e-15 over (0, 1).
double norm_ppf(double p);

// Standard normal CDF and survival function, via erfc.
double norm_cdf(double x);
double norm_sf(double x);

// Upper tail of the chi-square distribution with df degrees of freedom,
// P(X > x), through the regularized incomplete gamma function.
double chisq_sf(double x, double df);

// Regularized incomplete gamma functions P(a, x) and Q(a, x) = 1 - P(a, x).
double gamma_p(double a, double x);
double gamma_q(double a, double x);

// Regularized incomplete beta function I_x(a, b).
double beta_inc(double a, double b, double x);

// Two-sided p-value of a Student-t statistic with df degrees of freedom.
double student_t_p(double t, double df);

}  // namespace evpanel
