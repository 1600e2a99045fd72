#pragma once

#include <cstdint>

namespace lsrs {

// Phi(x) for the standard normal, computed from erfc for full-range accuracy.
double std_normal_cdf(double x);

// Phi^{-1}(p). Rational initial guess refined by one Halley step; accurate to
// ~1e-14 over (0,1). Throws std::domain_error for p outside (0,1).
double std_normal_quantile(double p);

// I_x(a, b), the regularized incomplete beta function, by continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

// P[Bin(m, 1/2) >= k].
double binomial_tail_upper(std::int64_t k, std::int64_t m);

// Two-sided exact binomial test of k successes in m trials against p = 1/2.
double binomial_two_sided_p(std::int64_t k, std::int64_t m);

// One-sided lower (1 - alpha) Clopper-Pearson bound for k successes in n
// trials, solved by bisection on the beta CDF to 1e-10. k = 0 maps to 0.
double clopper_pearson_lower(std::int64_t k, std::int64_t n, double alpha);

}  // namespace lsrs
