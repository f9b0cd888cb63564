#pragma once

namespace calpha::numerics {

/// Standard normal distribution function.
double normal_cdf(double x);

/// Inverse of normal_cdf; throws DomainError unless 0 < p < 1.
double normal_quantile(double p);

/// Central chi-square distribution function P(df/2, x/2).
double chi2_cdf(int df, double x);

/// Central chi-square quantile, by bracketed bisection seeded with the
/// Wilson-Hilferty approximation.
double chi2_quantile(int df, double p);

/// Noncentral chi-square distribution function, computed as the
/// Poisson(noncentrality/2) mixture of central chi-square CDFs with df + 2j
/// degrees of freedom. The series stops once the unsummed Poisson mass falls
/// below 1e-12 (at most 10,000 terms).
double noncentral_chi2_cdf(int df, double noncentrality, double x);

}  // namespace calpha::numerics
