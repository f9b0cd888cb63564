#include "calpha/numerics/distributions.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <numbers>
#include <string>

#include "calpha/error.hpp"

namespace calpha::numerics {

namespace {

constexpr double kPoissonTailMass = 1e-12;
constexpr int kMaxMixtureTerms = 10'000;

void require_df(int df, const char* fn) {
  if (df < 1) {
    throw DomainError(std::string(fn) + ": degrees of freedom must be >= 1, got " +
                      std::to_string(df));
  }
}

void require_nonnegative(double x, const char* fn, const char* what) {
  if (!(x >= 0.0) || !std::isfinite(x)) {
    throw DomainError(std::string(fn) + ": " + what + " must be finite and >= 0");
  }
}

}  // namespace

double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("normal_quantile: p must lie in (0, 1), got " + std::to_string(p));
  }
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double chi2_cdf(int df, double x) {
  require_df(df, "chi2_cdf");
  require_nonnegative(x, "chi2_cdf", "x");
  if (x == 0.0) return 0.0;
  return boost::math::gamma_p(0.5 * df, 0.5 * x);
}

double chi2_quantile(int df, double p) {
  require_df(df, "chi2_quantile");
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("chi2_quantile: p must lie in (0, 1), got " + std::to_string(p));
  }

  // Wilson-Hilferty starting point.
  const double h = 2.0 / (9.0 * df);
  const double z = normal_quantile(p);
  double seed = df * std::pow(std::max(1.0 - h + z * std::sqrt(h), 1e-3), 3);

  double lo = seed;
  double hi = seed;
  for (int i = 0; i < 2000 && chi2_cdf(df, lo) > p; ++i) {
    lo *= 0.5;
    if (lo < 1e-300) {
      lo = 0.0;
      break;
    }
  }
  for (int i = 0; i < 2000 && chi2_cdf(df, hi) < p; ++i) hi = 2.0 * hi + 1.0;

  for (int i = 0; i < 400; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (chi2_cdf(df, mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-15 * hi) break;
  }
  return 0.5 * (lo + hi);
}

double noncentral_chi2_cdf(int df, double noncentrality, double x) {
  require_df(df, "noncentral_chi2_cdf");
  require_nonnegative(noncentrality, "noncentral_chi2_cdf", "noncentrality");
  require_nonnegative(x, "noncentral_chi2_cdf", "x");
  if (noncentrality == 0.0) return chi2_cdf(df, x);
  if (x == 0.0) return 0.0;

  const double mu = 0.5 * noncentrality;
  const double log_mu = std::log(mu);
  double total = 0.0;
  double weight_sum = 0.0;
  for (int j = 0; j < kMaxMixtureTerms; ++j) {
    const double w = std::exp(-mu + j * log_mu - std::lgamma(j + 1.0));
    weight_sum += w;
    total += w * chi2_cdf(df + 2 * j, x);
    // Past the Poisson mode the remaining mass is bounded by what is left of 1.
    if (j > mu && 1.0 - weight_sum < kPoissonTailMass) break;
  }
  return std::min(total, 1.0);
}

}  // namespace calpha::numerics
