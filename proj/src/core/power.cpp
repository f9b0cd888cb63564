#include "calpha/core/power.hpp"

#include <cmath>
#include <string>

#include "calpha/error.hpp"
#include "calpha/numerics/distributions.hpp"

namespace calpha::core {

namespace {
void require_alpha(double alpha, const char* fn) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw DomainError(std::string(fn) + ": alpha must lie in (0, 1)");
  }
}
}  // namespace

double asymptotic_power(const PowerSpec& spec) {
  require_alpha(spec.alpha, "asymptotic_power");
  if (spec.rank < 0) throw DomainError("asymptotic_power: negative rank");
  if (!(spec.noncentrality >= 0.0)) {
    throw DomainError("asymptotic_power: noncentrality must be >= 0");
  }
  if (spec.rank == 0) return 0.0;
  const double crit = numerics::chi2_quantile(spec.rank, 1.0 - spec.alpha);
  if (std::isinf(spec.noncentrality)) return 1.0;
  return 1.0 - numerics::noncentral_chi2_cdf(spec.rank, spec.noncentrality, crit);
}

double two_sided_power_bound(double info, double tau, double alpha) {
  require_alpha(alpha, "two_sided_power_bound");
  if (!(info >= 0.0)) throw DomainError("two_sided_power_bound: information must be >= 0");
  const double z = numerics::normal_quantile(1.0 - alpha / 2.0);
  const double shift = std::sqrt(info) * tau;
  // 1 - Phi(a) written as Phi(-a) to keep tail precision.
  return numerics::normal_cdf(shift - z) + numerics::normal_cdf(-z - shift);
}

}  // namespace calpha::core
