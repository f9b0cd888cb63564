#pragma once

namespace calpha::core {

struct PowerSpec {
  int rank = 1;
  /// tau' I tau for the local direction tau.
  double noncentrality = 0.0;
  double alpha = 0.05;
};

/// Limiting rejection probability of the C(alpha) test against a local
/// alternative: 1 - P(chi2_r(a) <= c_r). This is also the maximin power bound
/// over alternatives with the same noncentrality. Returns 0 when rank is 0.
double asymptotic_power(const PowerSpec& spec);

/// Power bound for locally asymptotically unbiased level-alpha tests of a
/// scalar parameter with efficient information `info`:
///   1 - Phi(z_{alpha/2} - sqrt(info) tau) + 1 - Phi(z_{alpha/2} + sqrt(info) tau).
double two_sided_power_bound(double info, double tau, double alpha);

}  // namespace calpha::core
