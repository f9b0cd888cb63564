#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "calpha/core/test_engine.hpp"
#include "calpha/nonparam/smoothing_spline.hpp"
#include "calpha/rng.hpp"

namespace calpha::sim {

enum class LinkFamily { Exponential, Logistic };
enum class ErrorKind { HomoskedasticT6, HeteroskedasticNormal };

/// Scale c_j of link j in {1, 2, 3}: Exponential (1, 2, 4), Logistic (1, 4, 32).
double link_scale(LinkFamily family, int scale_index);

/// Exponential: 5 exp(-v^2 / (2 c^2)). Logistic: 25 / (1 + exp(-v / c)).
double link_eval(LinkFamily family, double c, double v);
double link_deriv(LinkFamily family, double c, double v);

struct SimDesign {
  LinkFamily link_family = LinkFamily::Exponential;
  int scale_index = 1;
  ErrorKind error_kind = ErrorKind::HomoskedasticT6;
  int n = 800;
  double theta_true = 1.0;

  double scale() const { return link_scale(link_family, scale_index); }
  void validate() const;
  /// Short name such as "exp1-homo" or "log3-het".
  std::string name() const;
  /// Inverse of name(); nullopt for unknown names.
  static std::optional<SimDesign> parse(const std::string& name);
};

/// Y = f(X1 + X2 theta) + eps with X = (Z1, 0.2 Z1 + 0.4 Z2 + 0.8), Z_k ~ U(-1, 1).
struct SimData {
  Eigen::VectorXd y;
  Eigen::VectorXd x1;
  Eigen::VectorXd x2;

  Eigen::Index n() const { return y.size(); }
};

SimData simulate_sim(const SimDesign& design, Rng& rng);
SimData simulate_sim(const SimDesign& design, std::uint64_t seed);

/// E[X2 | X1 + X2 theta = v] under the covariate design. Given V = v, (Z1, Z2)
/// is uniform on a segment of the square and X2 is linear, so the conditional
/// mean is X2 at the segment midpoint.
double conditional_mean_x2(double v, double theta);

/// Population nuisance functions used by the oracle moments.
struct SimTruth {
  std::function<double(double)> f;
  std::function<double(double)> f_prime;
  /// E[omega X2 | V] / E[omega | V] with omega = 1.
  std::function<double(double)> z0;

  static SimTruth from_design(const SimDesign& design, double theta0);
};

/// Rows g(W_i) = (Y_i - f(V_i)) f'(V_i) (X2_i - Z0(V_i)) at V_i = X1_i + X2_i theta0.
core::MomentSample oracle_moment(const SimData& data, double theta0, const SimTruth& truth);

/// Cross-fitted smoothing-spline estimates of f (with f') and E[X2 | V] at
/// V = X1 + X2 theta0. Fits indexed [0] are trained on observations
/// 0..half-1 and used to predict the second half; fits [1] the reverse.
struct SimNuisanceFits {
  Eigen::Index half = 0;
  std::vector<nonparam::SplineFit> link;
  std::vector<nonparam::SplineFit> x2_mean;

  /// Fit used for predictions at observation i.
  const nonparam::SplineFit& link_for(Eigen::Index i) const { return link[i < half ? 1 : 0]; }
  const nonparam::SplineFit& x2_mean_for(Eigen::Index i) const { return x2_mean[i < half ? 1 : 0]; }
};

inline constexpr int kSplineKnots = 20;

SimNuisanceFits fit_sim_nuisance(const SimData& data, double theta0);

/// Plug-in moments with sample-split estimates; omega = 1 and E[omega | V] = 1 known.
core::MomentSample feasible_moment(const SimData& data, double theta0);
core::MomentSample feasible_moment(const SimData& data, double theta0, const SimNuisanceFits& fits);

inline constexpr double kSimThreshold = 1e-3;

core::TestResult psi_test_sim(const SimData& data, double theta0, double alpha, double threshold = kSimThreshold);
core::TestResult psi_test_sim(const SimData& data, double theta0, double alpha, double threshold,
                              const SimNuisanceFits& fits);

/// Wald test around the profile least-squares index estimate, using the same
/// cross-fitted nonparametric estimates as the psi test. The minimizer over
/// [-10, 10] is located on a 201 point grid and refined by golden section. The
/// link spline is refitted at every candidate index with the relative penalty
/// chosen at theta0.
/// A flat profile gives a degenerate, never-rejecting result.
struct WaldDetails {
  double theta_hat = 0.0;
  double avar = 0.0;
  bool degenerate = false;
};
core::TestResult wald_test_ichimura(const SimData& data, double theta0, double alpha);
core::TestResult wald_test_ichimura(const SimData& data, double theta0, double alpha, const SimNuisanceFits& fits,
                                    WaldDetails* details = nullptr);

/// Monte Carlo estimates of Sigma21 = E[g ldot'] and V = E[g g'] at the null,
/// with ldot(W) = -phi(eps, X) f'(V) X2 and phi the error-density score.
struct LocalPowerParams {
  Eigen::MatrixXd sigma21;
  Eigen::MatrixXd v;
  Eigen::MatrixXd sigma21_se;
  Eigen::MatrixXd v_se;
  /// Standard error of the Monte Carlo mean of g ldot' - g g' (scalar case).
  double difference_se = 0.0;

  /// tau' Sigma21' V^+ Sigma21 tau for scalar tau.
  double noncentrality(double tau) const;
};

LocalPowerParams local_power_params(const SimDesign& design, double theta0, long mc_reps, std::uint64_t seed);

/// Score of the error density in its first argument.
double error_score(ErrorKind kind, double eps, double x1);

}  // namespace calpha::sim
