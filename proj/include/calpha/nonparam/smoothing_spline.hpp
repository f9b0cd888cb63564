#pragma once

#include <Eigen/Dense>
#include <array>
#include <span>
#include <vector>

namespace calpha::nonparam {

/// Fitted cubic smoothing spline. Stored both as cubic B-spline coefficients
/// and as per-interval Taylor polynomials for fast evaluation. Outside
/// [lo, hi] the fit continues linearly from the boundary value and slope.
class SplineFit {
 public:
  SplineFit(std::vector<double> breaks, Eigen::VectorXd coefficients, double penalty,
            double relative_penalty = 0.0);

  double value(double v) const;
  double derivative(double v) const;

  /// All distinct knots, boundary knots included.
  const std::vector<double>& breaks() const { return breaks_; }
  std::vector<double> interior_knots() const;
  const Eigen::VectorXd& coefficients() const { return coefficients_; }
  double penalty() const { return penalty_; }
  /// Penalty divided by tr(B'B) / tr(Omega) for the fitted data.
  double relative_penalty() const { return relative_penalty_; }
  double lo() const { return breaks_.front(); }
  double hi() const { return breaks_.back(); }

 private:
  std::size_t interval(double v) const;

  std::vector<double> breaks_;
  Eigen::VectorXd coefficients_;
  double penalty_;
  double relative_penalty_;
  // Taylor coefficients about the left break of each interval.
  std::vector<std::array<double, 4>> poly_;
  double hi_value_ = 0.0;
  double hi_slope_ = 0.0;
};

/// Penalized least squares cubic spline with `n_knots` knots at empirical
/// quantiles of x; the penalty is picked by generalized cross-validation over
/// 40 log-spaced values spanning 12 orders of magnitude (relative to the
/// trace ratio of the Gram and roughness matrices).
SplineFit fit_smoothing_spline(std::span<const double> x, std::span<const double> y, int n_knots = 20);

/// Same basis with a fixed roughness penalty (>= 0).
SplineFit fit_penalized_spline(std::span<const double> x, std::span<const double> y, int n_knots,
                               double penalty);

/// Fixed penalty given relative to tr(B'B) / tr(Omega), so that the amount of
/// smoothing carries over between designs with different spreads of x.
SplineFit fit_relative_penalty_spline(std::span<const double> x, std::span<const double> y, int n_knots,
                                      double relative_penalty);

inline double eval_spline(const SplineFit& fit, double v) { return fit.value(v); }
inline double eval_spline_deriv(const SplineFit& fit, double v) { return fit.derivative(v); }

}  // namespace calpha::nonparam
