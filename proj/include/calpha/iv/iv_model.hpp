#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "calpha/core/test_engine.hpp"
#include "calpha/nonparam/series.hpp"
#include "calpha/rng.hpp"
#include "calpha/sim/sim_model.hpp"

namespace calpha::iv {

enum class Variant { Design1, Design2 };

/// One first-stage component: one of the single-index links with scale c_j applied to Z2,k.
struct FirstStageShape {
  sim::LinkFamily family = sim::LinkFamily::Exponential;
  int scale_index = 1;
};

/// Y = X' theta + Z1' beta + eps with Z1 = 1, beta = 1, Z2 ~ N(0, [[1, .4], [.4, 1]]).
/// Design 1: X = (pi_1(Z2,1), pi_2(Z2,2)) + v, (eps, v1, v2) normal with unit
/// variances, Cov(eps, v_k) = 0.9, Cov(v1, v2) = 0.7.
/// Design 2: X = (pi_1(Z2,1) + pi_2(Z2,2)) / 2 + v, eps = sqrt(1 + sin^2 Z2,1) e,
/// v = sqrt(1 + cos^2 Z2,2) u, (e, u) normal with unit variances and correlation 0.95.
struct IVDesign {
  Variant variant = Variant::Design1;
  std::array<FirstStageShape, 2> pi{};
  int n = 400;
  /// Empty means the null value zero.
  Eigen::VectorXd theta_true;
  double beta = 1.0;

  int d_theta() const { return variant == Variant::Design1 ? 2 : 1; }
  Eigen::VectorXd theta() const;
  void validate() const;
  /// "d1-exp-log-1-3": variant, families of pi_1 and pi_2, scale indices.
  /// Equal indices are written once, as in "d1-exp-exp-2".
  std::string name() const;
  /// Accepts name() output and the long form "d1-exp-exp-2-2".
  static std::optional<IVDesign> parse(const std::string& name);
};

struct IVData {
  Eigen::VectorXd y;
  Eigen::MatrixXd x;
  Eigen::MatrixXd z1;
  Eigen::MatrixXd z2;

  Eigen::Index n() const { return y.size(); }
  /// Dimensions and finiteness.
  void validate() const;
};

IVData simulate_iv(const IVDesign& design, Rng& rng);
IVData simulate_iv(const IVDesign& design, std::uint64_t seed);

/// pi(Z2) evaluated at each row of z2 (n x d_theta).
Eigen::MatrixXd true_first_stage(const IVDesign& design, const Eigen::MatrixXd& z2);

/// E[eps^2] under the design.
double error_second_moment(const IVDesign& design);

struct OrderRule {
  enum class Kind { Fixed, AIC, BIC };
  Kind kind = Kind::Fixed;
  /// Order per dimension for Fixed.
  int k = 3;
  /// Orders tried (same in every dimension) for AIC and BIC.
  std::vector<int> candidates{3, 4, 5, 6, 7};

  static OrderRule fixed(int k);
  static OrderRule aic();
  static OrderRule bic();
  /// "k:<int>", "aic" or "bic".
  static OrderRule parse(const std::string& text);
  std::string str() const;
};

struct FirstStageOptions {
  OrderRule order;
  /// Add the Z1 columns to the Legendre regressors of the first stage.
  bool include_z1 = false;
};

/// Quantities of the feasible moments that do not depend on theta0.
struct FirstStage {
  /// Row i: pihat_i(Z_i) - Mhat Z1_i with pihat leave-one-out.
  Eigen::MatrixXd instruments;
  Eigen::MatrixXd pi_hat;
  /// [n^-1 sum X Z1'] [n^-1 sum Z1 Z1']^-1
  Eigen::MatrixXd m_hat;
  std::vector<int> orders;
};

FirstStage fit_first_stage(const IVData& data, const FirstStageOptions& options);

/// Least-squares residuals of (Y - X' theta0) on Z1. Throws CollinearityError when
/// Z1 is rank deficient.
Eigen::VectorXd null_residuals(const IVData& data, const Eigen::VectorXd& theta0);

/// Rows shat^-1 epshat_i (pihat_i - Mhat Z1_i). Throws DegenerateVarianceError
/// when shat < 1e-12.
core::MomentSample feasible_moment_iv(const IVData& data, const Eigen::VectorXd& theta0,
                                      const FirstStageOptions& options);
core::MomentSample feasible_moment_iv(const IVData& data, const Eigen::VectorXd& theta0, const FirstStage& stage);

/// Moments with known pi(Z_i), beta, E[eps^2] and M = E[X Z1'] E[Z1 Z1']^-1.
core::MomentSample oracle_moment_iv(const IVData& data, const Eigen::VectorXd& theta0, const Eigen::MatrixXd& pi,
                                    const Eigen::VectorXd& beta, double error_variance, const Eigen::MatrixXd& m);

inline constexpr double kIVThreshold = 1e-2;

core::TestResult psi_test_iv(const IVData& data, const Eigen::VectorXd& theta0, double alpha,
                             double threshold, const FirstStageOptions& options);
core::TestResult psi_test_iv(const IVData& data, const Eigen::VectorXd& theta0, double alpha,
                             double threshold, const FirstStage& stage);

/// Heteroskedasticity-robust Anderson-Rubin test with Z2 as instruments after
/// partialling out Z1; chi-square with dim(Z2) degrees of freedom.
core::TestResult ar_test(const IVData& data, const Eigen::VectorXd& theta0, double alpha);

struct CIResult {
  std::vector<double> grid;
  std::vector<bool> accepted;
  /// Convex hull of the accepted grid points; unset when nothing is accepted.
  std::optional<double> lo;
  std::optional<double> hi;
  bool disconnected = false;

  bool empty() const { return !lo.has_value(); }
  std::size_t accepted_count() const;
};

/// Equally spaced grid with both endpoints included.
std::vector<double> make_grid(double lo, double hi, int points);

/// psi test inversion for scalar theta; the first stage is fitted once.
CIResult invert_ci(const IVData& data, double grid_lo, double grid_hi, int grid_points, double alpha,
                   const FirstStageOptions& options, double threshold = kIVThreshold);

// CSV ingestion

struct ColumnMap {
  std::string y;
  std::vector<std::string> x;
  std::vector<std::string> z1;
  std::vector<std::string> z2;
};

/// Named numeric columns of a comma-separated file with a header row, in the
/// requested order. Errors as for load_csv.
Eigen::MatrixXd read_csv_columns(const std::string& path, const std::vector<std::string>& names);

/// Comma-separated file with a header row. Empty cells and NA/NaN in mapped
/// columns raise MissingDataError; other non-numeric cells ParseError.
IVData load_csv(const std::string& path, const ColumnMap& columns, bool add_intercept);

/// Writes y, x1.., z1_1.., z2_1.. with round-trip precision.
void write_csv(const std::string& path, const IVData& data);

/// Column map matching write_csv's header for data of the given shape.
ColumnMap default_columns(Eigen::Index dx, Eigen::Index dz1, Eigen::Index dz2);

}  // namespace calpha::iv
