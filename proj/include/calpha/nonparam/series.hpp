#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

namespace calpha::nonparam {

/// Per-dimension affine map of [lo_j, hi_j] onto [-1, 1].
struct NormalizationBox {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  /// Column-wise sample min/max. Throws InputError on a constant column.
  static NormalizationBox from_data(const Eigen::MatrixXd& z);
  void validate() const;
};

/// Legendre polynomials P_0..P_degree at x.
Eigen::VectorXd legendre_values(int degree, double x);

/// Number of tensor-product terms, prod_j (order_j + 1).
Eigen::Index basis_size(std::span<const int> order_per_dim);

/// Tensor-product Legendre design. Column index runs over
/// sum_j k_j * stride_j with the first dimension varying fastest.
Eigen::MatrixXd legendre_design(const Eigen::MatrixXd& z, std::span<const int> order_per_dim,
                                const NormalizationBox& box);

/// Least-squares series regression of a (possibly multi-column) response.
struct SeriesFit {
  std::vector<int> order_per_dim;
  Eigen::MatrixXd coefficients;  // basis_size x response_dim
  NormalizationBox input_box;

  Eigen::MatrixXd predict(const Eigen::MatrixXd& z) const;
};

SeriesFit fit_series(const Eigen::MatrixXd& z, const Eigen::MatrixXd& x, std::span<const int> order_per_dim);

/// Out-of-sample predictions; row i never depends on the response of observation i
/// (leave-one-out) or of its own half (sample split).
struct LooFits {
  Eigen::MatrixXd values;
};

/// Leave-one-out predictions for an arbitrary design matrix via the hat-matrix
/// identity (yhat_i - h_ii y_i) / (1 - h_ii). Throws LeverageError when some
/// h_ii >= 1 - 1e-8.
LooFits loo_predictions(const Eigen::MatrixXd& design, const Eigen::MatrixXd& x);

/// Leave-one-out Legendre series fit; the normalization box uses all z.
LooFits fit_series_loo(const Eigen::MatrixXd& z, const Eigen::MatrixXd& x, std::span<const int> order_per_dim);

/// Two-fold cross fit: observations 0..floor(n/2)-1 are predicted from a fit on
/// the second half and vice versa. Each fit normalizes with its own training box.
LooFits fit_series_split(const Eigen::MatrixXd& z, const Eigen::MatrixXd& x, std::span<const int> order_per_dim);

enum class InformationCriterion { AIC, BIC };

/// Index of the design minimizing sum over response columns of
/// n log(RSS/n) + penalty * rank; the first design wins ties.
std::size_t select_design_ic(const std::vector<Eigen::MatrixXd>& designs, const Eigen::MatrixXd& x,
                             InformationCriterion criterion);

/// Minimizes sum over response columns of n log(RSS/n) + penalty * basis_size
/// (penalty 2 for AIC, log n for BIC). Ties go to the earlier candidate after
/// sorting candidates by basis size then lexicographically.
std::vector<int> select_order_ic(const Eigen::MatrixXd& z, const Eigen::MatrixXd& x,
                                 std::vector<std::vector<int>> candidate_orders, InformationCriterion criterion);

}  // namespace calpha::nonparam
