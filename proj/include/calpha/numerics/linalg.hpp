#pragma once

#include <Eigen/Dense>

namespace calpha::numerics {

/// Finite real symmetric matrix. Construction symmetrizes the input as
/// (M + M') / 2 and rejects non-square or non-finite inputs with InputError.
class SymmetricMatrix {
 public:
  explicit SymmetricMatrix(const Eigen::MatrixXd& m);

  static SymmetricMatrix zero(Eigen::Index dim);
  static SymmetricMatrix identity(Eigen::Index dim);

  Eigen::Index dim() const { return entries_.rows(); }
  const Eigen::MatrixXd& matrix() const { return entries_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return entries_(i, j); }

 private:
  Eigen::MatrixXd entries_;
};

/// Spectral decomposition with eigenvalues sorted in descending order and the
/// matching orthonormal eigenvectors stored column-wise.
struct EigenDecomposition {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;
};

/// Eigenvalue-thresholded pseudo-inverse.
struct RegularizedInverse {
  SymmetricMatrix pseudo_inverse;
  int rank = 0;
  double threshold = 0.0;
  /// Retained eigenvalues of the input (descending), one per unit of rank.
  Eigen::VectorXd kept_eigenvalues;
};

EigenDecomposition sym_eigen(const SymmetricMatrix& m);

/// Inverts the eigenvalues strictly greater than `threshold` and zeroes the
/// rest. Ties at exactly the threshold are dropped, so rank 0 is reachable.
RegularizedInverse threshold_pinv(const SymmetricMatrix& m, double threshold);

/// Same construction from a precomputed decomposition.
RegularizedInverse threshold_pinv(const EigenDecomposition& eig, double threshold);

}  // namespace calpha::numerics
