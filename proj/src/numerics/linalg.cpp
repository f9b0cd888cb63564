#include "calpha/numerics/linalg.hpp"

#include <cmath>
#include <string>

#include "calpha/error.hpp"

namespace calpha::numerics {

SymmetricMatrix::SymmetricMatrix(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) {
    throw InputError("SymmetricMatrix: matrix is " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()) + ", not square");
  }
  if (m.rows() == 0) throw InputError("SymmetricMatrix: empty matrix");
  if (!m.allFinite()) throw InputError("SymmetricMatrix: non-finite entries");
  entries_ = 0.5 * (m + m.transpose());
}

SymmetricMatrix SymmetricMatrix::zero(Eigen::Index dim) {
  return SymmetricMatrix(Eigen::MatrixXd::Zero(dim, dim));
}

SymmetricMatrix SymmetricMatrix::identity(Eigen::Index dim) {
  return SymmetricMatrix(Eigen::MatrixXd::Identity(dim, dim));
}

EigenDecomposition sym_eigen(const SymmetricMatrix& m) {
  // Householder tridiagonalization followed by implicit symmetric QR sweeps.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m.matrix());
  if (solver.info() != Eigen::Success) {
    throw ConditioningError("sym_eigen: eigensolver failed to converge");
  }
  const Eigen::Index d = m.dim();
  EigenDecomposition out{Eigen::VectorXd(d), Eigen::MatrixXd(d, d)};
  // Eigen returns ascending order.
  for (Eigen::Index k = 0; k < d; ++k) {
    out.eigenvalues(k) = solver.eigenvalues()(d - 1 - k);
    out.eigenvectors.col(k) = solver.eigenvectors().col(d - 1 - k);
  }
  return out;
}

RegularizedInverse threshold_pinv(const EigenDecomposition& eig, double threshold) {
  if (!(threshold >= 0.0) || !std::isfinite(threshold)) {
    throw DomainError("threshold_pinv: threshold must be finite and >= 0");
  }
  const Eigen::Index d = eig.eigenvalues.size();
  int rank = 0;
  while (rank < d && eig.eigenvalues(rank) > threshold) ++rank;

  Eigen::MatrixXd inv = Eigen::MatrixXd::Zero(d, d);
  if (rank > 0) {
    const auto q = eig.eigenvectors.leftCols(rank);
    const Eigen::VectorXd inv_vals = eig.eigenvalues.head(rank).cwiseInverse();
    inv = q * inv_vals.asDiagonal() * q.transpose();
  }
  return RegularizedInverse{SymmetricMatrix(inv), rank, threshold,
                            eig.eigenvalues.head(rank)};
}

RegularizedInverse threshold_pinv(const SymmetricMatrix& m, double threshold) {
  if (!(threshold >= 0.0) || !std::isfinite(threshold)) {
    throw DomainError("threshold_pinv: threshold must be finite and >= 0");
  }
  return threshold_pinv(sym_eigen(m), threshold);
}

}  // namespace calpha::numerics
