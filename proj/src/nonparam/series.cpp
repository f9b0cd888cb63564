#include "calpha/nonparam/series.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "calpha/error.hpp"

namespace calpha::nonparam {

namespace {

constexpr double kMaxLeverage = 1.0 - 1e-8;

void check_orders(std::span<const int> orders, Eigen::Index dims) {
  if (static_cast<Eigen::Index>(orders.size()) != dims) {
    throw InputError("series: " + std::to_string(orders.size()) + " orders given for " +
                     std::to_string(dims) + " input dimensions");
  }
  for (int k : orders) {
    if (k < 0) throw InputError("series: negative polynomial order");
  }
}

void check_data(const Eigen::MatrixXd& z, const Eigen::MatrixXd& x) {
  if (z.rows() != x.rows()) throw InputError("series: z and x have different numbers of rows");
  if (!z.allFinite() || !x.allFinite()) throw InputError("series: non-finite data");
}

// Orthonormal basis of the column space of `design` (rank-revealing).
Eigen::MatrixXd column_space(const Eigen::MatrixXd& design) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  const Eigen::Index r = qr.rank();
  return qr.householderQ() * Eigen::MatrixXd::Identity(design.rows(), r);
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, Eigen::Index begin, Eigen::Index end) {
  return m.middleRows(begin, end - begin);
}

}  // namespace

NormalizationBox NormalizationBox::from_data(const Eigen::MatrixXd& z) {
  if (z.rows() == 0) throw InputError("normalization box: no observations");
  NormalizationBox box{z.colwise().minCoeff().transpose(), z.colwise().maxCoeff().transpose()};
  box.validate();
  return box;
}

void NormalizationBox::validate() const {
  if (lo.size() != hi.size()) throw InputError("normalization box: bound lengths differ");
  for (Eigen::Index j = 0; j < lo.size(); ++j) {
    if (!(lo(j) < hi(j))) {
      throw InputError("normalization box: degenerate range in dimension " + std::to_string(j));
    }
  }
}

Eigen::VectorXd legendre_values(int degree, double x) {
  Eigen::VectorXd p(degree + 1);
  p(0) = 1.0;
  if (degree >= 1) p(1) = x;
  for (int k = 1; k < degree; ++k) p(k + 1) = ((2.0 * k + 1.0) * x * p(k) - k * p(k - 1)) / (k + 1.0);
  return p;
}

Eigen::Index basis_size(std::span<const int> order_per_dim) {
  Eigen::Index size = 1;
  for (int k : order_per_dim) size *= (k + 1);
  return size;
}

Eigen::MatrixXd legendre_design(const Eigen::MatrixXd& z, std::span<const int> order_per_dim,
                                const NormalizationBox& box) {
  box.validate();
  check_orders(order_per_dim, z.cols());
  if (box.lo.size() != z.cols()) throw InputError("legendre_design: box dimension mismatch");

  const Eigen::Index n = z.rows();
  const Eigen::Index dims = z.cols();
  const Eigen::Index size = basis_size(order_per_dim);
  Eigen::MatrixXd design = Eigen::MatrixXd::Ones(n, size);

  std::vector<Eigen::VectorXd> values(dims);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < dims; ++j) {
      const double u = 2.0 * (z(i, j) - box.lo(j)) / (box.hi(j) - box.lo(j)) - 1.0;
      values[j] = legendre_values(order_per_dim[j], u);
    }
    for (Eigen::Index col = 0; col < size; ++col) {
      Eigen::Index rest = col;
      double term = 1.0;
      for (Eigen::Index j = 0; j < dims; ++j) {
        const int width = order_per_dim[j] + 1;
        term *= values[j](rest % width);
        rest /= width;
      }
      design(i, col) = term;
    }
  }
  return design;
}

Eigen::MatrixXd SeriesFit::predict(const Eigen::MatrixXd& z) const {
  return legendre_design(z, order_per_dim, input_box) * coefficients;
}

SeriesFit fit_series(const Eigen::MatrixXd& z, const Eigen::MatrixXd& x, std::span<const int> order_per_dim) {
  check_data(z, x);
  check_orders(order_per_dim, z.cols());
  const Eigen::Index size = basis_size(order_per_dim);
  if (z.rows() <= size) {
    throw InputError("series fit: " + std::to_string(z.rows()) + " observations for " + std::to_string(size) +
                     " basis functions");
  }
  SeriesFit fit{{order_per_dim.begin(), order_per_dim.end()}, {}, NormalizationBox::from_data(z)};
  const Eigen::MatrixXd design = legendre_design(z, order_per_dim, fit.input_box);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  fit.coefficients = qr.solve(x);
  return fit;
}

LooFits loo_predictions(const Eigen::MatrixXd& design, const Eigen::MatrixXd& x) {
  if (design.rows() != x.rows()) throw InputError("loo: design and response row counts differ");
  if (design.rows() <= design.cols() + 1) {
    throw InputError("loo: " + std::to_string(design.rows()) + " observations for " +
                     std::to_string(design.cols()) + " regressors");
  }
  const Eigen::MatrixXd q = column_space(design);
  const Eigen::VectorXd leverage = q.rowwise().squaredNorm();
  const Eigen::MatrixXd fitted = q * (q.transpose() * x);

  LooFits out{Eigen::MatrixXd(x.rows(), x.cols())};
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double h = leverage(i);
    if (h >= kMaxLeverage) {
      throw LeverageError("loo: observation " + std::to_string(i) + " has leverage " + std::to_string(h), i);
    }
    out.values.row(i) = (fitted.row(i) - h * x.row(i)) / (1.0 - h);
  }
  return out;
}

LooFits fit_series_loo(const Eigen::MatrixXd& z, const Eigen::MatrixXd& x, std::span<const int> order_per_dim) {
  check_data(z, x);
  check_orders(order_per_dim, z.cols());
  const Eigen::Index size = basis_size(order_per_dim);
  if (z.rows() <= size + 1) {
    throw InputError("leave-one-out series: " + std::to_string(z.rows()) + " observations for " +
                     std::to_string(size) + " basis functions");
  }
  return loo_predictions(legendre_design(z, order_per_dim, NormalizationBox::from_data(z)), x);
}

LooFits fit_series_split(const Eigen::MatrixXd& z, const Eigen::MatrixXd& x, std::span<const int> order_per_dim) {
  check_data(z, x);
  check_orders(order_per_dim, z.cols());
  const Eigen::Index n = z.rows();
  const Eigen::Index half = n / 2;
  const Eigen::Index size = basis_size(order_per_dim);
  if (half <= size || n - half <= size) {
    throw InputError("split series: halves of " + std::to_string(half) + " and " + std::to_string(n - half) +
                     " observations for " + std::to_string(size) + " basis functions");
  }
  LooFits out{Eigen::MatrixXd(n, x.cols())};
  const auto first = fit_series(rows_of(z, 0, half), rows_of(x, 0, half), order_per_dim);
  const auto second = fit_series(rows_of(z, half, n), rows_of(x, half, n), order_per_dim);
  out.values.topRows(half) = second.predict(rows_of(z, 0, half));
  out.values.bottomRows(n - half) = first.predict(rows_of(z, half, n));
  return out;
}

namespace {

double ic_score(const Eigen::MatrixXd& design, const Eigen::MatrixXd& x, double per_term) {
  const double n = static_cast<double>(x.rows());
  const Eigen::MatrixXd q = column_space(design);
  const Eigen::MatrixXd resid = x - q * (q.transpose() * x);
  double score = 0.0;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double rss = std::max(resid.col(c).squaredNorm(), std::numeric_limits<double>::min());
    score += n * std::log(rss / n) + per_term * static_cast<double>(q.cols());
  }
  return score;
}

double ic_penalty(InformationCriterion criterion, Eigen::Index n) {
  return criterion == InformationCriterion::AIC ? 2.0 : std::log(static_cast<double>(n));
}

}  // namespace

std::size_t select_design_ic(const std::vector<Eigen::MatrixXd>& designs, const Eigen::MatrixXd& x,
                             InformationCriterion criterion) {
  if (designs.empty()) throw InputError("select_design_ic: empty candidate set");
  const double per_term = ic_penalty(criterion, x.rows());
  double best = std::numeric_limits<double>::infinity();
  std::size_t chosen = 0;
  for (std::size_t c = 0; c < designs.size(); ++c) {
    if (designs[c].rows() != x.rows()) throw InputError("select_design_ic: row count mismatch");
    if (designs[c].rows() <= designs[c].cols()) {
      throw InputError("select_design_ic: candidate with " + std::to_string(designs[c].cols()) +
                       " columns is infeasible for n = " + std::to_string(x.rows()));
    }
    const double score = ic_score(designs[c], x, per_term);
    if (score < best) {
      best = score;
      chosen = c;
    }
  }
  return chosen;
}

std::vector<int> select_order_ic(const Eigen::MatrixXd& z, const Eigen::MatrixXd& x,
                                 std::vector<std::vector<int>> candidate_orders, InformationCriterion criterion) {
  if (candidate_orders.empty()) throw InputError("select_order_ic: empty candidate set");
  check_data(z, x);
  std::sort(candidate_orders.begin(), candidate_orders.end(), [](const auto& a, const auto& b) {
    const auto sa = basis_size(a);
    const auto sb = basis_size(b);
    return sa != sb ? sa < sb : a < b;
  });

  const NormalizationBox box = NormalizationBox::from_data(z);
  std::vector<Eigen::MatrixXd> designs;
  for (const auto& orders : candidate_orders) {
    check_orders(orders, z.cols());
    designs.push_back(legendre_design(z, orders, box));
  }
  return candidate_orders[select_design_ic(designs, x, criterion)];
}

}  // namespace calpha::nonparam
