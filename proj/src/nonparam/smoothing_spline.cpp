#include "calpha/nonparam/smoothing_spline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "calpha/error.hpp"

namespace calpha::nonparam {

namespace {

constexpr int kDegree = 3;
constexpr int kGridSize = 40;
constexpr double kLogPenaltyLo = -6.0;
constexpr double kLogPenaltyHi = 6.0;

using Ders = std::array<std::array<double, 4>, 4>;  // [derivative order][local basis index]

// Clamped cubic knot vector over the distinct breaks.
std::vector<double> clamped_knots(const std::vector<double>& breaks) {
  std::vector<double> u;
  u.reserve(breaks.size() + 2 * kDegree);
  for (int k = 0; k < kDegree; ++k) u.push_back(breaks.front());
  u.insert(u.end(), breaks.begin(), breaks.end());
  for (int k = 0; k < kDegree; ++k) u.push_back(breaks.back());
  return u;
}

// Nonzero cubic B-splines N_{span-3..span} and their derivatives at u.
Ders basis_derivatives(const std::vector<double>& knots, int span, double u, int n_derivs) {
  constexpr int p = kDegree;
  double ndu[p + 1][p + 1];
  double left[p + 1];
  double right[p + 1];
  ndu[0][0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = u - knots[span + 1 - j];
    right[j] = knots[span + j] - u;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      const double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }

  Ders ders{};
  for (int j = 0; j <= p; ++j) ders[0][j] = ndu[j][p];

  double a[2][p + 1];
  for (int r = 0; r <= p; ++r) {
    int s1 = 0;
    int s2 = 1;
    a[0][0] = 1.0;
    for (int k = 1; k <= n_derivs; ++k) {
      double d = 0.0;
      const int rk = r - k;
      const int pk = p - k;
      if (r >= k) {
        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
        d = a[s2][0] * ndu[rk][pk];
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
        d += a[s2][j] * ndu[rk + j][pk];
      }
      if (r <= pk) {
        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
        d += a[s2][k] * ndu[r][pk];
      }
      ders[k][r] = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int k = 1; k <= n_derivs; ++k) {
    for (int j = 0; j <= p; ++j) ders[k][j] *= factor;
    factor *= (p - k);
  }
  return ders;
}

// Index of the break interval [b_a, b_{a+1}) holding v, clamped to the last interval.
int break_interval(const std::vector<double>& breaks, double v) {
  const auto it = std::upper_bound(breaks.begin(), breaks.end(), v);
  const int a = static_cast<int>(it - breaks.begin()) - 1;
  return std::clamp(a, 0, static_cast<int>(breaks.size()) - 2);
}

std::vector<double> quantile_breaks(std::span<const double> x, int n_knots) {
  std::vector<double> uniq(x.begin(), x.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (static_cast<int>(uniq.size()) < n_knots) {
    throw InputError("smoothing spline: " + std::to_string(uniq.size()) +
                     " distinct x values, need at least " + std::to_string(n_knots));
  }
  std::vector<double> breaks(n_knots);
  const double last = static_cast<double>(uniq.size() - 1);
  for (int k = 0; k < n_knots; ++k) {
    const auto idx = static_cast<std::size_t>(std::lround(k * last / (n_knots - 1)));
    breaks[k] = uniq[idx];
  }
  return breaks;
}

struct PenalizedSystem {
  std::vector<double> breaks;
  std::vector<double> knots;
  Eigen::MatrixXd gram;       // B'B
  Eigen::VectorXd cross;      // B'y
  Eigen::MatrixXd roughness;  // integral of B'' B''^T
  std::vector<int> first_basis;
  std::vector<std::array<double, 4>> row_values;
};

PenalizedSystem build_system(std::span<const double> x, std::span<const double> y, int n_knots) {
  if (x.size() != y.size()) throw InputError("smoothing spline: x and y lengths differ");
  if (n_knots < 2) throw InputError("smoothing spline: need at least 2 knots");
  if (x.size() < static_cast<std::size_t>(n_knots) + 4) {
    throw InputError("smoothing spline: " + std::to_string(x.size()) + " observations, need at least " +
                     std::to_string(n_knots + 4));
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw InputError("smoothing spline: non-finite data at observation " + std::to_string(i));
    }
  }

  PenalizedSystem sys;
  sys.breaks = quantile_breaks(x, n_knots);
  sys.knots = clamped_knots(sys.breaks);
  const int n_basis = n_knots + 2;
  sys.gram = Eigen::MatrixXd::Zero(n_basis, n_basis);
  sys.cross = Eigen::VectorXd::Zero(n_basis);
  sys.roughness = Eigen::MatrixXd::Zero(n_basis, n_basis);
  sys.first_basis.resize(x.size());
  sys.row_values.resize(x.size());

  for (std::size_t i = 0; i < x.size(); ++i) {
    const int a = break_interval(sys.breaks, x[i]);
    const auto d = basis_derivatives(sys.knots, a + kDegree, x[i], 0);
    sys.first_basis[i] = a;
    sys.row_values[i] = d[0];
    for (int r = 0; r < 4; ++r) {
      sys.cross(a + r) += d[0][r] * y[i];
      for (int c = 0; c < 4; ++c) sys.gram(a + r, a + c) += d[0][r] * d[0][c];
    }
  }

  // B'' is linear on each interval, so two-point Gauss-Legendre is exact.
  const double offset = 0.5 / std::sqrt(3.0);
  for (int a = 0; a + 1 < n_knots; ++a) {
    const double lo = sys.breaks[a];
    const double h = sys.breaks[a + 1] - lo;
    for (double t : {0.5 - offset, 0.5 + offset}) {
      const auto d = basis_derivatives(sys.knots, a + kDegree, lo + t * h, 2);
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) sys.roughness(a + r, a + c) += 0.5 * h * d[2][r] * d[2][c];
      }
    }
  }
  return sys;
}

double penalty_scale(const PenalizedSystem& sys) { return sys.gram.trace() / sys.roughness.trace(); }

struct Solved {
  Eigen::VectorXd coef;
  double rss = 0.0;
  double trace = 0.0;
};

Solved solve(const PenalizedSystem& sys, std::span<const double> y, double penalty, bool want_trace) {
  const Eigen::MatrixXd a = sys.gram + penalty * sys.roughness;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    throw ConditioningError("smoothing spline: penalized normal equations are singular (penalty " +
                            std::to_string(penalty) + ")");
  }
  Solved out;
  out.coef = llt.solve(sys.cross);
  for (std::size_t i = 0; i < y.size(); ++i) {
    double fit = 0.0;
    for (int r = 0; r < 4; ++r) fit += sys.row_values[i][r] * out.coef(sys.first_basis[i] + r);
    const double e = y[i] - fit;
    out.rss += e * e;
  }
  if (want_trace) {
    // tr((B'B + pen*Omega)^{-1} B'B)
    out.trace = llt.solve(sys.gram).trace();
  }
  return out;
}

}  // namespace

SplineFit::SplineFit(std::vector<double> breaks, Eigen::VectorXd coefficients, double penalty,
                     double relative_penalty)
    : breaks_(std::move(breaks)),
      coefficients_(std::move(coefficients)),
      penalty_(penalty),
      relative_penalty_(relative_penalty) {
  const auto knots = clamped_knots(breaks_);
  const std::size_t n_int = breaks_.size() - 1;
  poly_.resize(n_int);
  for (std::size_t a = 0; a < n_int; ++a) {
    const auto d = basis_derivatives(knots, static_cast<int>(a) + kDegree, breaks_[a], 3);
    std::array<double, 4> s{};
    for (int k = 0; k < 4; ++k) {
      for (int r = 0; r < 4; ++r) s[k] += coefficients_(static_cast<Eigen::Index>(a) + r) * d[k][r];
    }
    poly_[a] = {s[0], s[1], s[2] / 2.0, s[3] / 6.0};
  }
  const auto& last = poly_.back();
  const double h = breaks_.back() - breaks_[n_int - 1];
  hi_value_ = last[0] + h * (last[1] + h * (last[2] + h * last[3]));
  hi_slope_ = last[1] + h * (2.0 * last[2] + 3.0 * h * last[3]);
}

std::vector<double> SplineFit::interior_knots() const {
  return {breaks_.begin() + 1, breaks_.end() - 1};
}

std::size_t SplineFit::interval(double v) const {
  return static_cast<std::size_t>(break_interval(breaks_, v));
}

double SplineFit::value(double v) const {
  if (v < breaks_.front()) return poly_.front()[0] + poly_.front()[1] * (v - breaks_.front());
  if (v > breaks_.back()) return hi_value_ + hi_slope_ * (v - breaks_.back());
  const auto a = interval(v);
  const auto& c = poly_[a];
  const double t = v - breaks_[a];
  return c[0] + t * (c[1] + t * (c[2] + t * c[3]));
}

double SplineFit::derivative(double v) const {
  if (v < breaks_.front()) return poly_.front()[1];
  if (v > breaks_.back()) return hi_slope_;
  const auto a = interval(v);
  const auto& c = poly_[a];
  const double t = v - breaks_[a];
  return c[1] + t * (2.0 * c[2] + 3.0 * t * c[3]);
}

SplineFit fit_penalized_spline(std::span<const double> x, std::span<const double> y, int n_knots,
                               double penalty) {
  if (!(penalty >= 0.0) || !std::isfinite(penalty)) {
    throw DomainError("smoothing spline: penalty must be finite and >= 0");
  }
  const auto sys = build_system(x, y, n_knots);
  auto solved = solve(sys, y, penalty, false);
  return SplineFit(sys.breaks, std::move(solved.coef), penalty, penalty / penalty_scale(sys));
}

SplineFit fit_relative_penalty_spline(std::span<const double> x, std::span<const double> y, int n_knots,
                                      double relative_penalty) {
  if (!(relative_penalty >= 0.0) || !std::isfinite(relative_penalty)) {
    throw DomainError("smoothing spline: penalty must be finite and >= 0");
  }
  const auto sys = build_system(x, y, n_knots);
  const double penalty = relative_penalty * penalty_scale(sys);
  auto solved = solve(sys, y, penalty, false);
  return SplineFit(sys.breaks, std::move(solved.coef), penalty, relative_penalty);
}

SplineFit fit_smoothing_spline(std::span<const double> x, std::span<const double> y, int n_knots) {
  const auto sys = build_system(x, y, n_knots);
  const double n = static_cast<double>(x.size());
  const double scale = penalty_scale(sys);

  double best_gcv = std::numeric_limits<double>::infinity();
  double best_penalty = 0.0;
  Eigen::VectorXd best_coef;
  for (int k = 0; k < kGridSize; ++k) {
    const double expo = kLogPenaltyLo + (kLogPenaltyHi - kLogPenaltyLo) * k / (kGridSize - 1);
    const double penalty = scale * std::pow(10.0, expo);
    auto solved = solve(sys, y, penalty, true);
    const double denom = 1.0 - solved.trace / n;
    const double gcv = (solved.rss / n) / (denom * denom);
    if (gcv < best_gcv) {
      best_gcv = gcv;
      best_penalty = penalty;
      best_coef = std::move(solved.coef);
    }
  }
  if (best_coef.size() == 0) {
    throw ConditioningError("smoothing spline: no penalty on the grid produced a finite GCV score");
  }
  return SplineFit(sys.breaks, std::move(best_coef), best_penalty, best_penalty / scale);
}

}  // namespace calpha::nonparam
