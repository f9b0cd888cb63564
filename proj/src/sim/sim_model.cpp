#include <algorithm>
#include <cmath>
#include <string>

#include "calpha/error.hpp"
#include "calpha/sim/sim_model.hpp"

namespace calpha::sim {

namespace {

// X2 = 0.2 Z1 + 0.4 Z2 + 0.8
constexpr double kX2OnZ1 = 0.2;
constexpr double kX2OnZ2 = 0.4;
constexpr double kX2Shift = 0.8;

struct Draw {
  double x1;
  double x2;
  double eps;
};

Draw draw_one(const SimDesign& design, Rng& rng) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  const double z1 = unif(rng);
  const double z2 = unif(rng);
  const double x1 = z1;
  const double x2 = kX2OnZ1 * z1 + kX2OnZ2 * z2 + kX2Shift;
  double eps = 0.0;
  if (design.error_kind == ErrorKind::HomoskedasticT6) {
    std::student_t_distribution<double> t6(6.0);
    eps = t6(rng) / std::sqrt(1.5);
  } else {
    const double s = std::sin(x1);
    std::normal_distribution<double> normal(0.0, std::sqrt(1.0 + s * s));
    eps = normal(rng);
  }
  return {x1, x2, eps};
}

}  // namespace

double link_scale(LinkFamily family, int scale_index) {
  if (scale_index < 1 || scale_index > 3) {
    throw InputError("link scale index must be 1, 2 or 3, got " + std::to_string(scale_index));
  }
  static constexpr double kExponential[] = {1.0, 2.0, 4.0};
  static constexpr double kLogistic[] = {1.0, 4.0, 32.0};
  return family == LinkFamily::Exponential ? kExponential[scale_index - 1] : kLogistic[scale_index - 1];
}

double link_eval(LinkFamily family, double c, double v) {
  if (family == LinkFamily::Exponential) return 5.0 * std::exp(-v * v / (2.0 * c * c));
  return 25.0 / (1.0 + std::exp(-v / c));
}

double link_deriv(LinkFamily family, double c, double v) {
  if (family == LinkFamily::Exponential) return -v / (c * c) * link_eval(family, c, v);
  const double s = 1.0 / (1.0 + std::exp(-v / c));
  return 25.0 / c * s * (1.0 - s);
}

void SimDesign::validate() const {
  link_scale(link_family, scale_index);
  if (n < 2) throw InputError("SimDesign: n must be at least 2");
  if (!std::isfinite(theta_true)) throw InputError("SimDesign: theta_true must be finite");
}

std::string SimDesign::name() const {
  return std::string(link_family == LinkFamily::Exponential ? "exp" : "log") + std::to_string(scale_index) +
         (error_kind == ErrorKind::HomoskedasticT6 ? "-homo" : "-het");
}

std::optional<SimDesign> SimDesign::parse(const std::string& name) {
  for (auto family : {LinkFamily::Exponential, LinkFamily::Logistic}) {
    for (int j = 1; j <= 3; ++j) {
      for (auto kind : {ErrorKind::HomoskedasticT6, ErrorKind::HeteroskedasticNormal}) {
        SimDesign d;
        d.link_family = family;
        d.scale_index = j;
        d.error_kind = kind;
        if (d.name() == name) return d;
      }
    }
  }
  return std::nullopt;
}

SimData simulate_sim(const SimDesign& design, Rng& rng) {
  design.validate();
  const double c = design.scale();
  SimData data{Eigen::VectorXd(design.n), Eigen::VectorXd(design.n), Eigen::VectorXd(design.n)};
  for (int i = 0; i < design.n; ++i) {
    const auto d = draw_one(design, rng);
    data.x1(i) = d.x1;
    data.x2(i) = d.x2;
    data.y(i) = link_eval(design.link_family, c, d.x1 + d.x2 * design.theta_true) + d.eps;
  }
  return data;
}

SimData simulate_sim(const SimDesign& design, std::uint64_t seed) {
  Rng rng = make_stream(seed, 0);
  return simulate_sim(design, rng);
}

double conditional_mean_x2(double v, double theta) {
  // V = a Z1 + b Z2 + c0.
  const double a = 1.0 + kX2OnZ1 * theta;
  const double b = kX2OnZ2 * theta;
  const double t = v - kX2Shift * theta;
  constexpr double tiny = 1e-14;

  double z1 = 0.0;
  double z2 = 0.0;
  if (std::abs(b) > tiny) {
    // Segment: a z1 + b z2 = t, |z1| <= 1, |z2| <= 1  =>  t - |b| <= a z1 <= t + |b|.
    double lo = -1.0;
    double hi = 1.0;
    const double bb = std::abs(b);
    if (std::abs(a) > tiny) {
      double l = (t - bb) / a;
      double u = (t + bb) / a;
      if (l > u) std::swap(l, u);
      lo = std::max(lo, l);
      hi = std::min(hi, u);
    }
    if (lo > hi) {
      // v outside the support: use the nearest attainable point.
      lo = hi = std::clamp(std::abs(a) > tiny ? t / a : 0.0, -1.0, 1.0);
    }
    z1 = 0.5 * (lo + hi);
    z2 = std::clamp((t - a * z1) / b, -1.0, 1.0);
  } else if (std::abs(a) > tiny) {
    z1 = std::clamp(t / a, -1.0, 1.0);
    z2 = 0.0;
  }
  return kX2OnZ1 * z1 + kX2OnZ2 * z2 + kX2Shift;
}

SimTruth SimTruth::from_design(const SimDesign& design, double theta0) {
  const auto family = design.link_family;
  const double c = design.scale();
  return SimTruth{[family, c](double v) { return link_eval(family, c, v); },
                  [family, c](double v) { return link_deriv(family, c, v); },
                  [theta0](double v) { return conditional_mean_x2(v, theta0); }};
}

core::MomentSample oracle_moment(const SimData& data, double theta0, const SimTruth& truth) {
  const Eigen::Index n = data.n();
  Eigen::MatrixXd rows(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = data.x1(i) + data.x2(i) * theta0;
    rows(i, 0) = (data.y(i) - truth.f(v)) * truth.f_prime(v) * (data.x2(i) - truth.z0(v));
  }
  return core::MomentSample(std::move(rows));
}

double error_score(ErrorKind kind, double eps, double x1) {
  if (kind == ErrorKind::HomoskedasticT6) {
    // eps = t6 / sqrt(3/2) has density proportional to (1 + eps^2 / 4)^(-7/2).
    return -7.0 * eps / (4.0 + eps * eps);
  }
  const double s = std::sin(x1);
  return -eps / (1.0 + s * s);
}

double LocalPowerParams::noncentrality(double tau) const {
  const double s = sigma21(0, 0);
  const double var = v(0, 0);
  if (!(var > 0.0)) return 0.0;
  return tau * tau * s * s / var;
}

LocalPowerParams local_power_params(const SimDesign& design, double theta0, long mc_reps, std::uint64_t seed) {
  if (mc_reps < 2) throw InputError("local_power_params: need at least 2 Monte Carlo draws");
  SimDesign null_design = design;
  null_design.theta_true = theta0;
  null_design.validate();
  const double c = design.scale();
  Rng rng = make_stream(seed, 0, 0x5151);

  double sum_cross = 0.0, sum_cross2 = 0.0;
  double sum_sq = 0.0, sum_sq2 = 0.0;
  double sum_diff = 0.0, sum_diff2 = 0.0;
  for (long r = 0; r < mc_reps; ++r) {
    const auto d = draw_one(null_design, rng);
    const double v = d.x1 + d.x2 * theta0;
    const double fp = link_deriv(design.link_family, c, v);
    const double g = d.eps * fp * (d.x2 - conditional_mean_x2(v, theta0));
    const double ldot = -error_score(design.error_kind, d.eps, d.x1) * fp * d.x2;
    const double cross = g * ldot;
    const double sq = g * g;
    sum_cross += cross;
    sum_cross2 += cross * cross;
    sum_sq += sq;
    sum_sq2 += sq * sq;
    sum_diff += cross - sq;
    sum_diff2 += (cross - sq) * (cross - sq);
  }
  const double m = static_cast<double>(mc_reps);
  auto se = [m](double s, double s2) { return std::sqrt(std::max(0.0, s2 / m - (s / m) * (s / m)) / m); };

  LocalPowerParams out;
  out.sigma21 = Eigen::MatrixXd::Constant(1, 1, sum_cross / m);
  out.v = Eigen::MatrixXd::Constant(1, 1, sum_sq / m);
  out.sigma21_se = Eigen::MatrixXd::Constant(1, 1, se(sum_cross, sum_cross2));
  out.v_se = Eigen::MatrixXd::Constant(1, 1, se(sum_sq, sum_sq2));
  out.difference_se = se(sum_diff, sum_diff2);
  return out;
}

}  // namespace calpha::sim
