#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "calpha/error.hpp"
#include "calpha/iv/iv_model.hpp"

namespace calpha::iv {

namespace {

constexpr double kZ2Corr = 0.4;
constexpr double kDesign2Corr = 0.95;

const char* family_tag(sim::LinkFamily f) { return f == sim::LinkFamily::Exponential ? "exp" : "log"; }

std::optional<sim::LinkFamily> parse_family(const std::string& s) {
  if (s == "exp") return sim::LinkFamily::Exponential;
  if (s == "log") return sim::LinkFamily::Logistic;
  return std::nullopt;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) parts.push_back(item);
  return parts;
}

// Lower Cholesky factor of the Design 1 error covariance of (eps, v1, v2).
const Eigen::Matrix3d& design1_error_factor() {
  static const Eigen::Matrix3d factor = [] {
    Eigen::Matrix3d cov;
    cov << 1.0, 0.9, 0.9, 0.9, 1.0, 0.7, 0.9, 0.7, 1.0;
    return Eigen::Matrix3d(cov.llt().matrixL());
  }();
  return factor;
}

double pi_component(const FirstStageShape& shape, double z) {
  return sim::link_eval(shape.family, sim::link_scale(shape.family, shape.scale_index), z);
}

}  // namespace

Eigen::VectorXd IVDesign::theta() const {
  return theta_true.size() == 0 ? Eigen::VectorXd::Zero(d_theta()) : theta_true;
}

void IVDesign::validate() const {
  for (const auto& p : pi) sim::link_scale(p.family, p.scale_index);
  if (n < 2) throw InputError("IVDesign: n must be at least 2");
  if (theta_true.size() != 0 && theta_true.size() != d_theta()) {
    throw InputError("IVDesign: theta_true has " + std::to_string(theta_true.size()) + " entries, expected " +
                     std::to_string(d_theta()));
  }
  if (!theta_true.allFinite() || !std::isfinite(beta)) throw InputError("IVDesign: non-finite parameters");
}

std::string IVDesign::name() const {
  std::string s = std::string(variant == Variant::Design1 ? "d1-" : "d2-") + family_tag(pi[0].family) + "-" +
                  family_tag(pi[1].family) + "-" + std::to_string(pi[0].scale_index);
  if (pi[1].scale_index != pi[0].scale_index) s += "-" + std::to_string(pi[1].scale_index);
  return s;
}

std::optional<IVDesign> IVDesign::parse(const std::string& name) {
  const auto parts = split(name, '-');
  if (parts.size() != 4 && parts.size() != 5) return std::nullopt;
  IVDesign d;
  if (parts[0] == "d1") {
    d.variant = Variant::Design1;
  } else if (parts[0] == "d2") {
    d.variant = Variant::Design2;
  } else {
    return std::nullopt;
  }
  const auto f1 = parse_family(parts[1]);
  const auto f2 = parse_family(parts[2]);
  if (!f1 || !f2) return std::nullopt;
  auto index = [](const std::string& s) -> int { return (s == "1" || s == "2" || s == "3") ? s[0] - '0' : 0; };
  const int j1 = index(parts[3]);
  const int j2 = parts.size() == 5 ? index(parts[4]) : j1;
  if (j1 == 0 || j2 == 0) return std::nullopt;
  d.pi = {FirstStageShape{*f1, j1}, FirstStageShape{*f2, j2}};
  return d;
}

void IVData::validate() const {
  const Eigen::Index n = y.size();
  if (n < 2) throw InputError("IV data: need at least 2 observations");
  if (x.rows() != n || z1.rows() != n || z2.rows() != n) throw InputError("IV data: row counts differ");
  if (x.cols() < 1 || z1.cols() < 1 || z2.cols() < 1) throw InputError("IV data: empty x, z1 or z2");
  if (!y.allFinite() || !x.allFinite() || !z1.allFinite() || !z2.allFinite()) {
    throw InputError("IV data: non-finite entries");
  }
}

Eigen::MatrixXd true_first_stage(const IVDesign& design, const Eigen::MatrixXd& z2) {
  if (z2.cols() != 2) throw InputError("true_first_stage: z2 must have 2 columns");
  Eigen::MatrixXd pi(z2.rows(), design.d_theta());
  for (Eigen::Index i = 0; i < z2.rows(); ++i) {
    const double a = pi_component(design.pi[0], z2(i, 0));
    const double b = pi_component(design.pi[1], z2(i, 1));
    if (design.variant == Variant::Design1) {
      pi(i, 0) = a;
      pi(i, 1) = b;
    } else {
      pi(i, 0) = 0.5 * (a + b);
    }
  }
  return pi;
}

double error_second_moment(const IVDesign& design) {
  if (design.variant == Variant::Design1) return 1.0;
  // 1 + E[sin^2 Z] for Z ~ N(0, 1).
  return 1.0 + 0.5 * (1.0 - std::exp(-2.0));
}

IVData simulate_iv(const IVDesign& design, Rng& rng) {
  design.validate();
  const Eigen::Index n = design.n;
  const int d = design.d_theta();
  const Eigen::VectorXd theta = design.theta();
  std::normal_distribution<double> normal(0.0, 1.0);
  const double z2_scale = std::sqrt(1.0 - kZ2Corr * kZ2Corr);
  const double v_scale = std::sqrt(1.0 - kDesign2Corr * kDesign2Corr);

  IVData data{Eigen::VectorXd(n), Eigen::MatrixXd(n, d), Eigen::MatrixXd::Ones(n, 1), Eigen::MatrixXd(n, 2)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = normal(rng);
    const double b = normal(rng);
    data.z2(i, 0) = a;
    data.z2(i, 1) = kZ2Corr * a + z2_scale * b;
    const double p1 = pi_component(design.pi[0], data.z2(i, 0));
    const double p2 = pi_component(design.pi[1], data.z2(i, 1));
    double eps = 0.0;
    if (design.variant == Variant::Design1) {
      const Eigen::Vector3d u(normal(rng), normal(rng), normal(rng));
      const Eigen::Vector3d e = design1_error_factor() * u;
      eps = e(0);
      data.x(i, 0) = p1 + e(1);
      data.x(i, 1) = p2 + e(2);
    } else {
      const double e = normal(rng);
      const double u = kDesign2Corr * e + v_scale * normal(rng);
      const double s1 = std::sin(data.z2(i, 0));
      const double c2 = std::cos(data.z2(i, 1));
      eps = std::sqrt(1.0 + s1 * s1) * e;
      data.x(i, 0) = 0.5 * (p1 + p2) + std::sqrt(1.0 + c2 * c2) * u;
    }
    data.y(i) = data.x.row(i).dot(theta) + design.beta + eps;
  }
  return data;
}

IVData simulate_iv(const IVDesign& design, std::uint64_t seed) {
  Rng rng = make_stream(seed, 0);
  return simulate_iv(design, rng);
}

OrderRule OrderRule::fixed(int k) {
  if (k < 0) throw InputError("order rule: k must be nonnegative");
  OrderRule r;
  r.kind = Kind::Fixed;
  r.k = k;
  return r;
}

OrderRule OrderRule::aic() {
  OrderRule r;
  r.kind = Kind::AIC;
  return r;
}

OrderRule OrderRule::bic() {
  OrderRule r;
  r.kind = Kind::BIC;
  return r;
}

OrderRule OrderRule::parse(const std::string& text) {
  if (text == "aic") return aic();
  if (text == "bic") return bic();
  if (text.rfind("k:", 0) == 0 && text.size() > 2) {
    const std::string digits = text.substr(2);
    if (digits.find_first_not_of("0123456789") == std::string::npos && digits.size() <= 3) {
      return fixed(std::stoi(digits));
    }
  }
  throw UsageError("invalid order rule '" + text + "' (expected k:<int>, aic or bic)");
}

std::string OrderRule::str() const {
  switch (kind) {
    case Kind::AIC:
      return "aic";
    case Kind::BIC:
      return "bic";
    default:
      return "k:" + std::to_string(k);
  }
}

}  // namespace calpha::iv
