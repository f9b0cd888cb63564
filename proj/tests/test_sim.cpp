#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "calpha/error.hpp"
#include "calpha/sim/sim_model.hpp"

using namespace calpha;
using namespace calpha::sim;

namespace {

SimDesign design(const std::string& name, int n) {
  SimDesign d = *SimDesign::parse(name);
  d.n = n;
  return d;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(const Eigen::VectorXd& v) {
  const double n = static_cast<double>(v.size());
  const double m = v.mean();
  return {m, std::sqrt((v.array() - m).square().sum() / (n - 1) / n)};
}

Eigen::VectorXd index_values(const SimData& data, double theta) { return data.x1 + data.x2 * theta; }

}  // namespace

TEST_CASE("link functions") {
  for (int j = 1; j <= 3; ++j) {
    const double ce = link_scale(LinkFamily::Exponential, j);
    const double cl = link_scale(LinkFamily::Logistic, j);
    CHECK(link_eval(LinkFamily::Exponential, ce, 0.0) == 5.0);
    CHECK(link_deriv(LinkFamily::Exponential, ce, 0.0) == 0.0);
    CHECK(std::abs(link_eval(LinkFamily::Logistic, cl, 0.0) - 12.5) < 1e-14);
    CHECK(std::abs(link_deriv(LinkFamily::Logistic, cl, 0.0) - 25.0 / (4.0 * cl)) < 1e-14);
  }
  CHECK(link_scale(LinkFamily::Exponential, 3) == 4.0);
  CHECK(link_scale(LinkFamily::Logistic, 3) == 32.0);
  CHECK_THROWS_AS(link_scale(LinkFamily::Logistic, 4), InputError);

  Rng rng = make_stream(401, 0);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  const double h = 1e-5;
  for (int k = 0; k < 50; ++k) {
    const double v = u(rng);
    for (auto fam : {LinkFamily::Exponential, LinkFamily::Logistic}) {
      for (int j = 1; j <= 3; ++j) {
        const double c = link_scale(fam, j);
        const double fd = (link_eval(fam, c, v + h) - link_eval(fam, c, v - h)) / (2 * h);
        CHECK(std::abs(fd - link_deriv(fam, c, v)) < 1e-6);
      }
    }
  }
}

TEST_CASE("design names") {
  int count = 0;
  for (const char* fam : {"exp", "log"})
    for (const char* err : {"homo", "het"})
      for (int j = 1; j <= 3; ++j) {
        const std::string name = std::string(fam) + std::to_string(j) + "-" + err;
        const auto d = SimDesign::parse(name);
        REQUIRE(d.has_value());
        CHECK(d->name() == name);
        ++count;
      }
  CHECK(count == 12);
  CHECK_FALSE(SimDesign::parse("exp4-homo").has_value());
  CHECK_FALSE(SimDesign::parse("exp1").has_value());
  CHECK_FALSE(SimDesign::parse("cubic1-het").has_value());
}

TEST_CASE("simulation is deterministic") {
  const auto d = design("log2-het", 300);
  const auto a = simulate_sim(d, 77);
  const auto b = simulate_sim(d, 77);
  CHECK(a.y == b.y);
  CHECK(a.x1 == b.x1);
  CHECK(a.x2 == b.x2);
  CHECK(simulate_sim(d, 78).y != a.y);
}

TEST_CASE("error laws") {
  const int n = 1000000;
  const auto homo = design("exp1-homo", n);
  const auto data = simulate_sim(homo, 402);
  const Eigen::VectorXd v = index_values(data, 1.0);
  Eigen::VectorXd eps(n);
  for (int i = 0; i < n; ++i) eps(i) = data.y(i) - link_eval(LinkFamily::Exponential, 1.0, v(i));
  CHECK(std::abs(eps.squaredNorm() / n - 1.0) < 0.01);
  CHECK(std::abs(eps.mean()) < 0.005);

  const auto het = simulate_sim(design("exp1-het", n), 403);
  const Eigen::VectorXd vh = index_values(het, 1.0);
  // Bins of X1 around 0 and the edges, where sin^2 peaks on [-1, 1].
  for (double centre : {-0.95, 0.0, 0.95}) {
    double sum = 0.0, target = 0.0;
    long count = 0;
    for (int i = 0; i < n; ++i) {
      if (std::abs(het.x1(i) - centre) > 0.05) continue;
      const double e = het.y(i) - link_eval(LinkFamily::Exponential, 1.0, vh(i));
      const double s = std::sin(het.x1(i));
      sum += e * e;
      target += 1.0 + s * s;
      ++count;
    }
    CHECK(std::abs(sum / count - target / count) < 0.05);
  }
}

TEST_CASE("conditional mean of X2 given the index") {
  const int n = 1000000;
  const auto data = simulate_sim(design("exp1-homo", n), 404);
  for (double theta : {1.0, -0.5, 2.0}) {
    const Eigen::VectorXd v = index_values(data, theta);
    const double lo = v.minCoeff(), hi = v.maxCoeff();
    for (int b = 1; b < 10; ++b) {
      const double centre = lo + (hi - lo) * b / 10.0;
      double sum = 0.0, target = 0.0;
      long count = 0;
      for (int i = 0; i < n; ++i) {
        if (std::abs(v(i) - centre) > 0.01 * (hi - lo)) continue;
        sum += data.x2(i);
        target += conditional_mean_x2(v(i), theta);
        ++count;
      }
      REQUIRE(count > 1000);
      CHECK(std::abs(sum / count - target / count) < 0.01);
    }
  }
}

TEST_CASE("oracle moments are centred and orthogonal to nuisance scores") {
  const int n = 1000000;
  for (const char* name : {"exp1-homo", "log2-het"}) {
    const auto d = design(name, n);
    const auto data = simulate_sim(d, 405);
    const auto truth = SimTruth::from_design(d, d.theta_true);
    const Eigen::VectorXd g = oracle_moment(data, d.theta_true, truth).rows().col(0);
    const auto m = mean_se(g);
    CHECK(std::abs(m.mean) < 3 * m.se);

    // Nuisance direction f -> f + t sin: score -phi(eps, X1) sin(V).
    const Eigen::VectorXd v = index_values(data, d.theta_true);
    Eigen::VectorXd prod(n);
    for (int i = 0; i < n; ++i) {
      const double eps = data.y(i) - truth.f(v(i));
      prod(i) = g(i) * -error_score(d.error_kind, eps, data.x1(i)) * std::sin(v(i));
    }
    const auto c = mean_se(prod);
    CHECK(std::abs(c.mean) < 3 * c.se);
  }

  const auto d = design("exp2-homo", 500);
  const auto data = simulate_sim(d, 406);
  SimTruth flat = SimTruth::from_design(d, 1.0);
  flat.f_prime = [](double) { return 0.0; };
  CHECK(oracle_moment(data, 1.0, flat).rows().norm() == 0.0);
}

TEST_CASE("feasible moments track the oracle") {
  const auto d = design("exp1-homo", 800);
  const auto data = simulate_sim(d, 407);
  const Eigen::VectorXd f = feasible_moment(data, 1.0).rows().col(0);
  const Eigen::VectorXd o = oracle_moment(data, 1.0, SimTruth::from_design(d, 1.0)).rows().col(0);
  const double fc = f.mean(), oc = o.mean();
  const double corr = ((f.array() - fc) * (o.array() - oc)).sum() /
                      std::sqrt((f.array() - fc).square().sum() * (o.array() - oc).square().sum());
  CHECK(corr > 0.9);

  // The aggregated difference shrinks with n.
  std::vector<double> gaps;
  for (int n : {400, 800, 1600}) {
    double sum = 0.0;
    for (int rep = 0; rep < 40; ++rep) {
      const auto dn = design("exp1-homo", n);
      Rng rng = make_stream(408, rep, n);
      const auto dat = simulate_sim(dn, rng);
      const Eigen::VectorXd a = feasible_moment(dat, 1.0).rows().col(0);
      const Eigen::VectorXd b = oracle_moment(dat, 1.0, SimTruth::from_design(dn, 1.0)).rows().col(0);
      sum += std::abs((a - b).sum()) / std::sqrt(static_cast<double>(n));
    }
    gaps.push_back(sum / 40);
  }
  CHECK(gaps[1] < gaps[0]);
  CHECK(gaps[2] < gaps[1]);
}

TEST_CASE("psi test basics") {
  const auto small = simulate_sim(design("exp1-homo", 99), 409);
  CHECK_THROWS_AS(psi_test_sim(small, 1.0, 0.05), InputError);

  const auto data = simulate_sim(design("exp1-homo", 800), 410);
  CHECK(psi_test_sim(data, 1.5, 0.05).reject);
  CHECK(psi_test_sim(data, 0.5, 0.05).reject);
  const auto at_truth = psi_test_sim(data, 1.0, 0.05);
  CHECK(at_truth.rank == 1);
  CHECK(at_truth.p_value > 0.0);
}

TEST_CASE("Wald estimate with zero noise") {
  for (const char* name : {"exp1-homo", "log1-homo"}) {
    const auto d = design(name, 600);
    auto data = simulate_sim(d, 411);
    const Eigen::VectorXd v = index_values(data, 1.0);
    for (Eigen::Index i = 0; i < data.n(); ++i) data.y(i) = link_eval(d.link_family, d.scale(), v(i));
    WaldDetails details;
    wald_test_ichimura(data, 1.0, 0.05, fit_sim_nuisance(data, 1.0), &details);
    CHECK_FALSE(details.degenerate);
    CHECK(std::abs(details.theta_hat - 1.0) < 0.1);
  }
}

TEST_CASE("local power parameters of the efficient design") {
  const auto p = local_power_params(design("exp1-homo", 800), 1.0, 200000, 412);
  CHECK(std::abs(p.sigma21(0, 0) - p.v(0, 0)) < 3 * p.difference_se);
  CHECK(p.v(0, 0) > 0.0);
  CHECK(p.noncentrality(0.0) == 0.0);
  CHECK(std::abs(p.noncentrality(2.0) - 4.0 * p.sigma21(0, 0) * p.sigma21(0, 0) / p.v(0, 0)) < 1e-12);
}

TEST_CASE("weak identification: psi holds its level, Wald does not") {
  const int reps = 1000;
  for (int n : {400, 600, 800}) {
    const auto d = design("exp3-homo", n);
    int psi = 0, wald = 0;
    for (int rep = 0; rep < reps; ++rep) {
      Rng rng = make_stream(413, rep, n);
      const auto data = simulate_sim(d, rng);
      const auto fits = fit_sim_nuisance(data, 1.0);
      psi += psi_test_sim(data, 1.0, 0.05, kSimThreshold, fits).reject;
      wald += wald_test_ichimura(data, 1.0, 0.05, fits).reject;
    }
    MESSAGE("n=" << n << " psi " << 100.0 * psi / reps << "% wald " << 100.0 * wald / reps << "%");
    CHECK(psi >= 0.03 * reps);
    CHECK(psi <= 0.07 * reps);
    CHECK(wald > 0.10 * reps);
  }
}

TEST_SUITE("properties") {
  TEST_CASE("oracle moment statistics are permutation invariant") {
    const auto d = design("log1-het", 500);
    const auto data = simulate_sim(d, 414);
    const auto truth = SimTruth::from_design(d, 1.0);
    const auto base = oracle_moment(data, 1.0, truth);
    std::vector<Eigen::Index> perm(500);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = make_stream(415, 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    SimData shuffled{Eigen::VectorXd(500), Eigen::VectorXd(500), Eigen::VectorXd(500)};
    for (Eigen::Index i = 0; i < 500; ++i) {
      shuffled.y(i) = data.y(perm[i]);
      shuffled.x1(i) = data.x1(perm[i]);
      shuffled.x2(i) = data.x2(perm[i]);
    }
    const auto moved = oracle_moment(shuffled, 1.0, truth);
    CHECK(std::abs(core::aggregate(base)(0) - core::aggregate(moved)(0)) < 1e-12);
    CHECK(std::abs(core::second_moment(base)(0, 0) - core::second_moment(moved)(0, 0)) < 1e-12);
    core::TestConfig cfg;
    cfg.threshold = kSimThreshold;
    CHECK(std::abs(core::c_alpha_test(base, cfg).statistic - core::c_alpha_test(moved, cfg).statistic) < 1e-10);
  }
}
