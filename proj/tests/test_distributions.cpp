#include <algorithm>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/sinh_sinh.hpp>
#include <cmath>
#include <numbers>

#include "coupledgeom/distributions.hpp"
#include "coupledgeom/errors.hpp"
#include "doctest.h"

using namespace coupled;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kPi = std::numbers::pi;

// Independent oracle: integrate the *unnormalized* 1-D coupled Gaussian with
// a double-exponential rule (different scheme from the library's Kronrod).
double unnormalized_mass_1d(double sigma2, double kappa) {
  boost::math::quadrature::sinh_sinh<double> integrator;
  auto f = [&](double x) {
    const double delta = x * x / sigma2;
    if (kappa == 0.0) return std::exp(-0.5 * delta);
    return std::pow(1.0 + kappa * delta, -(1.0 + kappa) / (2.0 * kappa));
  };
  return integrator.integrate(f, 1e-13);
}

VectorXd vec1(double x) { return VectorXd::Constant(1, x); }

MatrixXd random_spd(Rng& rng, int d) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = n(rng);
  return a * a.transpose() + 0.5 * MatrixXd::Identity(d, d);
}

}  // namespace

TEST_CASE("log_gamma reference values") {
  CHECK(std::exp(log_gamma(0.5)) == doctest::Approx(std::sqrt(kPi)).epsilon(1e-14));
  CHECK(log_gamma(1.0) == doctest::Approx(0.0));
  CHECK(std::exp(log_gamma(5.0)) == doctest::Approx(24.0).epsilon(1e-13));
  CHECK_THROWS_AS(log_gamma(0.0), DomainError);
}

TEST_CASE("cg_normalizer examples match the quadrature oracle") {
  const double gauss = cg_normalizer(MatrixXd::Identity(1, 1), Coupling{0.0, 2, 1});
  CHECK(gauss == doctest::Approx(std::sqrt(2.0 * kPi)).epsilon(1e-14));
  CHECK(gauss == doctest::Approx(unnormalized_mass_1d(1.0, 0.0)).epsilon(1e-10));

  const double cauchy = cg_normalizer(MatrixXd::Identity(1, 1), Coupling{1.0, 2, 1});
  CHECK(cauchy == doctest::Approx(kPi).epsilon(1e-14));
  CHECK(cauchy == doctest::Approx(unnormalized_mass_1d(1.0, 1.0)).epsilon(1e-9));

  const double wide = cg_normalizer(MatrixXd::Constant(1, 1, 4.0), Coupling{1.0, 2, 1});
  CHECK(wide == doctest::Approx(2.0 * kPi).epsilon(1e-14));
  CHECK(wide == doctest::Approx(unnormalized_mass_1d(4.0, 1.0)).epsilon(1e-9));

  for (double k : {0.1, 1.0 / 3.0, 2.0, 7.5}) {
    const double z = cg_normalizer(MatrixXd::Constant(1, 1, 2.5), Coupling{k, 2, 1});
    CHECK(z == doctest::Approx(unnormalized_mass_1d(2.5, k)).epsilon(1e-8));
  }
}

TEST_CASE("cg_normalizer rejects bad input") {
  MatrixXd not_spd(2, 2);
  not_spd << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(cg_normalizer(not_spd, Coupling{0.5, 2, 2}), DomainError);
  MatrixXd asym(2, 2);
  asym << 2.0, 0.5, 0.1, 2.0;
  CHECK_THROWS_AS(cg_normalizer(asym, Coupling{0.5, 2, 2}), DomainError);
  CHECK_THROWS_AS(cg_normalizer(MatrixXd::Identity(2, 2), Coupling{0.5, 1, 2}), DomainError);
  CHECK_THROWS_AS(CoupledGaussian(VectorXd::Zero(2), not_spd, 0.5), DomainError);
  CHECK_THROWS_AS(CoupledGaussian(VectorXd::Zero(1), MatrixXd::Identity(1, 1), -0.1), DomainError);
  CHECK_THROWS_AS(CoupledGaussian::diagonal(VectorXd::Zero(2), VectorXd::Constant(2, -1.0), 0.0), DomainError);
}

TEST_CASE("cg_log_density examples") {
  const VectorXd mu = VectorXd::Zero(1);
  const MatrixXd one = MatrixXd::Identity(1, 1);
  CHECK(cg_log_density(CoupledGaussian(mu, one, 0.0), vec1(0.0)) ==
        doctest::Approx(-0.5 * std::log(2.0 * kPi)).epsilon(1e-14));
  CHECK(cg_log_density(CoupledGaussian(mu, one, 1.0), vec1(0.0)) == doctest::Approx(-std::log(kPi)).epsilon(1e-14));
  CHECK(cg_log_density(CoupledGaussian(mu, one, 1.0), vec1(1.0)) ==
        doctest::Approx(-std::log(2.0 * kPi)).epsilon(1e-14));
}

TEST_CASE("diagonal and dense storage agree") {
  VectorXd mu(3);
  mu << 0.1, -0.2, 0.3;
  VectorXd diag(3);
  diag << 0.5, 2.0, 1.5;
  const CoupledGaussian a = CoupledGaussian::diagonal(mu, diag, 0.7);
  const CoupledGaussian b(mu, MatrixXd(diag.asDiagonal()), 0.7);
  VectorXd x(3);
  x << 1.0, 0.5, -2.0;
  CHECK(cg_log_density(a, x) == doctest::Approx(cg_log_density(b, x)).epsilon(1e-14));
  CHECK(a.log_det_scale() == doctest::Approx(b.log_det_scale()).epsilon(1e-14));
}

TEST_CASE("kappa -> 0 continuity of the log density") {
  const CoupledGaussian g(VectorXd::Constant(1, 0.4), MatrixXd::Constant(1, 1, 2.0), 0.0);
  const CoupledGaussian t(VectorXd::Constant(1, 0.4), MatrixXd::Constant(1, 1, 2.0), 1e-8);
  const double sd = std::sqrt(2.0);
  for (double z = -6.0; z <= 6.0; z += 0.25) {
    const VectorXd x = vec1(0.4 + z * sd);
    CHECK(std::abs(cg_log_density(t, x) - cg_log_density(g, x)) <= 1e-5);
  }
}

TEST_CASE("gpd_log_density examples") {
  CHECK(gpd_log_density(GeneralizedPareto(1.0, 0.0), 0.0) == 0.0);
  CHECK(gpd_log_density(GeneralizedPareto(2.0, 0.0), 2.0) == doctest::Approx(-1.0 - std::log(2.0)).epsilon(1e-14));
  CHECK(gpd_log_density(GeneralizedPareto(1.0, 1.0), 1.0) == doctest::Approx(std::log(0.25)).epsilon(1e-14));
  CHECK_THROWS_AS(gpd_log_density(GeneralizedPareto(1.0, 1.0), -0.1), DomainError);

  boost::math::quadrature::exp_sinh<double> integrator;
  for (double k : {0.0, 0.3, 1.0, 3.0}) {
    const GeneralizedPareto g(1.7, k);
    const double mass = integrator.integrate([&](double x) { return std::exp(gpd_log_density(g, x)); }, 0.0,
                                             std::numeric_limits<double>::infinity());
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("escort_transform examples") {
  const MatrixXd one = MatrixXd::Identity(1, 1);
  const CoupledGaussian cauchy(VectorXd::Zero(1), one, 1.0);
  CHECK(escort_transform(cauchy).kappa() == 1.0 / 3.0);

  const CoupledGaussian gauss(VectorXd::Constant(1, 2.0), one * 3.0, 0.0);
  const CoupledGaussian same = escort_transform(gauss);
  CHECK(same.kappa() == 0.0);
  CHECK(same.scale()(0, 0) == 3.0);
  CHECK(same.mu()(0) == 2.0);

  const CoupledGaussian extreme(VectorXd::Zero(1), one, 1e5);
  CHECK(escort_transform(extreme).kappa() == doctest::Approx(1e5 / 200001.0).epsilon(1e-14));
  CHECK(std::abs(escort_transform(extreme).kappa() - 0.5) <= 1e-5);
}

TEST_CASE("escort identity: density ratio is constant") {
  Rng rng(4);
  std::uniform_real_distribution<double> kdist(0.01, 10.0);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 1 + trial % 4;
    const double k = kdist(rng);
    VectorXd mu(d);
    for (int i = 0; i < d; ++i) mu(i) = n(rng);
    const CoupledGaussian q(mu, random_spd(rng, d), k);
    const CoupledGaussian big_q = escort_transform(q);
    const double power = escort_power(q.coupling(), 2.0);
    double first = 0.0;
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      VectorXd x(d);
      for (int j = 0; j < d; ++j) x(j) = mu(j) + 3.0 * n(rng);
      const double log_ratio = power * cg_log_density(q, x) - cg_log_density(big_q, x);
      if (i == 0) first = log_ratio;
      worst = std::max(worst, std::abs(std::expm1(log_ratio - first)));
      // exponent invariance: k S^-1 == k_Q S_Q^-1
      const double lhs = q.kappa() * q.mahalanobis(x);
      const double rhs = big_q.kappa() * big_q.mahalanobis(x);
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
    CHECK(worst <= 1e-10);
    CHECK(big_q.kappa() < 0.5);
    CHECK(moment_exists(big_q.coupling(), 1));
    CHECK(moment_exists(big_q.coupling(), 2));
  }
}

TEST_CASE("escort_density examples") {
  const std::vector<double> uniform{0.5, 0.5};
  for (double q : {1.0, 2.0, 7.3}) {
    const auto w = escort_weights(uniform, q);
    CHECK(w[0] == doctest::Approx(0.5));
    CHECK(w[1] == doctest::Approx(0.5));
  }

  const CoupledGaussian cauchy(VectorXd::Zero(1), MatrixXd::Identity(1, 1), 1.0);
  const EscortDensity esc = escort_density([&](double x) { return cg_log_density(cauchy, vec1(x)); }, 2.0,
                                           Support::kRealLine);
  for (double x : {-5.0, -1.0, 0.0, 0.3, 2.0, 40.0}) {
    CHECK(esc(x) == doctest::Approx(2.0 / kPi / std::pow(1.0 + x * x, 2)).epsilon(1e-10));
  }

  const double sigma2 = 1.7;
  const double q = 2.5;
  const CoupledGaussian g(VectorXd::Zero(1), MatrixXd::Constant(1, 1, sigma2), 0.0);
  const EscortDensity gq = escort_density([&](double x) { return cg_log_density(g, vec1(x)); }, q,
                                          Support::kRealLine);
  const CoupledGaussian narrow(VectorXd::Zero(1), MatrixXd::Constant(1, 1, sigma2 / q), 0.0);
  for (double x : {-2.0, 0.0, 0.5, 1.5}) {
    CHECK(gq(x) == doctest::Approx(std::exp(cg_log_density(narrow, vec1(x)))).epsilon(1e-10));
  }

  CHECK_THROWS_AS(escort_density([](double) { return 0.0; }, 0.5, Support::kRealLine), DomainError);
  // 1/x tail: the normalizer diverges.
  CHECK_THROWS_AS(escort_density([](double x) { return -std::log1p(x); }, 1.0, Support::kHalfLine), DivergenceError);
}

TEST_CASE("escort normalizer by importance sampling in 2-D") {
  VectorXd mu(2);
  mu << 0.5, -0.5;
  MatrixXd s(2, 2);
  s << 2.0, 0.3, 0.3, 1.0;
  const CoupledGaussian p(mu, s, 0.8);
  const double q = escort_power(p.coupling(), 2.0);
  // Exact value: p^q = Z_Q^(...) f_Q up to the constant read off the ratio at mu.
  const CoupledGaussian big_q = escort_transform(p);
  const double exact_log = q * cg_log_density(p, mu) - cg_log_density(big_q, mu);
  Rng rng(11);
  const McEstimate est = escort_log_normalizer_is([&](const VectorXd& x) { return cg_log_density(p, x); }, q, p, rng);
  CHECK(std::abs(est.mean - exact_log) <= 4.0 * est.std_error + 1e-12);
  CHECK(est.std_error < 0.01);
}

TEST_CASE("cg_sample: Gaussian law of large numbers") {
  Rng rng(2024);
  const std::size_t n = 1000000;
  const Eigen::MatrixXd xs = cg_sample(CoupledGaussian(VectorXd::Zero(1), MatrixXd::Identity(1, 1), 0.0), rng, n);
  const double mean = xs.col(0).mean();
  const double var = (xs.col(0).array() - mean).square().sum() / static_cast<double>(n - 1);
  CHECK(std::abs(mean) <= 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(var - 1.0) <= 0.01);
}

TEST_CASE("cg_sample: Cauchy passes a Kolmogorov-Smirnov test") {
  Rng rng(99);
  const std::size_t n = 100000;
  const Eigen::MatrixXd xs = cg_sample(CoupledGaussian(VectorXd::Zero(1), MatrixXd::Identity(1, 1), 1.0), rng, n);
  std::vector<double> v(xs.data(), xs.data() + n);
  std::sort(v.begin(), v.end());
  double d_stat = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double cdf = 0.5 + std::atan(v[i]) / kPi;
    d_stat = std::max({d_stat, std::abs(cdf - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - cdf)});
  }
  CHECK(d_stat < 1.6276 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("cg_sample: kappa = 1/3 has the Student-t variance 3") {
  Rng rng(7);
  const std::size_t n = 1000000;
  const Eigen::MatrixXd xs =
      cg_sample(CoupledGaussian(VectorXd::Zero(1), MatrixXd::Identity(1, 1), 1.0 / 3.0), rng, n);
  const double var = xs.col(0).squaredNorm() / static_cast<double>(n);
  CHECK(std::abs(var - 3.0) <= 0.05 * 3.0);
}

TEST_CASE("cg_sample is deterministic given the seed and follows dense scale") {
  MatrixXd s(2, 2);
  s << 1.0, 0.8, 0.8, 2.0;
  const CoupledGaussian g(VectorXd::Zero(2), s, 0.0);
  Rng a(5), b(5);
  const MatrixXd xa = cg_sample(g, a, 200000);
  const MatrixXd xb = cg_sample(g, b, 200000);
  CHECK(xa == xb);
  const MatrixXd cov = xa.transpose() * xa / 200000.0;
  CHECK(std::abs(cov(0, 1) - 0.8) < 0.02);
  CHECK(std::abs(cov(1, 1) - 2.0) < 0.04);
}

TEST_CASE("coupled_moment examples") {
  const CoupledGaussian cauchy(VectorXd::Zero(1), MatrixXd::Identity(1, 1), 1.0);
  CHECK(std::abs(coupled_moment(cauchy, 1, MomentMethod::kQuadrature).mean) <= 1e-8);
  // oracle: Int x^2 (2/pi)(1+x^2)^-2 dx = 1
  boost::math::quadrature::sinh_sinh<double> integrator;
  const double oracle = integrator.integrate([](double x) { return x * x * 2.0 / kPi / std::pow(1 + x * x, 2); });
  CHECK(oracle == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(std::abs(coupled_moment(cauchy, 2, MomentMethod::kQuadrature).mean - oracle) <= 1e-6);

  const CoupledGaussian gauss(VectorXd::Zero(1), MatrixXd::Identity(1, 1), 0.0);
  CHECK(coupled_moment(gauss, 2, MomentMethod::kQuadrature).mean == doctest::Approx(1.0).epsilon(1e-10));

  Rng rng(3);
  const McEstimate sampled = coupled_moment(cauchy, 2, MomentMethod::kEscortSampling, &rng, 1000000);
  CHECK(std::abs(sampled.mean - 1.0) <= 4.0 * sampled.std_error);

  CHECK_THROWS_AS(coupled_moment(CoupledGaussian(VectorXd::Zero(2), MatrixXd::Identity(2, 2), 1.0), 1,
                                 MomentMethod::kQuadrature),
                  ContractError);
}

TEST_CASE("GPD coupled moments agree between quadrature and escort sampling") {
  const GeneralizedPareto g(1.0, 1.0);
  const double quad = coupled_moment(g, 1, MomentMethod::kQuadrature).mean;
  Rng rng(8);
  const McEstimate mc = coupled_moment(g, 1, MomentMethod::kEscortSampling, &rng, 1000000);
  CHECK(std::abs(quad - mc.mean) <= 4.0 * mc.std_error);
  // Escort of order 1 is GPD(scale 1/2, kappa 1/2), mean s / (1 - k) = 1.
  CHECK(quad == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("coupled moment divergence is reported") {
  // p(x) ~ x^-1.5 on [1, inf): with kappa = 0 the escort is p itself and x p(x) ~ x^-0.5.
  auto heavy = [](double x) { return std::log(0.5) - 1.5 * std::log1p(x); };
  CHECK_THROWS_AS(coupled_moment_1d(heavy, Coupling{0.0, 1, 1}, 1, Support::kHalfLine), DivergenceError);
}

TEST_CASE("moment_exists examples") {
  CHECK_FALSE(moment_exists(Coupling{1.0, 2, 1}, 1));
  CHECK(moment_exists(Coupling{0.0, 2, 1}, 7));
  CHECK(moment_exists(Coupling{0.4, 2, 1}, 2));
  CHECK_FALSE(moment_exists(Coupling{0.5, 2, 1}, 2));
}

TEST_CASE("2-D normalization by nested quadrature") {
  MatrixXd s(2, 2);
  s << 1.5, 0.4, 0.4, 0.8;
  for (double k : {0.0, 1.0}) {
    const CoupledGaussian g(VectorXd::Zero(2), s, k);
    const QuadratureOptions opts{1e-10, 15};
    auto outer = [&](double x0) {
      auto inner = [&](double x1) {
        Eigen::Vector2d x(x0, x1);
        return std::exp(cg_log_density(g, x));
      };
      return integrate_real_line(inner, 0.0, 1.0, opts).value;
    };
    CHECK(integrate_real_line(outer, 0.0, 1.0, opts).value == doctest::Approx(1.0).epsilon(1e-6));
  }
}
