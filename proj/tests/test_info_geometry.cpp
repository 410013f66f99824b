#include <boost/math/quadrature/exp_sinh.hpp>
#include <cmath>
#include <random>

#include "coupledgeom/errors.hpp"
#include "coupledgeom/info_geometry.hpp"
#include "doctest.h"

using namespace coupled;

namespace {

Eigen::VectorXd v1(double x) { return Eigen::VectorXd::Constant(1, x); }

// GPD surprisal written out by hand: l = theta x R + (R - 1)/k, R = theta^-r.
struct GpdOracle {
  double theta, k;
  double r() const { return k / (1 + k); }
  double rk() const { return 1 / (1 + k); }
  double R() const { return std::pow(theta, -r()); }
  double dR() const { return -r() * std::pow(theta, -r() - 1); }
  double d2R() const { return r() * (r() + 1) * std::pow(theta, -r() - 2); }
  double l(double x) const { return theta * x * R() + (k == 0 ? -std::log(theta) : std::expm1(-r() * std::log(theta)) / k); }
  double dl(double x) const { return x * R() + theta * x * dR() - rk() * std::pow(theta, -r() - 1); }
  double d2l(double x) const {
    return 2 * x * dR() + theta * x * d2R() + rk() * (r() + 1) * std::pow(theta, -r() - 2);
  }
  double density(double x) const {
    return k == 0 ? theta * std::exp(-theta * x) : theta * std::pow(1 + k * theta * x, -(1 + k) / k);
  }
  // E_w[f] under w ~ density^q
  template <class F>
  double expect(F f, double q) const {
    boost::math::quadrature::exp_sinh<double> es;
    const double norm = es.integrate([&](double x) { return std::pow(density(x), q); });
    return es.integrate([&](double x) { return std::pow(density(x), q) * f(x); }) / norm;
  }
};

double escort_q(double k) { return 1 + 2 * k / (1 + k); }

ExpFamilyModel constant_model(double log_h, double log_z, int alpha, double k) {
  ExpFamilyModel m = gpd_model(1.0, k);
  m.coupling = Coupling{k, alpha, 1};
  m.log_base_measure = [log_h](const Eigen::VectorXd&) { return log_h; };
  m.log_normalizer = [log_z](const Eigen::VectorXd&) { return log_z; };
  return m;
}

}  // namespace

TEST_CASE("r_of_zeta examples") {
  CHECK(r_of_zeta(constant_model(std::log(3.0), std::log(7.0), 2, 0.0), v1(1.0)) == 1.0);
  CHECK(r_of_zeta(constant_model(0.0, std::log(2.0), 1, 1.0), v1(1.0)) ==
        doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
  CHECK(r_of_zeta(constant_model(std::log(4.0), std::log(2.0), 2, 1.0), v1(1.0)) ==
        doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("coupled_loglik examples and representations") {
  CHECK(coupled_loglik(gpd_model(1.0, 1.0), v1(1.0)) == doctest::Approx(1.0).epsilon(1e-14));
  for (double x : {0.0, 0.3, 2.0, 9.0}) {
    const double at0 = coupled_loglik(gpd_model(1.7, 0.0), v1(x));
    CHECK(at0 == doctest::Approx(1.7 * x - std::log(1.7)).epsilon(1e-14));
    CHECK(std::abs(coupled_loglik(gpd_model(1.7, 1e-8), v1(x)) - at0) <= 1e-5);
  }

  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(0.05, 4.0);
  double worst_density = 0.0;
  double worst_loglik = 0.0;
  for (int t = 0; t < 100; ++t) {
    const double k = std::array{0.0, 0.1, 0.5, 1.0, 3.0}[t % 5];
    const bool bivariate = t % 2 == 1;
    const ExpFamilyModel m = bivariate ? bivariate_exponential_model(u(gen), u(gen), k) : gpd_model(u(gen), k);
    Eigen::VectorXd x(m.data_dim);
    for (int i = 0; i < m.data_dim; ++i) x[i] = u(gen);
    const Coupling& c = m.coupling;
    const double z = std::exp(m.log_normalizer(m.theta));
    const double direct = coupled_exp_power(m.theta.dot(x), k, -(1 + c.dim * k) / c.alpha) / z;
    const double dens = std::exp(model_log_density(m, x));
    worst_density = std::max(worst_density, std::abs(dens / direct - 1));
    // (1/alpha) ln_k(p^(-alpha/(1+dk)))
    const double via_log = coupled_log(std::pow(dens, -c.alpha / (1 + c.dim * k)), k) / c.alpha;
    worst_loglik = std::max(worst_loglik, std::abs(coupled_loglik(m, x) - via_log) / (1 + std::abs(via_log)));
  }
  CHECK(worst_density <= 1e-10);
  CHECK(worst_loglik <= 1e-10);
}

TEST_CASE("gradient and hessian against finite differences and the hand oracle") {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> th(0.3, 3.0);
  std::uniform_real_distribution<double> xs(0.0, 5.0);
  double worst_grad = 0.0;
  double worst_hess = 0.0;
  double worst_oracle = 0.0;
  for (int t = 0; t < 100; ++t) {
    const double k = std::array{1e-8, 0.1, 0.5, 1.0}[t % 4];
    const double theta = th(gen);
    const double x = xs(gen);
    const ExpFamilyModel m = gpd_model(theta, k);
    const double h = 1e-4 * theta;
    const double fd_grad =
        (coupled_loglik(gpd_model(theta + h, k), v1(x)) - coupled_loglik(gpd_model(theta - h, k), v1(x))) / (2 * h);
    const double fd_hess =
        (loglik_grad(gpd_model(theta + h, k), v1(x))[0] - loglik_grad(gpd_model(theta - h, k), v1(x))[0]) / (2 * h);
    const double g = loglik_grad(m, v1(x))[0];
    const double hs = loglik_hessian(m, v1(x))(0, 0);
    worst_grad = std::max(worst_grad, std::abs(g - fd_grad) / std::max(1.0, std::abs(g)));
    worst_hess = std::max(worst_hess, std::abs(hs - fd_hess) / std::max(1.0, std::abs(hs)));
    const GpdOracle o{theta, k};
    worst_oracle = std::max({worst_oracle, std::abs(g - o.dl(x)) / std::max(1.0, std::abs(g)),
                             std::abs(hs - o.d2l(x)) / std::max(1.0, std::abs(hs)),
                             std::abs(coupled_loglik(m, v1(x)) - o.l(x)) / std::max(1.0, std::abs(o.l(x)))});
  }
  CHECK(worst_grad <= 1e-6);
  CHECK(worst_hess <= 1e-6);
  CHECK(worst_oracle <= 1e-10);

  // exponential limit: the surprisal's score is x - 1/theta
  CHECK(loglik_grad(gpd_model(2.0, 0.0), v1(0.7))[0] == doctest::Approx(0.7 - 0.5).epsilon(1e-14));
  CHECK(loglik_grad(gpd_model(2.0, 1e-9), v1(0.7))[0] == doctest::Approx(0.2).epsilon(1e-6));

  const ExpFamilyModel bi = bivariate_exponential_model(0.8, 1.9, 0.6);
  const Eigen::MatrixXd hb = loglik_hessian(bi, Eigen::Vector2d(0.4, 1.3));
  CHECK(hb(0, 1) == hb(1, 0));
  // bivariate FD
  for (int i = 0; i < 2; ++i) {
    Eigen::Vector2d up = bi.theta, down = bi.theta;
    up[i] += 1e-5;
    down[i] -= 1e-5;
    const Eigen::Vector2d x(0.4, 1.3);
    const Eigen::VectorXd col = (loglik_grad(bi.with_theta(up), x) - loglik_grad(bi.with_theta(down), x)) / 2e-5;
    CHECK((col - hb.col(i)).norm() <= 1e-6 * std::max(1.0, hb.norm()));
  }
}

TEST_CASE("finite-difference normalizer derivatives") {
  ExpFamilyModel analytic = gpd_model(1.4, 0.3);
  ExpFamilyModel numeric = analytic;
  numeric.grad_log_normalizer = nullptr;
  numeric.hess_log_normalizer = nullptr;
  CHECK(loglik_grad(numeric, v1(0.9))[0] == doctest::Approx(loglik_grad(analytic, v1(0.9))[0]).epsilon(1e-8));
  CHECK(loglik_hessian(numeric, v1(0.9))(0, 0) ==
        doctest::Approx(loglik_hessian(analytic, v1(0.9))(0, 0)).epsilon(1e-5));
}

TEST_CASE("density normalization") {
  for (double k : {0.0, 0.1, 0.5, 1.0}) {
    for (double theta : {0.5, 1.0, 2.0}) {
      const ExpFamilyModel m = gpd_model(theta, k);
      const auto r =
          integrate_half_line([&](double x) { return std::exp(model_log_density(m, v1(x))); }, 0.0, 1.0 / theta);
      CHECK(r.value == doctest::Approx(1.0).epsilon(1e-6));
    }
    const ExpFamilyModel bi = bivariate_exponential_model(0.7, 1.6, k);
    const auto outer = integrate_half_line(
        [&](double x1) {
          return integrate_half_line(
                     [&](double x2) { return std::exp(model_log_density(bi, Eigen::Vector2d(x1, x2))); }, 0.0, 1.0,
                     QuadratureOptions{1e-10, 12})
              .value;
        },
        0.0, 1.0, QuadratureOptions{1e-10, 12});
    CHECK(outer.value == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("bivariate sampler") {
  Rng rng(12);
  const ExpFamilyModel bi = bivariate_exponential_model(0.5, 2.0, 0.2);
  const Eigen::MatrixXd xs = bi.sampler(rng, 400000);
  // E[X_i] = 1 / (theta_i (1 - k))
  CHECK(xs.col(0).mean() == doctest::Approx(1 / (0.5 * 0.8)).epsilon(0.01));
  CHECK(xs.col(1).mean() == doctest::Approx(1 / (2.0 * 0.8)).epsilon(0.01));
  // P(X1 > a, X2 > b) = (1 + k(theta . x))^(-1/k)
  const double a = 1.0, b = 0.3;
  const double frac = ((xs.col(0).array() > a) && (xs.col(1).array() > b)).cast<double>().mean();
  CHECK(frac == doctest::Approx(std::pow(1 + 0.2 * (0.5 * a + 2.0 * b), -5.0)).epsilon(0.01));
}

TEST_CASE("fisher metric") {
  const auto small = geometry_quadrature(gpd_model(2.0, 1e-8));
  CHECK(small.g(0, 0) == doctest::Approx(0.25).epsilon(0.01));
  CHECK(small.g(0, 0) == doctest::Approx(0.25).epsilon(1e-6));

  for (double k : {1e-8, 0.1, 0.5, 1.0}) {
    for (double theta : {0.5, 1.0, 2.0}) {
      const ExpFamilyModel m = gpd_model(theta, k);
      const auto deriv = geometry_quadrature(m, {ExpectationMeasure::kEscort, GeometryRoute::kDerivative});
      const auto lemma = geometry_quadrature(m, {ExpectationMeasure::kEscort, GeometryRoute::kLemma});
      CHECK(std::abs(deriv.g(0, 0) - lemma.g(0, 0)) <= 1e-6);
      CHECK(std::abs(deriv.gamma(0, 0, 0) - lemma.gamma(0, 0, 0)) <= 1e-6);
      CHECK(deriv.g(0, 0) > 0.0);
      const GpdOracle o{theta, k};
      CHECK(deriv.g(0, 0) == doctest::Approx(o.expect([&](double x) { return o.d2l(x); }, escort_q(k))).epsilon(1e-8));
      CHECK(deriv.gamma(0, 0, 0) ==
            doctest::Approx(o.expect([&](double x) { return o.d2l(x) * o.dl(x); }, escort_q(k))).epsilon(1e-7));
    }
  }
  // exponential scaling g(c theta) = g(theta) / c^2
  const double g1 = fisher_metric(gpd_model(1.3, 0.0))(0, 0);
  const double g3 = fisher_metric(gpd_model(3.9, 0.0))(0, 0);
  CHECK(g3 == doctest::Approx(g1 / 9.0).epsilon(1e-10));
}

TEST_CASE("affine connection") {
  CHECK(std::abs(affine_connection(gpd_model(1.0, 0.0))(0, 0, 0)) <= 1e-10);

  Rng rng(31);
  const ExpFamilyModel m = gpd_model(1.0, 0.5);
  const auto quad = geometry_quadrature(m);
  const auto mc = geometry_mc(m, rng, 1000000);
  CHECK(std::abs(mc.gamma(0, 0, 0) - quad.gamma(0, 0, 0)) <= 3 * mc.mc_stderr_gamma(0, 0, 0));
  CHECK(std::abs(mc.g(0, 0) - quad.g(0, 0)) <= 3 * mc.mc_stderr_g(0, 0));
  CHECK(quad.mc_stderr_g(0, 0) == 0.0);
}

TEST_CASE("bivariate geometry by sampling") {
  for (double k : {1e-8, 0.1, 0.5, 1.0}) {
    const ExpFamilyModel bi = bivariate_exponential_model(0.8, 1.5, k);
    Rng rng_a(50), rng_b(50);
    const auto deriv = geometry_mc(bi, rng_a, 200000, {ExpectationMeasure::kEscort, GeometryRoute::kDerivative});
    const auto lemma = geometry_mc(bi, rng_b, 200000, {ExpectationMeasure::kEscort, GeometryRoute::kLemma});
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        CHECK(deriv.g(i, j) == deriv.g(j, i));
        CHECK(std::abs(deriv.g(i, j) - lemma.g(i, j)) <= 3 * deriv.mc_stderr_g(i, j) + 1e-12);
        for (int l = 0; l < 2; ++l) {
          CHECK(deriv.gamma(i, j, l) == deriv.gamma(j, i, l));
          CHECK(std::abs(deriv.gamma(i, j, l) - lemma.gamma(i, j, l)) <= 3 * deriv.mc_stderr_gamma(i, j, l) + 1e-12);
        }
      }
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(deriv.g).eigenvalues().minCoeff() > 0.0);
  }
  // k -> 0: independent exponentials, g = diag(1/theta^2)
  Rng rng(2);
  const auto g0 = geometry_mc(bivariate_exponential_model(0.8, 1.5, 0.0), rng, 1000).g;
  CHECK(g0(0, 0) == doctest::Approx(1 / 0.64).epsilon(1e-12));
  CHECK(g0(1, 1) == doctest::Approx(1 / 2.25).epsilon(1e-12));
  CHECK(std::abs(g0(0, 1)) <= 1e-12);
  CHECK_THROWS_AS(geometry_quadrature(bivariate_exponential_model(1, 1, 0.1)), ContractError);
}

TEST_CASE("density measure") {
  const ExpFamilyModel m = gpd_model(1.5, 0.1);
  const GeometryOptions density{ExpectationMeasure::kDensity, GeometryRoute::kDerivative};
  const auto quad = geometry_quadrature(m, density);
  const GpdOracle o{1.5, 0.1};
  CHECK(quad.g(0, 0) == doctest::Approx(o.expect([&](double x) { return o.d2l(x); }, 1.0)).epsilon(1e-8));
  Rng rng(77);
  const auto mc = geometry_mc(m, rng, 400000, density);
  CHECK(std::abs(mc.g(0, 0) - quad.g(0, 0)) <= 3 * mc.mc_stderr_g(0, 0));
  CHECK(std::abs(mc.gamma(0, 0, 0) - quad.gamma(0, 0, 0)) <= 3 * mc.mc_stderr_gamma(0, 0, 0));
  // E[T] is infinite under the density at k = 1
  CHECK_THROWS_AS(geometry_quadrature(gpd_model(1.0, 1.0), density), DivergenceError);
  // printed Lemma g is the expected score; zero for the exponential model
  CHECK(std::abs(geometry_quadrature(gpd_model(1.5, 0.0), density).lemma_printed_g[0]) <= 1e-10);
}

TEST_CASE("natural gradient") {
  Eigen::Matrix2d g;
  g << 2, 0.5, 0.5, 1;
  const Eigen::Vector2d grad(1, -1);
  const Eigen::VectorXd step = natural_gradient(g, grad);
  CHECK((g * step - grad).norm() <= 1e-12);
  const Eigen::VectorXd damped = natural_gradient(g, grad, 0.3);
  CHECK(((g + 0.3 * Eigen::Matrix2d::Identity()) * damped - grad).norm() <= 1e-12);
  CHECK_THROWS_AS(natural_gradient(-g, grad), DomainError);
  CHECK_THROWS_AS(natural_gradient(g, Eigen::Vector3d::Ones()), ContractError);
}
