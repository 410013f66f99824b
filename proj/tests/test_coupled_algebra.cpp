#include <cmath>
#include <numbers>
#include <random>

#include "coupledgeom/coupled_algebra.hpp"
#include "coupledgeom/errors.hpp"
#include "doctest.h"

using namespace coupled;

TEST_CASE("coupled_exp examples") {
  CHECK(coupled_exp(0.0, 0.7) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(coupled_exp(1.0, 1.0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(coupled_exp(-3.0, 0.5) == 0.0);
  CHECK(coupled_exp(1.0, 0.0) == doctest::Approx(std::numbers::e).epsilon(1e-15));
}

TEST_CASE("coupled_log examples and domain") {
  CHECK(coupled_log(1.0, 3.2) == 0.0);
  CHECK(coupled_log(2.0, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(coupled_log(std::numbers::e, 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(coupled_log(0.0, 0.5), DomainError);
  CHECK_THROWS_AS(coupled_log(-1.0, 0.0), DomainError);
}

TEST_CASE("coupled_sum examples and homomorphism") {
  CHECK(coupled_sum(1, 2, 0) == 3.0);
  CHECK(coupled_sum(1, 2, 0.5) == 4.0);
  CHECK(coupled_sum(1, 2, 1) == 5.0);
  CHECK(coupled_exp(5.0, 1.0) == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(coupled_exp(1.0, 1.0) * coupled_exp(2.0, 1.0) == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(coupled_sum(0.3, -1.7, 0.4) == coupled_sum(-1.7, 0.3, 0.4));
}

TEST_CASE("coupled_exp_power examples") {
  CHECK(coupled_exp_power(1.0, 1.0, -1.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(coupled_exp_power(0.0, 0.3, 7.0) == 1.0);
  CHECK(coupled_exp_power(0.0, 0.0, -2.0) == 1.0);
  CHECK(coupled_exp_power(3.0, 0.0, 2.0) == doctest::Approx(std::exp(6.0)).epsilon(1e-14));
  // clamped base raised to a negative power
  CHECK(std::isinf(coupled_exp_power(-3.0, 0.5, -1.0)));
}

TEST_CASE("escort_power examples") {
  CHECK(escort_power(Coupling{0.0, 2, 3}, 5.0) == 1.0);
  CHECK(escort_power(Coupling{1.0, 2, 1}, 2.0) == doctest::Approx(2.0));
  CHECK(escort_power(Coupling{1.0, 1, 1}, 1.0) == doctest::Approx(1.5));
}

TEST_CASE("Coupling validation") {
  CHECK_NOTHROW(Coupling::make(-0.4, 2, 2));
  CHECK_THROWS_AS(Coupling::make(-0.5, 2, 2), DomainError);
  CHECK_THROWS_AS(Coupling::make(0.1, 3, 1), DomainError);
  CHECK_THROWS_AS(Coupling::make(0.1, 1, 0), DomainError);
  CHECK_THROWS_AS(Coupling::make(std::nan(""), 1, 1), DomainError);
}

TEST_CASE("round trip, homomorphism, continuity over random sweeps") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> kappa_dist(-0.5, 10.0);
  // Uniform over (0, 1e6]. Near x^k -> 0 (k > 0, x << 1) the round trip is
  // ill-conditioned in double: u = ln_k(x) sits next to -1/k.
  std::uniform_real_distribution<double> x_dist(0.0, 1e6);
  std::uniform_real_distribution<double> u_dist(-10.0, 10.0);
  double worst_round_trip = 0.0;
  double worst_homomorphism = 0.0;
  double worst_continuity = 0.0;
  for (int i = 0; i < 3000; ++i) {
    const double k = kappa_dist(rng);
    const double x = x_dist(rng);
    if (x == 0.0) continue;
    worst_round_trip = std::max(worst_round_trip, std::abs(coupled_exp(coupled_log(x, k), k) / x - 1.0));

    const double a = u_dist(rng) * 0.2;
    const double b = u_dist(rng) * 0.2;
    if (coupled_exp_in_domain(a, k) && coupled_exp_in_domain(b, k)) {
      const double lhs = coupled_exp(a, k) * coupled_exp(b, k);
      const double rhs = coupled_exp(coupled_sum(a, b, k), k);
      worst_homomorphism = std::max(worst_homomorphism, std::abs(lhs / rhs - 1.0));
    }

    const double u = u_dist(rng);
    worst_continuity = std::max(worst_continuity, std::abs(coupled_exp(u, 1e-9) - std::exp(u)) / std::exp(u));
  }
  CHECK(worst_round_trip <= 1e-12);
  CHECK(worst_homomorphism <= 1e-12);
  CHECK(worst_continuity <= 1e-6);
}

TEST_CASE("monotonicity") {
  for (double k : {0.0, 0.2, 1.0, 5.0}) {
    double prev = -1.0;
    for (double u = -5.0; u <= 5.0; u += 0.01) {
      const double v = coupled_exp(u, k);
      CHECK(v >= prev);
      prev = v;
    }
  }
  for (double k : {-0.5, 0.0, 0.3, 4.0}) {
    double prev = -std::numeric_limits<double>::infinity();
    for (double x = 0.01; x <= 50.0; x *= 1.1) {
      const double v = coupled_log(x, k);
      CHECK(v > prev);
      prev = v;
    }
  }
}
