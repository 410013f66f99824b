#pragma once

// Deformed ("coupled") algebra used by every other module.
//
//   exp_k(u) = (1 + k u)_+^(1/k)        ln_k(x) = (x^k - 1) / k
//   a (+)_k b = a + b + k a b           exp_k(a) exp_k(b) = exp_k(a (+)_k b)
//
// k == 0 switches to the analytic exp/log branch. Every other k is evaluated
// in log space (log1p / expm1) so that tiny couplings do not cancel.

namespace coupled {

struct Coupling {
  double kappa = 0.0;
  int alpha = 2;
  int dim = 1;

  // Throws DomainError unless alpha in {1,2}, dim >= 1, kappa > -1/dim.
  static Coupling make(double kappa, int alpha, int dim);

  bool valid() const noexcept;
};

double coupled_exp(double u, double kappa) noexcept;

// Throws DomainError for x <= 0.
double coupled_log(double x, double kappa);

// ln_k(exp(u)) = expm1(k u) / k. Lets callers that hold log-densities avoid
// exponentiating first.
double coupled_log_of_exp(double log_x, double kappa) noexcept;

double coupled_sum(double a, double b, double kappa) noexcept;

// ((1 + k u)_+)^(exponent / k); exp(u * exponent) at k == 0.
double coupled_exp_power(double u, double kappa, double exponent) noexcept;

// True when 1 + k u > 0, i.e. coupled_exp is not clamped at u.
bool coupled_exp_in_domain(double u, double kappa) noexcept;

// q = 1 + m k / (1 + d k): the power that turns a density into its escort.
double escort_power(const Coupling& c, double m) noexcept;

}  // namespace coupled
