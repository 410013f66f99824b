#include "coupledgeom/coupled_algebra.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "coupledgeom/errors.hpp"

namespace coupled {

Coupling Coupling::make(double kappa, int alpha, int dim) {
  Coupling c{kappa, alpha, dim};
  if (!c.valid()) {
    std::ostringstream msg;
    msg << "invalid coupling (kappa=" << kappa << ", alpha=" << alpha << ", dim=" << dim << ")";
    throw DomainError(msg.str());
  }
  return c;
}

bool Coupling::valid() const noexcept {
  return std::isfinite(kappa) && (alpha == 1 || alpha == 2) && dim >= 1 &&
         kappa > -1.0 / static_cast<double>(dim);
}

double coupled_exp(double u, double kappa) noexcept {
  return coupled_exp_power(u, kappa, 1.0);
}

double coupled_log(double x, double kappa) {
  if (!(x > 0.0)) {
    std::ostringstream msg;
    msg << "coupled_log: x must be positive, got " << x;
    throw DomainError(msg.str());
  }
  return coupled_log_of_exp(std::log(x), kappa);
}

double coupled_log_of_exp(double log_x, double kappa) noexcept {
  if (kappa == 0.0) return log_x;
  return std::expm1(kappa * log_x) / kappa;
}

double coupled_sum(double a, double b, double kappa) noexcept { return a + b + kappa * a * b; }

double coupled_exp_power(double u, double kappa, double exponent) noexcept {
  if (kappa == 0.0) return std::exp(u * exponent);
  const double ku = kappa * u;
  if (!(ku > -1.0)) {
    // (0)^(exponent/kappa)
    const double p = exponent / kappa;
    if (p > 0.0) return 0.0;
    if (p < 0.0) return std::numeric_limits<double>::infinity();
    return 1.0;
  }
  return std::exp(exponent * std::log1p(ku) / kappa);
}

bool coupled_exp_in_domain(double u, double kappa) noexcept { return 1.0 + kappa * u > 0.0; }

double escort_power(const Coupling& c, double m) noexcept {
  return 1.0 + m * c.kappa / (1.0 + static_cast<double>(c.dim) * c.kappa);
}

}  // namespace coupled
