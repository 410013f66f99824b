#pragma once

#include <functional>

namespace coupled {

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;  // Kronrod error estimate
};

struct QuadratureOptions {
  double rel_tol = 1e-12;
  unsigned max_depth = 15;
};

using ScalarFunction = std::function<double(double)>;

// Adaptive 61-point Gauss-Kronrod on a finite interval.
QuadratureResult integrate_interval(const ScalarFunction& f, double a, double b,
                                    QuadratureOptions opts = {});

// Integral over [a, inf) after the substitution x = a + scale (t / (1 - t))^2.
// Algebraic tails p(x) ~ x^-b become (1 - t)^(2b - 3) on the unit interval:
// bounded for b >= 3/2 and integrable for every b > 1.
QuadratureResult integrate_half_line(const ScalarFunction& f, double a, double scale,
                                     QuadratureOptions opts = {});

// Integral over the real line, split at `center` into two half lines.
QuadratureResult integrate_real_line(const ScalarFunction& f, double center, double scale,
                                     QuadratureOptions opts = {});

}  // namespace coupled
