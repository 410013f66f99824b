#include "coupledgeom/quadrature.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace coupled {

namespace {

using Kronrod = boost::math::quadrature::gauss_kronrod<double, 61>;

}  // namespace

QuadratureResult integrate_interval(const ScalarFunction& f, double a, double b,
                                    QuadratureOptions opts) {
  QuadratureResult r;
  r.value = Kronrod::integrate(f, a, b, opts.max_depth, opts.rel_tol, &r.error);
  return r;
}

QuadratureResult integrate_half_line(const ScalarFunction& f, double a, double scale,
                                     QuadratureOptions opts) {
  auto g = [&](double t) {
    const double one_minus = 1.0 - t;
    const double r = t / one_minus;
    const double x = a + scale * r * r;
    const double jac = 2.0 * scale * r / (one_minus * one_minus);
    const double v = f(x);
    return v == 0.0 ? 0.0 : v * jac;
  };
  QuadratureResult r;
  r.value = Kronrod::integrate(g, 0.0, 1.0, opts.max_depth, opts.rel_tol, &r.error);
  return r;
}

QuadratureResult integrate_real_line(const ScalarFunction& f, double center, double scale,
                                     QuadratureOptions opts) {
  const QuadratureResult right = integrate_half_line(f, center, scale, opts);
  const QuadratureResult left =
      integrate_half_line([&](double y) { return f(2.0 * center - y); }, center, scale, opts);
  return {right.value + left.value, right.error + left.error};
}

}  // namespace coupled
