#include "coupledgeom/info_geometry.hpp"

#include <cmath>
#include <sstream>

#include "coupledgeom/errors.hpp"

namespace coupled {

namespace {

// ln Z and its theta-derivatives at the model's theta.
struct NormalizerDerivs {
  double log_z = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

double fd_step(double theta_i) { return 1e-5 * (1.0 + std::abs(theta_i)); }

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& theta) {
  Eigen::VectorXd g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double h = fd_step(theta[i]);
    Eigen::VectorXd up = theta, down = theta;
    up[i] += h;
    down[i] -= h;
    g[i] = (f(up) - f(down)) / (2.0 * h);
  }
  return g;
}

NormalizerDerivs normalizer_derivs(const ExpFamilyModel& m) {
  if (!m.log_normalizer) throw ContractError("ExpFamilyModel: log_normalizer is required");
  NormalizerDerivs out;
  out.log_z = m.log_normalizer(m.theta);
  if (!std::isfinite(out.log_z)) throw DomainError("ExpFamilyModel: normalizer is not finite at theta");
  out.grad = m.grad_log_normalizer ? m.grad_log_normalizer(m.theta) : fd_gradient(m.log_normalizer, m.theta);
  if (m.hess_log_normalizer) {
    out.hess = m.hess_log_normalizer(m.theta);
  } else {
    const int p = m.num_params();
    out.hess.resize(p, p);
    for (int i = 0; i < p; ++i) {
      const double h = fd_step(m.theta[i]);
      Eigen::VectorXd up = m.theta, down = m.theta;
      up[i] += h;
      down[i] -= h;
      Eigen::VectorXd gu, gd;
      if (m.grad_log_normalizer) {
        gu = m.grad_log_normalizer(up);
        gd = m.grad_log_normalizer(down);
      } else {
        gu = fd_gradient(m.log_normalizer, up);
        gd = fd_gradient(m.log_normalizer, down);
      }
      out.hess.col(i) = (gu - gd) / (2.0 * h);
    }
    out.hess = 0.5 * (out.hess + out.hess.transpose()).eval();
  }
  return out;
}

// Everything the pointwise derivatives need at one x.
struct PointTerms {
  Eigen::VectorXd t;     // T(x)
  double theta_t = 0.0;  // theta . T
  double r = 0.0;        // R(zeta)
  double r_minus_1_over_k = 0.0;
  Eigen::VectorXd dr;       // dR/dtheta_i
  Eigen::VectorXd dr_k;     // (1/k) dR/dtheta_i, finite at k = 0
  Eigen::MatrixXd d2r;      // d2R/dtheta_i dtheta_j
  Eigen::MatrixXd d2r_k;    // (1/k) d2R/dtheta_i dtheta_j
};

PointTerms point_terms(const ExpFamilyModel& m, const NormalizerDerivs& nd, const Eigen::VectorXd& x) {
  const Coupling& c = m.coupling;
  const double r = r_exponent(c);
  const double r_over_k = c.alpha / (1.0 + c.dim * c.kappa);
  const double log_h = m.log_base_measure ? m.log_base_measure(x) : 0.0;
  const double ell = nd.log_z - log_h;  // ln(Z/h)

  PointTerms pt;
  pt.t = m.suff_stat(x);
  if (pt.t.size() != m.theta.size()) throw ContractError("ExpFamilyModel: T(x) and theta sizes differ");
  pt.theta_t = m.theta.dot(pt.t);
  const double rl = r * ell;
  pt.r = std::exp(rl);
  pt.r_minus_1_over_k = rl == 0.0 ? r_over_k * ell : std::expm1(rl) / rl * r_over_k * ell;
  pt.dr = r * pt.r * nd.grad;
  pt.dr_k = r_over_k * pt.r * nd.grad;
  const Eigen::MatrixXd inner = r * nd.grad * nd.grad.transpose() + nd.hess;
  pt.d2r = r * pt.r * inner;
  pt.d2r_k = r_over_k * pt.r * inner;
  return pt;
}

double loglik_from(const PointTerms& pt, int alpha) { return (pt.theta_t * pt.r + pt.r_minus_1_over_k) / alpha; }

Eigen::VectorXd grad_from(const PointTerms& pt, int alpha) {
  return (pt.t * pt.r + pt.dr_k + pt.theta_t * pt.dr) / alpha;
}

Eigen::MatrixXd hessian_from(const PointTerms& pt, int alpha) {
  const Eigen::MatrixXd cross = pt.t * pt.dr.transpose();
  return (cross + cross.transpose() + pt.d2r_k + pt.theta_t * pt.d2r) / alpha;
}

// Lemma assembly, written out term by term:
//   A1 = T (dR_j + dR_i), A2 = (1/k + T.theta) d2R_ij,
//   B1 = T R,             B2 = (1/k + T.theta) dR_k.
// With a vector statistic, the T in A1 pairs with the other index (T_i dR_j +
// T_j dR_i) and the T in B1 carries index k.
double lemma_a(const PointTerms& pt, int i, int j) {
  const double a1 = pt.t[i] * pt.dr[j] + pt.t[j] * pt.dr[i];
  const double a2 = pt.d2r_k(i, j) + pt.theta_t * pt.d2r(i, j);
  return a1 + a2;
}

double lemma_b(const PointTerms& pt, int k) {
  const double b1 = pt.t[k] * pt.r;
  const double b2 = pt.dr_k[k] + pt.theta_t * pt.dr[k];
  return b1 + b2;
}

// All integrands stacked: g (p*p), gamma (p^3), printed-lemma g (p).
Eigen::VectorXd integrands(const ExpFamilyModel& m, const NormalizerDerivs& nd, const Eigen::VectorXd& x,
                           GeometryRoute route) {
  const int p = m.num_params();
  const int alpha = m.coupling.alpha;
  const PointTerms pt = point_terms(m, nd, x);
  Eigen::VectorXd out(p * p + p * p * p + p);
  if (route == GeometryRoute::kDerivative) {
    const Eigen::MatrixXd h = hessian_from(pt, alpha);
    const Eigen::VectorXd g = grad_from(pt, alpha);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) {
        out[i * p + j] = h(i, j);
        for (int k = 0; k < p; ++k) out[p * p + (i * p + j) * p + k] = h(i, j) * g[k];
      }
  } else {
    const double a2 = static_cast<double>(alpha) * alpha;
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) {
        const double a = lemma_a(pt, i, j);
        out[i * p + j] = a / alpha;
        for (int k = 0; k < p; ++k) out[p * p + (i * p + j) * p + k] = a * lemma_b(pt, k) / a2;
      }
  }
  for (int k = 0; k < p; ++k) out[p * p + p * p * p + k] = lemma_b(pt, k) / alpha;
  return out;
}

GeometryTensors unpack(int p, const Eigen::VectorXd& mean, const Eigen::VectorXd& se) {
  GeometryTensors out;
  out.g.resize(p, p);
  out.mc_stderr_g.resize(p, p);
  out.gamma = Tensor3(p);
  out.mc_stderr_gamma = Tensor3(p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) {
      out.g(i, j) = mean[i * p + j];
      out.mc_stderr_g(i, j) = se[i * p + j];
      for (int k = 0; k < p; ++k) {
        out.gamma(i, j, k) = mean[p * p + (i * p + j) * p + k];
        out.mc_stderr_gamma(i, j, k) = se[p * p + (i * p + j) * p + k];
      }
    }
  out.lemma_printed_g = mean.tail(p);
  // symmetric by construction; remove rounding asymmetry in the sums
  out.g = 0.5 * (out.g + out.g.transpose()).eval();
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j)
      for (int k = 0; k < p; ++k) {
        const double v = 0.5 * (out.gamma(i, j, k) + out.gamma(j, i, k));
        out.gamma(i, j, k) = out.gamma(j, i, k) = v;
      }
  return out;
}

QuadratureResult integrate_support(const ExpFamilyModel& m, const ScalarFunction& f, const QuadratureOptions& opts) {
  return m.support == Support::kHalfLine ? integrate_half_line(f, m.quad_center, m.quad_scale, opts)
                                         : integrate_real_line(f, m.quad_center, m.quad_scale, opts);
}

void require_converged(const QuadratureResult& r, const char* what) {
  if (!std::isfinite(r.value) || !std::isfinite(r.error) || r.error > 1e-6 * std::max(1.0, std::abs(r.value))) {
    std::ostringstream msg;
    msg << "geometry_quadrature: " << what << " integral did not converge (value " << r.value << ", error "
        << r.error << ")";
    throw DivergenceError(msg.str());
  }
}

}  // namespace

ExpFamilyModel ExpFamilyModel::with_theta(Eigen::VectorXd new_theta) const {
  ExpFamilyModel copy = *this;
  copy.theta = std::move(new_theta);
  return copy;
}

ExpFamilyModel gpd_model(double theta, double kappa) {
  if (!(theta > 0.0)) throw DomainError("gpd_model: theta must be positive");
  ExpFamilyModel m;
  m.theta = Eigen::VectorXd::Constant(1, theta);
  m.coupling = Coupling::make(kappa, 1, 1);
  if (kappa < 0.0) throw DomainError("gpd_model: kappa must be non-negative");
  m.data_dim = 1;
  m.suff_stat = [](const Eigen::VectorXd& x) { return x; };
  m.log_base_measure = [](const Eigen::VectorXd&) { return 0.0; };
  m.log_normalizer = [](const Eigen::VectorXd& t) { return t[0] > 0.0 ? -std::log(t[0]) : NAN; };
  m.grad_log_normalizer = [](const Eigen::VectorXd& t) { return Eigen::VectorXd::Constant(1, -1.0 / t[0]); };
  m.hess_log_normalizer = [](const Eigen::VectorXd& t) {
    return Eigen::MatrixXd::Constant(1, 1, 1.0 / (t[0] * t[0]));
  };
  m.sampler = [theta, kappa](Rng& rng, std::size_t n) {
    const std::vector<double> xs = gpd_sample(GeneralizedPareto(1.0 / theta, kappa), rng, n);
    return Eigen::MatrixXd(Eigen::Map<const Eigen::MatrixXd>(xs.data(), static_cast<Eigen::Index>(n), 1));
  };
  m.support = Support::kHalfLine;
  m.quad_center = 0.0;
  m.quad_scale = 1.0 / theta;
  return m;
}

ExpFamilyModel bivariate_exponential_model(double theta1, double theta2, double kappa) {
  if (!(theta1 > 0.0) || !(theta2 > 0.0)) throw DomainError("bivariate_exponential_model: theta must be positive");
  if (kappa < 0.0) throw DomainError("bivariate_exponential_model: kappa must be non-negative");
  ExpFamilyModel m;
  m.theta = Eigen::Vector2d(theta1, theta2);
  m.coupling = Coupling::make(kappa, 1, 2);
  m.data_dim = 2;
  m.suff_stat = [](const Eigen::VectorXd& x) { return x; };
  m.log_base_measure = [](const Eigen::VectorXd&) { return 0.0; };
  m.log_normalizer = [kappa](const Eigen::VectorXd& t) {
    return (t[0] > 0.0 && t[1] > 0.0) ? -std::log1p(kappa) - std::log(t[0]) - std::log(t[1]) : NAN;
  };
  m.grad_log_normalizer = [](const Eigen::VectorXd& t) { return Eigen::Vector2d(-1.0 / t[0], -1.0 / t[1]).eval(); };
  m.hess_log_normalizer = [](const Eigen::VectorXd& t) {
    return Eigen::Vector2d(1.0 / (t[0] * t[0]), 1.0 / (t[1] * t[1])).asDiagonal().toDenseMatrix();
  };
  // X_i = Y_i / (theta_i W), Y_i ~ Exp(1), W ~ Gamma(1/k, rate 1/k); W = 1 at k = 0.
  m.sampler = [theta1, theta2, kappa](Rng& rng, std::size_t n) {
    std::exponential_distribution<double> expo(1.0);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(n), 2);
    if (kappa == 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        out(i, 0) = expo(rng) / theta1;
        out(i, 1) = expo(rng) / theta2;
      }
      return out;
    }
    std::gamma_distribution<double> gamma(1.0 / kappa, kappa);
    for (std::size_t i = 0; i < n; ++i) {
      const double w = gamma(rng);
      out(i, 0) = expo(rng) / (theta1 * w);
      out(i, 1) = expo(rng) / (theta2 * w);
    }
    return out;
  };
  return m;
}

double r_exponent(const Coupling& c) noexcept { return c.alpha * c.kappa / (1.0 + c.dim * c.kappa); }

double r_of_zeta(const ExpFamilyModel& model, const Eigen::VectorXd& x) {
  const double r = r_exponent(model.coupling);
  if (r == 0.0) return 1.0;
  const double log_h = model.log_base_measure ? model.log_base_measure(x) : 0.0;
  return std::exp(r * (model.log_normalizer(model.theta) - log_h));
}

double model_log_density(const ExpFamilyModel& model, const Eigen::VectorXd& x) {
  const Coupling& c = model.coupling;
  const double u = model.theta.dot(model.suff_stat(x));
  const double e = -(1.0 + c.dim * c.kappa) / c.alpha;
  const double log_h = model.log_base_measure ? model.log_base_measure(x) : 0.0;
  double log_core;
  if (c.kappa == 0.0) {
    log_core = e * u;
  } else {
    const double base = c.kappa * u;
    if (base <= -1.0) return -std::numeric_limits<double>::infinity();
    log_core = e * std::log1p(base) / c.kappa;
  }
  return log_core + log_h - model.log_normalizer(model.theta);
}

double coupled_loglik(const ExpFamilyModel& model, const Eigen::VectorXd& x) {
  return loglik_from(point_terms(model, normalizer_derivs(model), x), model.coupling.alpha);
}

Eigen::VectorXd loglik_grad(const ExpFamilyModel& model, const Eigen::VectorXd& x) {
  return grad_from(point_terms(model, normalizer_derivs(model), x), model.coupling.alpha);
}

Eigen::MatrixXd loglik_hessian(const ExpFamilyModel& model, const Eigen::VectorXd& x) {
  return hessian_from(point_terms(model, normalizer_derivs(model), x), model.coupling.alpha);
}

double expectation_power(const Coupling& c, ExpectationMeasure measure) noexcept {
  return measure == ExpectationMeasure::kEscort ? escort_power(c, 2.0) : 1.0;
}

GeometryTensors geometry_quadrature(const ExpFamilyModel& model, const GeometryOptions& options) {
  if (model.data_dim != 1) throw ContractError("geometry_quadrature: only one-dimensional data");
  const int p = model.num_params();
  const NormalizerDerivs nd = normalizer_derivs(model);
  const double q = expectation_power(model.coupling, options.measure);
  auto weight = [&](double x) {
    const double lp = model_log_density(model, Eigen::VectorXd::Constant(1, x));
    return std::isfinite(lp) ? std::exp(q * lp) : 0.0;
  };
  const QuadratureResult norm = integrate_support(model, weight, options.quadrature);
  require_converged(norm, "normalizing");

  const int count = p * p + p * p * p + p;
  Eigen::VectorXd mean(count);
  for (int idx = 0; idx < count; ++idx) {
    // Gamma is symmetric in (i, j); skip the lower half.
    if (idx >= p * p && idx < p * p + p * p * p) {
      const int flat = idx - p * p;
      const int i = flat / (p * p);
      const int j = (flat / p) % p;
      if (i > j) {
        mean[idx] = 0.0;
        continue;
      }
    } else if (idx < p * p && idx / p > idx % p) {
      mean[idx] = 0.0;
      continue;
    }
    auto f = [&](double x) {
      const double w = weight(x);
      if (w == 0.0) return 0.0;
      return w * integrands(model, nd, Eigen::VectorXd::Constant(1, x), options.route)[idx];
    };
    const QuadratureResult r = integrate_support(model, f, options.quadrature);
    require_converged(r, "moment");
    mean[idx] = r.value / norm.value;
  }
  // mirror the skipped halves
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < i; ++j) {
      mean[i * p + j] = mean[j * p + i];
      for (int k = 0; k < p; ++k) mean[p * p + (i * p + j) * p + k] = mean[p * p + (j * p + i) * p + k];
    }
  return unpack(p, mean, Eigen::VectorXd::Zero(count));
}

GeometryTensors geometry_mc(const ExpFamilyModel& model, Rng& rng, std::size_t n, const GeometryOptions& options) {
  if (!model.sampler) throw ContractError("geometry_mc: model has no sampler");
  if (n < 2) throw ContractError("geometry_mc: n must be >= 2");
  const int p = model.num_params();
  const NormalizerDerivs nd = normalizer_derivs(model);
  const double q = expectation_power(model.coupling, options.measure);
  const Eigen::MatrixXd xs = model.sampler(rng, n);

  // weights p^(q-1), scaled by the largest log-weight for stability
  std::vector<double> log_w(n);
  double max_log_w = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < n; ++s) {
    log_w[s] = (q - 1.0) * model_log_density(model, xs.row(static_cast<Eigen::Index>(s)).transpose());
    max_log_w = std::max(max_log_w, log_w[s]);
  }
  const int count = p * p + p * p * p + p;
  std::vector<Eigen::VectorXd> values(n);
  std::vector<double> w(n);
  double w_sum = 0.0;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(count);
  for (std::size_t s = 0; s < n; ++s) {
    w[s] = q == 1.0 ? 1.0 : std::exp(log_w[s] - max_log_w);
    values[s] = integrands(model, nd, xs.row(static_cast<Eigen::Index>(s)).transpose(), options.route);
    acc += w[s] * values[s];
    w_sum += w[s];
  }
  const Eigen::VectorXd mean = acc / w_sum;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(count);
  for (std::size_t s = 0; s < n; ++s) var += (w[s] * (values[s] - mean)).cwiseAbs2();
  // self-normalized estimator, delta-method variance; n/(n-1) bias correction
  const double nn = static_cast<double>(n);
  const Eigen::VectorXd se = (var * (nn / (nn - 1.0))).cwiseSqrt() / w_sum;
  return unpack(p, mean, se);
}

Eigen::MatrixXd fisher_metric(const ExpFamilyModel& model, const GeometryOptions& options) {
  return geometry_quadrature(model, options).g;
}

Tensor3 affine_connection(const ExpFamilyModel& model, const GeometryOptions& options) {
  return geometry_quadrature(model, options).gamma;
}

Eigen::VectorXd natural_gradient(const Eigen::MatrixXd& g, const Eigen::VectorXd& grad, double damping) {
  if (g.rows() != g.cols() || g.rows() != grad.size()) throw ContractError("natural_gradient: shape mismatch");
  const Eigen::MatrixXd damped = g + damping * Eigen::MatrixXd::Identity(g.rows(), g.cols());
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw DomainError("natural_gradient: metric is not positive definite");
  }
  return ldlt.solve(grad);
}

}  // namespace coupled
