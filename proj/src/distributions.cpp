#include "coupledgeom/distributions.hpp"

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "coupledgeom/errors.hpp"

namespace coupled {

namespace {

void require_nonnegative_kappa(double kappa, const char* who) {
  if (!std::isfinite(kappa) || kappa < 0.0) {
    std::ostringstream msg;
    msg << who << ": kappa must be finite and >= 0, got " << kappa;
    throw DomainError(msg.str());
  }
}

// Cholesky factor of a symmetric positive-definite matrix or DomainError.
Eigen::MatrixXd spd_cholesky(const Eigen::MatrixXd& s) {
  if (s.rows() != s.cols() || s.rows() == 0) throw DomainError("scale matrix must be square and non-empty");
  if (!s.allFinite()) throw DomainError("scale matrix has non-finite entries");
  const double mag = std::max(1.0, s.cwiseAbs().maxCoeff());
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-10 * mag) {
    throw DomainError("scale matrix is not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) throw DomainError("scale matrix is not positive definite");
  Eigen::MatrixXd l = llt.matrixL();
  if ((l.diagonal().array() <= 0.0).any()) throw DomainError("scale matrix is not positive definite");
  return l;
}

}  // namespace

// ---------------------------------------------------------------------------
// CoupledGaussian

CoupledGaussian::CoupledGaussian(Eigen::VectorXd mu, Eigen::MatrixXd scale, double kappa)
    : mu_(std::move(mu)), scale_(std::move(scale)), kappa_(kappa) {
  if (scale_.rows() != mu_.size()) throw ContractError("CoupledGaussian: mu/scale size mismatch");
  finish_construction();
}

CoupledGaussian CoupledGaussian::diagonal(Eigen::VectorXd mu, Eigen::VectorXd scale_diagonal,
                                          double kappa) {
  if (scale_diagonal.size() != mu.size()) throw ContractError("CoupledGaussian: mu/scale size mismatch");
  if (!(scale_diagonal.array() > 0.0).all() || !scale_diagonal.allFinite()) {
    throw DomainError("diagonal scale entries must be positive");
  }
  CoupledGaussian g;
  g.mu_ = std::move(mu);
  g.scale_ = scale_diagonal.asDiagonal();
  g.kappa_ = kappa;
  g.diagonal_ = true;
  g.finish_construction();
  return g;
}

void CoupledGaussian::finish_construction() {
  require_nonnegative_kappa(kappa_, "CoupledGaussian");
  if (diagonal_) {
    chol_ = scale_.diagonal().cwiseSqrt().asDiagonal();
  } else {
    chol_ = spd_cholesky(scale_);
  }
  log_det_ = 2.0 * chol_.diagonal().array().log().sum();
}

double CoupledGaussian::mahalanobis(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != mu_.size()) throw ContractError("mahalanobis: dimension mismatch");
  if (diagonal_) {
    return ((x - mu_).array().square() / scale_.diagonal().array()).sum();
  }
  const Eigen::VectorXd y = chol_.triangularView<Eigen::Lower>().solve(x - mu_);
  return y.squaredNorm();
}

// ---------------------------------------------------------------------------

GeneralizedPareto::GeneralizedPareto(double scale, double kappa) : scale_(scale), kappa_(kappa) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw DomainError("GeneralizedPareto: scale must be positive");
  require_nonnegative_kappa(kappa, "GeneralizedPareto");
}

DiscreteDistribution::DiscreteDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw DomainError("DiscreteDistribution: empty probability vector");
  double total = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw DomainError("DiscreteDistribution: negative or non-finite entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "DiscreteDistribution: probabilities sum to " << total;
    throw DomainError(msg.str());
  }
}

// ---------------------------------------------------------------------------
// Normalizers and densities

double log_gamma(double x) {
  if (!(x > 0.0)) throw DomainError("log_gamma: argument must be positive");
  return std::lgamma(x);
}

double cg_log_normalizer(double log_det_scale, double kappa, int dim) {
  require_nonnegative_kappa(kappa, "cg_log_normalizer");
  const double d = static_cast<double>(dim);
  if (kappa == 0.0) return 0.5 * d * std::log(2.0 * std::numbers::pi) + 0.5 * log_det_scale;
  // Gamma(a) / Gamma(a + d/2) with a = 1/(2k); the ratio form stays accurate
  // when a is huge (k -> 0) where two lgamma calls would cancel.
  const double a = 0.5 / kappa;
  const double log_ratio = std::log(boost::math::tgamma_delta_ratio(a, 0.5 * d));
  return 0.5 * d * std::log(std::numbers::pi / kappa) + 0.5 * log_det_scale + log_ratio;
}

double cg_normalizer(const Eigen::MatrixXd& scale, const Coupling& c) {
  if (c.alpha != 2) throw DomainError("cg_normalizer: coupled Gaussian requires alpha = 2");
  require_nonnegative_kappa(c.kappa, "cg_normalizer");
  if (scale.rows() != c.dim) throw ContractError("cg_normalizer: coupling dim does not match scale matrix");
  const Eigen::MatrixXd l = spd_cholesky(scale);
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  return std::exp(cg_log_normalizer(log_det, c.kappa, c.dim));
}

double cg_log_density(const CoupledGaussian& dist, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double delta = dist.mahalanobis(x);
  const double k = dist.kappa();
  const double log_z = cg_log_normalizer(dist.log_det_scale(), k, dist.dim());
  if (k == 0.0) return -log_z - 0.5 * delta;
  const double d = static_cast<double>(dist.dim());
  return -log_z - (1.0 + d * k) / (2.0 * k) * std::log1p(k * delta);
}

double gpd_log_density(const GeneralizedPareto& dist, double x) {
  if (!(x >= 0.0)) {
    std::ostringstream msg;
    msg << "gpd_log_density: x must be >= 0, got " << x;
    throw DomainError(msg.str());
  }
  const double s = dist.scale();
  const double k = dist.kappa();
  if (k == 0.0) return -std::log(s) - x / s;
  return -std::log(s) - (1.0 + k) / k * std::log1p(k * x / s);
}

double gpd_cdf(const GeneralizedPareto& dist, double x) {
  if (x <= 0.0) return 0.0;
  const double s = dist.scale();
  const double k = dist.kappa();
  if (k == 0.0) return -std::expm1(-x / s);
  return -std::expm1(-std::log1p(k * x / s) / k);
}

// ---------------------------------------------------------------------------
// Escorts

CoupledGaussian escort_of_order(const CoupledGaussian& dist, double m) {
  const double k = dist.kappa();
  if (k == 0.0) return dist;
  const double shrink = 1.0 + m * k;
  const double k_esc = k / shrink;
  if (dist.is_diagonal()) {
    return CoupledGaussian::diagonal(dist.mu(), dist.scale_diagonal() / shrink, k_esc);
  }
  return CoupledGaussian(dist.mu(), dist.scale() / shrink, k_esc);
}

GeneralizedPareto escort_of_order(const GeneralizedPareto& dist, double m) {
  const double shrink = 1.0 + m * dist.kappa();
  return GeneralizedPareto(dist.scale() / shrink, dist.kappa() / shrink);
}

CoupledGaussian escort_transform(const CoupledGaussian& dist) { return escort_of_order(dist, 2.0); }

EscortDensity::EscortDensity(std::function<double(double)> log_density, double power,
                             Support support, double center, double scale, QuadratureOptions opts)
    : base_(std::move(log_density)), power_(power), support_(support), center_(center), scale_(scale) {
  if (!(power >= 1.0)) throw DomainError("escort power must be >= 1");
  auto integrand = [this](double x) { return std::exp(power_ * base_(x)); };
  const QuadratureResult r = support_ == Support::kRealLine
                                 ? integrate_real_line(integrand, center_, scale_, opts)
                                 : integrate_half_line(integrand, center_, scale_, opts);
  if (!std::isfinite(r.value) || !(r.value > 0.0) || !(r.error <= 1e-6 * r.value)) {
    std::ostringstream msg;
    msg << "escort normalization did not converge (value=" << r.value << ", error=" << r.error << ")";
    throw DivergenceError(msg.str());
  }
  log_norm_ = std::log(r.value);
}

double EscortDensity::log_density(double x) const {
  if (support_ == Support::kHalfLine && x < center_) return -std::numeric_limits<double>::infinity();
  return power_ * base_(x) - log_norm_;
}

double EscortDensity::operator()(double x) const { return std::exp(log_density(x)); }

EscortDensity escort_density(std::function<double(double)> log_density, double power,
                             Support support, double center, double scale) {
  return EscortDensity(std::move(log_density), power, support, center, scale);
}

std::vector<double> escort_weights(std::span<const double> probs, double power) {
  std::vector<double> w(probs.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) {
      w[i] = std::pow(probs[i], power);
      total += w[i];
    }
  }
  if (!(total > 0.0)) throw DivergenceError("escort_weights: all probabilities are zero");
  for (double& v : w) v /= total;
  return w;
}

McEstimate escort_log_normalizer_is(
    const std::function<double(const Eigen::VectorXd&)>& log_density, double power,
    const CoupledGaussian& proposal, Rng& rng, std::size_t n) {
  if (!(power >= 1.0)) throw DomainError("escort power must be >= 1");
  if (n < 2) throw ContractError("escort_log_normalizer_is: need at least 2 samples");
  const Eigen::MatrixXd xs = cg_sample(proposal, rng, n);
  std::vector<double> log_w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd x = xs.row(static_cast<Eigen::Index>(i)).transpose();
    log_w[i] = power * log_density(x) - cg_log_density(proposal, x);
  }
  const double shift = *std::max_element(log_w.begin(), log_w.end());
  double sum = 0.0;
  double sum_sq = 0.0;
  for (double lw : log_w) {
    const double w = std::exp(lw - shift);
    sum += w;
    sum_sq += w * w;
  }
  const double nn = static_cast<double>(n);
  const double mean = sum / nn;
  const double var = std::max(0.0, (sum_sq / nn - mean * mean) * nn / (nn - 1.0));
  if (!std::isfinite(mean) || !(mean > 0.0)) throw DivergenceError("escort normalization estimate is not finite");
  return {shift + std::log(mean), std::sqrt(var / nn) / mean};
}

// ---------------------------------------------------------------------------
// Sampling

Eigen::MatrixXd cg_sample(const CoupledGaussian& dist, Rng& rng, std::size_t n) {
  const int d = dist.dim();
  const double k = dist.kappa();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), d);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::chi_squared_distribution<double> chi2(k > 0.0 ? 1.0 / k : 1.0);
  const Eigen::MatrixXd& l = dist.scale_cholesky();
  Eigen::VectorXd eps(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) eps(j) = normal(rng);
    double mix = 1.0;
    if (k > 0.0) mix = std::sqrt((1.0 / k) / chi2(rng));
    Eigen::VectorXd z = dist.is_diagonal() ? Eigen::VectorXd(l.diagonal().cwiseProduct(eps))
                                           : Eigen::VectorXd(l.triangularView<Eigen::Lower>() * eps);
    out.row(static_cast<Eigen::Index>(i)) = (dist.mu() + mix * z).transpose();
  }
  return out;
}

std::vector<double> gpd_sample(const GeneralizedPareto& dist, Rng& rng, std::size_t n) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> out(n);
  const double s = dist.scale();
  const double k = dist.kappa();
  for (double& x : out) {
    const double log_survival = std::log1p(-unif(rng));
    x = k == 0.0 ? -s * log_survival : s / k * std::expm1(-k * log_survival);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Moments

namespace {

McEstimate sample_power_mean(const std::vector<double>& xs, int m) {
  const double n = static_cast<double>(xs.size());
  double sum = 0.0;
  double sum_sq = 0.0;
  for (double x : xs) {
    const double v = std::pow(x, m);
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq / n - mean * mean) * n / (n - 1.0));
  return {mean, std::sqrt(var / n)};
}

}  // namespace

double coupled_moment_1d(const std::function<double(double)>& log_density, const Coupling& c,
                         int m, Support support, double center, double scale) {
  if (m < 1) throw DomainError("coupled_moment: m must be a positive integer");
  const double q = escort_power(Coupling{c.kappa, c.alpha, c.dim}, static_cast<double>(m));
  const EscortDensity escort(log_density, q, support, center, scale);
  auto integrand = [&](double x) {
    const double ld = escort.log_density(x);
    if (!std::isfinite(ld)) return 0.0;
    return std::pow(x, m) * std::exp(ld);
  };
  // Split at zero so odd moments of symmetric laws cancel between two
  // independently converged halves.
  QuadratureResult r;
  if (support == Support::kRealLine) {
    const QuadratureResult right = integrate_half_line(integrand, 0.0, scale);
    const QuadratureResult left = integrate_half_line([&](double y) { return integrand(-y); }, 0.0, scale);
    const double mag = std::abs(right.value) + std::abs(left.value);
    if (!std::isfinite(mag) || right.error > 1e-6 * std::max(1.0, std::abs(right.value)) ||
        left.error > 1e-6 * std::max(1.0, std::abs(left.value))) {
      throw DivergenceError("coupled moment integral did not converge");
    }
    r = {right.value + left.value, right.error + left.error};
  } else {
    r = integrate_half_line(integrand, center, scale);
    if (!std::isfinite(r.value) || r.error > 1e-6 * std::max(1.0, std::abs(r.value))) {
      throw DivergenceError("coupled moment integral did not converge");
    }
  }
  return r.value;
}

McEstimate coupled_moment(const CoupledGaussian& dist, int m, MomentMethod method, Rng* rng,
                          std::size_t n, int coordinate) {
  if (m < 1) throw DomainError("coupled_moment: m must be a positive integer");
  if (coordinate < 0 || coordinate >= dist.dim()) throw ContractError("coupled_moment: bad coordinate");
  if (method == MomentMethod::kQuadrature) {
    if (dist.dim() != 1) throw ContractError("coupled_moment: quadrature requires d = 1");
    const double scale = std::sqrt(dist.scale()(0, 0));
    auto log_p = [&dist](double x) { return cg_log_density(dist, Eigen::VectorXd::Constant(1, x)); };
    return {coupled_moment_1d(log_p, dist.coupling(), m, Support::kRealLine, dist.mu()(0), scale), 0.0};
  }
  if (rng == nullptr || n < 2) throw ContractError("coupled_moment: sampling needs a generator and n >= 2");
  const Eigen::MatrixXd xs = cg_sample(escort_of_order(dist, m), *rng, n);
  const Eigen::VectorXd col = xs.col(coordinate);
  return sample_power_mean(std::vector<double>(col.data(), col.data() + col.size()), m);
}

McEstimate coupled_moment(const GeneralizedPareto& dist, int m, MomentMethod method, Rng* rng,
                          std::size_t n) {
  if (m < 1) throw DomainError("coupled_moment: m must be a positive integer");
  if (method == MomentMethod::kQuadrature) {
    auto log_p = [&dist](double x) { return gpd_log_density(dist, x); };
    return {coupled_moment_1d(log_p, dist.coupling(), m, Support::kHalfLine, 0.0, dist.scale()), 0.0};
  }
  if (rng == nullptr || n < 2) throw ContractError("coupled_moment: sampling needs a generator and n >= 2");
  return sample_power_mean(gpd_sample(escort_of_order(dist, m), *rng, n), m);
}

bool moment_exists(const Coupling& c, int m) noexcept {
  return c.kappa < 1.0 / static_cast<double>(m);
}

}  // namespace coupled
