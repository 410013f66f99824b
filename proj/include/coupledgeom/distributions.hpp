#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "coupledgeom/coupled_algebra.hpp"
#include "coupledgeom/quadrature.hpp"

namespace coupled {

using Rng = std::mt19937_64;

// Multivariate coupled Gaussian
//
//   f(x) = (1 + k (x-mu)' S^-1 (x-mu))^(-(1 + d k) / (2 k)) / Z(S, k)
//
// which is a Student's t with nu = 1/k degrees of freedom and *scale* matrix S
// (the covariance is S nu / (nu - 2) when it exists). k == 0 is the Gaussian.
// Only k >= 0 is supported. Values are immutable after construction.
class CoupledGaussian {
 public:
  // Dense scale matrix. Throws DomainError if `scale` is not symmetric
  // positive definite or kappa is negative / non-finite.
  CoupledGaussian(Eigen::VectorXd mu, Eigen::MatrixXd scale, double kappa);

  // Diagonal scale stored as a vector of positive variances.
  static CoupledGaussian diagonal(Eigen::VectorXd mu, Eigen::VectorXd scale_diagonal, double kappa);

  int dim() const noexcept { return static_cast<int>(mu_.size()); }
  double kappa() const noexcept { return kappa_; }
  Coupling coupling() const noexcept { return Coupling{kappa_, 2, dim()}; }
  const Eigen::VectorXd& mu() const noexcept { return mu_; }
  const Eigen::MatrixXd& scale() const noexcept { return scale_; }
  bool is_diagonal() const noexcept { return diagonal_; }
  Eigen::VectorXd scale_diagonal() const { return scale_.diagonal(); }
  // Lower-triangular L with L L' = scale().
  const Eigen::MatrixXd& scale_cholesky() const noexcept { return chol_; }
  double log_det_scale() const noexcept { return log_det_; }

  // (x - mu)' S^-1 (x - mu)
  double mahalanobis(const Eigen::Ref<const Eigen::VectorXd>& x) const;

 private:
  CoupledGaussian() = default;
  void finish_construction();

  Eigen::VectorXd mu_;
  Eigen::MatrixXd scale_;
  Eigen::MatrixXd chol_;
  double kappa_ = 0.0;
  double log_det_ = 0.0;
  bool diagonal_ = false;
};

// Generalized Pareto (coupled exponential, alpha = 1, d = 1) on x >= 0:
//   p(x) = (1/s) (1 + k x / s)^(-(1 + k)/k)
class GeneralizedPareto {
 public:
  GeneralizedPareto(double scale, double kappa);

  double scale() const noexcept { return scale_; }
  double kappa() const noexcept { return kappa_; }
  Coupling coupling() const noexcept { return Coupling{kappa_, 1, 1}; }

 private:
  double scale_;
  double kappa_;
};

// Probability vector; entries non-negative and summing to 1 within 1e-12.
class DiscreteDistribution {
 public:
  explicit DiscreteDistribution(std::vector<double> probs);

  std::span<const double> probs() const noexcept { return probs_; }
  std::size_t size() const noexcept { return probs_.size(); }

 private:
  std::vector<double> probs_;
};

// log Gamma(x) for x > 0.
double log_gamma(double x);

// log Z for a coupled Gaussian with the given log|S|.
double cg_log_normalizer(double log_det_scale, double kappa, int dim);

// Z(S, k). Requires c.alpha == 2, c.kappa >= 0 and c.dim == S.rows().
// Throws DomainError for a non-SPD scale matrix.
double cg_normalizer(const Eigen::MatrixXd& scale, const Coupling& c);

double cg_log_density(const CoupledGaussian& dist, const Eigen::Ref<const Eigen::VectorXd>& x);

// Throws DomainError for x < 0.
double gpd_log_density(const GeneralizedPareto& dist, double x);
double gpd_cdf(const GeneralizedPareto& dist, double x);

// Escort of order m: the distribution proportional to f^(1 + m k / (1 + d k)).
// For a coupled Gaussian this is again a coupled Gaussian with
// k' = k / (1 + m k) and S' = S / (1 + m k).
CoupledGaussian escort_of_order(const CoupledGaussian& dist, double m);
GeneralizedPareto escort_of_order(const GeneralizedPareto& dist, double m);

// Escort with m = 2, the sampling distribution Q used by the free energy:
// k_Q = k / (1 + 2k), S_Q = S / (1 + 2k), so that k S^-1 == k_Q S_Q^-1.
CoupledGaussian escort_transform(const CoupledGaussian& dist);

enum class Support { kRealLine, kHalfLine };

// One-dimensional escort density P(x) = p(x)^q / Int p^q, normalized by
// adaptive quadrature. Throws DivergenceError if the normalizing integral is
// not finite, and DomainError for q < 1.
class EscortDensity {
 public:
  EscortDensity(std::function<double(double)> log_density, double power, Support support,
                double center = 0.0, double scale = 1.0, QuadratureOptions opts = {});

  double operator()(double x) const;
  double log_density(double x) const;
  double log_normalizer() const noexcept { return log_norm_; }
  double power() const noexcept { return power_; }
  Support support() const noexcept { return support_; }
  double center() const noexcept { return center_; }
  double scale() const noexcept { return scale_; }

 private:
  std::function<double(double)> base_;
  double power_;
  Support support_;
  double center_;
  double scale_;
  double log_norm_ = 0.0;
};

EscortDensity escort_density(std::function<double(double)> log_density, double power,
                             Support support, double center = 0.0, double scale = 1.0);

// Discrete escort weights p_i^q / sum_j p_j^q. Zero entries stay zero.
std::vector<double> escort_weights(std::span<const double> probs, double power);

// Number of proposal draws used by escort_log_normalizer_is when not given.
inline constexpr std::size_t kEscortImportanceSamples = 100000;

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

// log Int p(x)^q dx for a multivariate log-density by self-normalized
// importance sampling from `proposal`. The proposal should have heavier tails
// than p^q. Returns the estimate of the log integral and the delta-method
// standard error of that log.
McEstimate escort_log_normalizer_is(
    const std::function<double(const Eigen::VectorXd&)>& log_density, double power,
    const CoupledGaussian& proposal, Rng& rng, std::size_t n = kEscortImportanceSamples);

// Exact draws, one per row. k == 0: mu + L e. k > 0: mu + L e sqrt(nu / w)
// with nu = 1/k and w ~ chi-square(nu).
Eigen::MatrixXd cg_sample(const CoupledGaussian& dist, Rng& rng, std::size_t n);

// Inverse-CDF draws from a generalized Pareto.
std::vector<double> gpd_sample(const GeneralizedPareto& dist, Rng& rng, std::size_t n);

enum class MomentMethod { kQuadrature, kEscortSampling };

// Coupled moment E_k[x^m] = Int x^m P^(1 + m k / (1 + d k))(x) dx.
// Quadrature needs d == 1; sampling draws `n` points from the order-m escort
// and reports the standard error. `coordinate` selects the component for d > 1.
McEstimate coupled_moment(const CoupledGaussian& dist, int m, MomentMethod method,
                          Rng* rng = nullptr, std::size_t n = 1000000, int coordinate = 0);
McEstimate coupled_moment(const GeneralizedPareto& dist, int m, MomentMethod method,
                          Rng* rng = nullptr, std::size_t n = 1000000);

// Quadrature coupled moment of an arbitrary one-dimensional log-density.
// Throws DivergenceError when the integral does not converge.
double coupled_moment_1d(const std::function<double(double)>& log_density, const Coupling& c,
                         int m, Support support, double center = 0.0, double scale = 1.0);

// The ordinary m-th moment of a coupled exponential-family member exists iff k < 1/m.
bool moment_exists(const Coupling& c, int m) noexcept;

}  // namespace coupled
