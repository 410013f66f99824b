#pragma once

#include <span>

#include "coupledgeom/coupled_algebra.hpp"
#include "coupledgeom/distributions.hpp"

namespace coupled {

// A = (ln_k(1/Z))^(-2/(1 + d k)).
struct NormTerm {
  double value = 0.0;
};

// The free energy's normalization constant admits two readings of the same
// typeset expression:
//   kPrinted    A = (ln_k(1/Z))^(-2/(1+dk))      (as typeset before the theorem)
//   kCoupledLog A = ln_k((1/Z)^(-2/(1+dk)))      (coupled log of the powered
//                                                  normalizer, always finite)
// The second one makes the simplified divergence equal the expectation form.
enum class NormTermReading { kPrinted, kCoupledLog };

struct CfeTerms {
  double divergence = 0.0;
  double reconstruction = 0.0;
  double total = 0.0;
  double mc_stderr = 0.0;
};

// ln_k(p^(-alpha/(1 + d k))) evaluated from log p.
double coupled_surprisal(double log_p, const Coupling& c) noexcept;

// Escort-weighted coupled entropy
//   (1/alpha) sum_i P_i ln_k(p_i^(-alpha/(1+dk))),  P = escort of power 1 + alpha k/(1+dk).
// Shannon entropy (nats) at k == 0. Zero-probability entries contribute 0.
double coupled_entropy(const DiscreteDistribution& p, const Coupling& c);

// The second typeset form (1/alpha) ln_k((sum p_i^q)^((1+dk)/(alpha k))),
// evaluated verbatim. Kept as a cross-check only: it does not agree with
// coupled_entropy. Throws DomainError at k == 0.
double coupled_entropy_closed_form(const DiscreteDistribution& p, const Coupling& c);

// Throws DomainError when ln_k(1/Z) <= 0 (Z >= 1), where the fractional power
// has no real value.
NormTerm norm_term(double z, const Coupling& c);
NormTerm norm_term(double z, const Coupling& c, NormTermReading reading);

// Monte-Carlo coupled divergence
//   1/2 E_{z~Q}[ln_k(p(z)^(-2/(1+dk))) - ln_k(q(z)^(-2/(1+dk)))]
// with Q = escort_transform(q). At k == 0 this is KL(q || p).
// q and p must share dimension and coupling; n >= 2.
McEstimate cfe_divergence_mc(const CoupledGaussian& q, const CoupledGaussian& p, Rng& rng,
                             std::size_t n);

// Simplified coupled divergence
//   -d(1 + k A_q)/2 + (1 + k A_p)/2 [dmu' S_p^-1 dmu + tr(S_p^-1 S_q)] - A_q/2 + A_p/2.
// k == 0 returns the Gaussian KL(q || p).
double cfe_divergence_closed(const CoupledGaussian& q, const CoupledGaussian& p,
                             NormTermReading reading = NormTermReading::kPrinted);

// KL(N(mu_q, S_q) || N(mu_p, S_p)).
double gaussian_kl(const Eigen::VectorXd& mu_q, const Eigen::MatrixXd& s_q, const Eigen::VectorXd& mu_p,
                   const Eigen::MatrixXd& s_p);

// 1/2 (delta (+)_k A) = 1/2 [(1 + k A) delta + A], delta the Mahalanobis
// distance of x from x_hat under the diagonal variances sigma_xz.
double reconstruction_loss(std::span<const double> x, std::span<const double> x_hat,
                           std::span<const double> sigma_xz, NormTerm a_xz, double kappa);
double reconstruction_loss_from_delta(double delta, double a_xz, double kappa) noexcept;

CfeTerms cfe_total(double divergence, double reconstruction, double mc_stderr = 0.0);

// Orientation of the expectation-form divergence relative to KL, measured at
// k == 0 on N(1,1) || N(0,1). `sign` multiplies the divergence in the
// minimized objective.
struct DivergenceSignCheck {
  int sign = 1;
  double mc_value = 0.0;
  double mc_stderr = 0.0;
  double kl = 0.0;
};
DivergenceSignCheck pin_divergence_sign(std::uint64_t seed = 20240601, std::size_t n = 20000);

}  // namespace coupled
