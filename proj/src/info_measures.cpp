#include "coupledgeom/info_measures.hpp"

#include <cmath>
#include <sstream>

#include "coupledgeom/errors.hpp"

namespace coupled {

double coupled_surprisal(double log_p, const Coupling& c) noexcept {
  const double exponent = -static_cast<double>(c.alpha) / (1.0 + c.dim * c.kappa);
  return coupled_log_of_exp(exponent * log_p, c.kappa);
}

double coupled_entropy(const DiscreteDistribution& p, const Coupling& c) {
  const auto probs = p.probs();
  if (c.kappa == 0.0) {
    double h = 0.0;
    for (double pi : probs)
      if (pi > 0.0) h -= pi * std::log(pi);
    return h;
  }
  const double q = escort_power(c, c.alpha);
  const std::vector<double> escort = escort_weights(probs, q);
  double h = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) h += escort[i] * coupled_surprisal(std::log(probs[i]), c);
  }
  return h / c.alpha;
}

double coupled_entropy_closed_form(const DiscreteDistribution& p, const Coupling& c) {
  if (c.kappa == 0.0) throw DomainError("coupled_entropy_closed_form: kappa must be non-zero");
  const double q = escort_power(c, c.alpha);
  double sum = 0.0;
  for (double pi : p.probs())
    if (pi > 0.0) sum += std::pow(pi, q);
  const double log_arg = (1.0 + c.dim * c.kappa) / (c.alpha * c.kappa) * std::log(sum);
  return coupled_log_of_exp(log_arg, c.kappa) / c.alpha;
}

NormTerm norm_term(double z, const Coupling& c) { return norm_term(z, c, NormTermReading::kPrinted); }

NormTerm norm_term(double z, const Coupling& c, NormTermReading reading) {
  if (!(z > 0.0) || !std::isfinite(z)) throw DomainError("norm_term: Z must be positive and finite");
  const double power = -2.0 / (1.0 + c.dim * c.kappa);
  if (reading == NormTermReading::kCoupledLog) {
    return {coupled_log_of_exp(-power * std::log(z), c.kappa)};
  }
  const double base = coupled_log_of_exp(-std::log(z), c.kappa);
  if (!(base > 0.0)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "norm_term: ln_k(1/Z) = " << base << " <= 0 (Z=" << z << ", kappa=" << c.kappa
        << "); no real fractional power";
    throw DomainError(msg.str());
  }
  return {std::pow(base, power)};
}

namespace {

void require_matching(const CoupledGaussian& q, const CoupledGaussian& p) {
  if (q.dim() != p.dim()) throw ContractError("divergence: q and p dimensions differ");
  if (q.kappa() != p.kappa()) throw ContractError("divergence: q and p couplings differ");
}

}  // namespace

McEstimate cfe_divergence_mc(const CoupledGaussian& q, const CoupledGaussian& p, Rng& rng,
                             std::size_t n) {
  require_matching(q, p);
  if (n < 2) throw ContractError("cfe_divergence_mc: n must be >= 2");
  const Coupling c = q.coupling();
  const Eigen::MatrixXd zs = cg_sample(escort_transform(q), rng, n);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (Eigen::Index i = 0; i < zs.rows(); ++i) {
    const Eigen::VectorXd z = zs.row(i).transpose();
    const double v =
        0.5 * (coupled_surprisal(cg_log_density(p, z), c) - coupled_surprisal(cg_log_density(q, z), c));
    sum += v;
    sum_sq += v * v;
  }
  const double nn = static_cast<double>(n);
  const double mean = sum / nn;
  const double var = std::max(0.0, (sum_sq / nn - mean * mean) * nn / (nn - 1.0));
  return {mean, std::sqrt(var / nn)};
}

double gaussian_kl(const Eigen::VectorXd& mu_q, const Eigen::MatrixXd& s_q, const Eigen::VectorXd& mu_p,
                   const Eigen::MatrixXd& s_p) {
  const Eigen::LLT<Eigen::MatrixXd> llt_p(s_p);
  const Eigen::LLT<Eigen::MatrixXd> llt_q(s_q);
  if (llt_p.info() != Eigen::Success || llt_q.info() != Eigen::Success) {
    throw DomainError("gaussian_kl: covariance is not positive definite");
  }
  const Eigen::VectorXd dmu = mu_p - mu_q;
  const double trace = llt_p.solve(s_q).trace();
  const double maha = dmu.dot(llt_p.solve(dmu));
  const double log_det_p = 2.0 * Eigen::MatrixXd(llt_p.matrixL()).diagonal().array().log().sum();
  const double log_det_q = 2.0 * Eigen::MatrixXd(llt_q.matrixL()).diagonal().array().log().sum();
  return 0.5 * (trace + maha - static_cast<double>(mu_q.size()) + log_det_p - log_det_q);
}

double cfe_divergence_closed(const CoupledGaussian& q, const CoupledGaussian& p, NormTermReading reading) {
  require_matching(q, p);
  const double k = q.kappa();
  if (k == 0.0) return gaussian_kl(q.mu(), q.scale(), p.mu(), p.scale());
  const Coupling c = q.coupling();
  const double d = static_cast<double>(q.dim());
  const double a_q = norm_term(std::exp(cg_log_normalizer(q.log_det_scale(), k, q.dim())), c, reading).value;
  const double a_p = norm_term(std::exp(cg_log_normalizer(p.log_det_scale(), k, p.dim())), c, reading).value;
  const Eigen::LLT<Eigen::MatrixXd> llt_p(p.scale());
  const Eigen::VectorXd dmu = p.mu() - q.mu();
  const double quad = dmu.dot(llt_p.solve(dmu)) + llt_p.solve(q.scale()).trace();
  return -d * (1.0 + k * a_q) / 2.0 + (1.0 + k * a_p) / 2.0 * quad - a_q / 2.0 + a_p / 2.0;
}

double reconstruction_loss_from_delta(double delta, double a_xz, double kappa) noexcept {
  return 0.5 * coupled_sum(delta, a_xz, kappa);
}

double reconstruction_loss(std::span<const double> x, std::span<const double> x_hat,
                           std::span<const double> sigma_xz, NormTerm a_xz, double kappa) {
  if (x.size() != x_hat.size() || x.size() != sigma_xz.size()) {
    throw ContractError("reconstruction_loss: shape mismatch");
  }
  double delta = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(sigma_xz[i] > 0.0)) throw DomainError("reconstruction_loss: variances must be positive");
    const double r = x[i] - x_hat[i];
    delta += r * r / sigma_xz[i];
  }
  return reconstruction_loss_from_delta(delta, a_xz.value, kappa);
}

CfeTerms cfe_total(double divergence, double reconstruction, double mc_stderr) {
  return {divergence, reconstruction, divergence + reconstruction, mc_stderr};
}

DivergenceSignCheck pin_divergence_sign(std::uint64_t seed, std::size_t n) {
  const CoupledGaussian q(Eigen::VectorXd::Constant(1, 1.0), Eigen::MatrixXd::Identity(1, 1), 0.0);
  const CoupledGaussian p(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1), 0.0);
  Rng rng(seed);
  const McEstimate mc = cfe_divergence_mc(q, p, rng, n);
  DivergenceSignCheck check;
  check.kl = gaussian_kl(q.mu(), q.scale(), p.mu(), p.scale());
  check.mc_value = mc.mean;
  check.mc_stderr = mc.std_error;
  check.sign = std::abs(mc.mean - check.kl) <= std::abs(mc.mean + check.kl) ? 1 : -1;
  return check;
}

}  // namespace coupled
