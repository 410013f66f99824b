#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "coupledgeom/coupled_algebra.hpp"
#include "coupledgeom/distributions.hpp"
#include "coupledgeom/quadrature.hpp"

namespace coupled {

// Coupled exponential family with natural parameters theta:
//
//   p(x; theta) = exp_k^{-(1+dk)/alpha}(theta . T(x)) h(x) / Z(theta)
//
// Normalizer derivatives are optional; missing ones are taken by central
// differences with step 1e-5 (1 + |theta_i|).
struct ExpFamilyModel {
  Eigen::VectorXd theta;
  Coupling coupling;
  int data_dim = 1;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> suff_stat;
  std::function<double(const Eigen::VectorXd&)> log_base_measure;
  std::function<double(const Eigen::VectorXd&)> log_normalizer;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad_log_normalizer;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> hess_log_normalizer;
  // n draws from p(x; theta), one per row.
  std::function<Eigen::MatrixXd(Rng&, std::size_t)> sampler;
  // 1-D quadrature layout
  Support support = Support::kHalfLine;
  double quad_center = 0.0;
  double quad_scale = 1.0;

  int num_params() const noexcept { return static_cast<int>(theta.size()); }
  ExpFamilyModel with_theta(Eigen::VectorXd new_theta) const;
};

// GPD / coupled exponential: T(x) = x, h = 1, alpha = 1, d = 1, Z = 1/theta,
// x >= 0. kappa = 0 is the exponential distribution with rate theta.
ExpFamilyModel gpd_model(double theta, double kappa);

// Bivariate coupled exponential (multivariate Lomax): T(x) = x, h = 1,
// alpha = 1, d = 2, Z = 1 / ((1 + k) theta_1 theta_2), x >= 0.
ExpFamilyModel bivariate_exponential_model(double theta1, double theta2, double kappa);

// r = alpha k / (1 + d k)
double r_exponent(const Coupling& c) noexcept;

// R = h(x)^-r Z(theta)^r
double r_of_zeta(const ExpFamilyModel& model, const Eigen::VectorXd& x);

double model_log_density(const ExpFamilyModel& model, const Eigen::VectorXd& x);

// l_k = (1/alpha) ln_k(p^{-alpha/(1+dk)}) = (1/alpha)[theta . T R + (R - 1)/k],
// a coupled surprisal (decreasing in the likelihood). Continuous at k = 0,
// where it is (1/alpha) theta . T + ln Z - ln h.
double coupled_loglik(const ExpFamilyModel& model, const Eigen::VectorXd& x);
Eigen::VectorXd loglik_grad(const ExpFamilyModel& model, const Eigen::VectorXd& x);
Eigen::MatrixXd loglik_hessian(const ExpFamilyModel& model, const Eigen::VectorXd& x);

// Rank-3 array indexed (i, j, k).
class Tensor3 {
 public:
  Tensor3() = default;
  explicit Tensor3(int n) : n_(n), data_(static_cast<std::size_t>(n) * n * n, 0.0) {}
  int size() const noexcept { return n_; }
  double& operator()(int i, int j, int k) { return data_[(static_cast<std::size_t>(i) * n_ + j) * n_ + k]; }
  double operator()(int i, int j, int k) const { return data_[(static_cast<std::size_t>(i) * n_ + j) * n_ + k]; }
  const std::vector<double>& data() const noexcept { return data_; }

 private:
  int n_ = 0;
  std::vector<double> data_;
};

struct GeometryTensors {
  Eigen::MatrixXd g;
  Tensor3 gamma;
  Eigen::MatrixXd mc_stderr_g;  // zero for quadrature
  Tensor3 mc_stderr_gamma;
  // (1/alpha) E[B1 + B2] as typeset for g; it carries one free index and is
  // reported, not used.
  Eigen::VectorXd lemma_printed_g;
};

// The measure behind E_X.
//   kEscort  : escort of p with power 1 + 2k/(1+dk); every moment the tensors
//              need is finite for all k >= 0
//   kDensity : p itself; Gamma needs E[T^2], finite only for small k
// Both coincide at k = 0.
enum class ExpectationMeasure { kEscort, kDensity };

// kDerivative: g = E[d2 l], Gamma = E[d2 l  d l] from the pointwise derivatives.
// kLemma     : g = (1/alpha) E[A1 + A2], Gamma = (1/alpha^2) E[(A1 + A2)(B1 + B2)]
//              assembled from R and its theta-derivatives.
enum class GeometryRoute { kDerivative, kLemma };

struct GeometryOptions {
  ExpectationMeasure measure = ExpectationMeasure::kEscort;
  GeometryRoute route = GeometryRoute::kDerivative;
  QuadratureOptions quadrature{};
};

double expectation_power(const Coupling& c, ExpectationMeasure measure) noexcept;

// Deterministic route, data_dim == 1 only (ContractError otherwise).
// Throws DivergenceError if an integral does not converge.
GeometryTensors geometry_quadrature(const ExpFamilyModel& model, const GeometryOptions& options = {});

// Self-normalized importance sampling from model.sampler, weights p^(q-1).
GeometryTensors geometry_mc(const ExpFamilyModel& model, Rng& rng, std::size_t n,
                            const GeometryOptions& options = {});

Eigen::MatrixXd fisher_metric(const ExpFamilyModel& model, const GeometryOptions& options = {});
Tensor3 affine_connection(const ExpFamilyModel& model, const GeometryOptions& options = {});

// (g + damping I)^-1 grad. Not used by the trainer.
Eigen::VectorXd natural_gradient(const Eigen::MatrixXd& g, const Eigen::VectorXd& grad, double damping = 0.0);

}  // namespace coupled
