#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "coupledgeom/autodiff.hpp"
#include "coupledgeom/coupled_algebra.hpp"
#include "coupledgeom/distributions.hpp"
#include "coupledgeom/info_measures.hpp"

namespace coupled {

// How validation draws latent codes: from the escort Q (as in training) or
// from the posterior q itself.
enum class LatentSampling { kEscort, kPosterior };

struct TrainConfig {
  double learning_rate = 5e-4;
  int batch_size = 64;
  int latent_dim = 10;
  std::vector<int> hidden{128, 128};
  double leaky_slope = 0.01;
  double grad_clip_norm = 10.0;
  int epochs = 5;
  double kappa = 0.0;
  int mc_samples = 1;
  std::uint64_t seed = 1;
  double sigma_xz = 1.0;
  // A_{x|z}; unset means norm_term of the decoder normalizer.
  std::optional<double> a_xz_override = 0.0;
  LatentSampling val_sampling = LatentSampling::kEscort;

  void validate() const;  // ContractError on non-positive sizes/rates
};

inline constexpr double kLogVarLimit = 30.0;

// Independent 64-bit seed for a numbered stream, mixed through std::seed_seq.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct NamedTensor {
  std::string name;
  ad::Tensor value;
};

// MLP encoder (LeakyReLU trunk, linear mu / log-variance heads) and decoder
// (LeakyReLU trunk, sigmoid output). The decoder trunk mirrors the encoder's.
// Parameters are stored in a fixed order:
//   enc.hidden.<i>.{W,b}, enc.mu.{W,b}, enc.logvar.{W,b},
//   dec.hidden.<i>.{W,b}, dec.out.{W,b}
// with W stored (fan_in x fan_out). The encoder's log-variance is clamped to
// [-kLogVarLimit, kLogVarLimit].
struct CvaeModel {
  int input_dim = 0;
  int latent_dim = 0;
  std::vector<int> hidden;
  double leaky_slope = 0.01;
  Coupling coupling;  // alpha = 2, dim = latent_dim
  double sigma_xz = 1.0;
  std::vector<NamedTensor> params;

  double kappa() const noexcept { return coupling.kappa; }
  CoupledGaussian prior() const;
  std::size_t parameter_count() const;
};

// Kaiming-uniform (gain sqrt(2 / (1 + slope^2))) for LeakyReLU layers,
// Xavier-uniform for the heads and output layer, zero biases.
CvaeModel make_cvae(int input_dim, const TrainConfig& config, Rng& rng);

struct Posterior {
  Eigen::MatrixXd mu;     // B x latent
  Eigen::MatrixXd sigma;  // B x latent, exp(logvar / 2)
};

Posterior encode(const CvaeModel& model, const Eigen::MatrixXd& x);
Eigen::MatrixXd decode(const CvaeModel& model, const Eigen::MatrixXd& z);
// Decoder mean at the posterior mean.
Eigen::MatrixXd reconstruct(const CvaeModel& model, const Eigen::MatrixXd& x);

// Heavy-tailed noise of the escort Q of a unit-scale coupled Gaussian: rows
// of cg_sample(CoupledGaussian(0, I, k_Q)), k_Q = k / (1 + 2k). Standard
// normal at k = 0. One matrix (B x latent) per MC sample.
std::vector<Eigen::MatrixXd> draw_latent_noise(std::size_t batch, int latent_dim, double kappa, int samples,
                                               Rng& rng, LatentSampling mode = LatentSampling::kEscort);

// z = mu + sigma / sqrt(1 + 2k) * eps (escort) or mu + sigma * eps (posterior).
std::vector<Eigen::MatrixXd> sample_latent(const Eigen::MatrixXd& mu, const Eigen::MatrixXd& sigma, double kappa,
                                           Rng& rng, int samples, LatentSampling mode = LatentSampling::kEscort);

struct LossEvaluation {
  CfeTerms terms;                     // batch means
  std::vector<ad::Tensor> gradients;  // d total / d params, when requested
  std::optional<std::string> non_finite;  // first non-finite node, if any
};

// Batch-mean coupled free energy with the latent noise supplied.
// divergence: Gaussian KL at k = 0, else 1/2 [S_p(z) - S_q(z)] averaged over
// the samples, S(z) = ln_k(p(z)^(-2/(1+dk))). reconstruction:
// 1/2 [(1 + k A) delta + A] averaged over samples, delta = |x - xhat|^2 / sigma_xz^2.
// `divergence_sign` multiplies the divergence in the total.
LossEvaluation cfe_loss_with_noise(const CvaeModel& model, const Eigen::MatrixXd& x,
                                   const std::vector<Eigen::MatrixXd>& noise, const TrainConfig& config,
                                   bool with_gradients, int divergence_sign = 1,
                                   LatentSampling mode = LatentSampling::kEscort);

CfeTerms cfe_loss(const CvaeModel& model, const Eigen::MatrixXd& x, Rng& rng, const TrainConfig& config);

// A_{x|z} used by the loss: the override, or norm_term of the decoder's
// coupled Gaussian normalizer (DomainError when out of domain).
double reconstruction_norm_term(const CvaeModel& model, const TrainConfig& config);

class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::vector<NamedTensor>& params, const std::vector<ad::Tensor>& grads);
  long steps() const noexcept { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

double global_norm(const std::vector<ad::Tensor>& grads);
// Rescales in place so the global norm is at most max_norm; returns the
// norm before clipping.
double clip_global_norm(std::vector<ad::Tensor>& grads, double max_norm);

struct EpochRecord {
  int epoch = 0;
  double train_total = 0.0;  // mean over batches
  double train_total_std = 0.0;
  double train_divergence = 0.0;
  double train_reconstruction = 0.0;
  double val_total = 0.0;
  double val_total_std = 0.0;
  double val_divergence = 0.0;
  double val_reconstruction = 0.0;
  double max_grad_norm = 0.0;       // before clipping
  double max_clipped_norm = 0.0;    // after clipping
  long steps = 0;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  bool aborted = false;
  std::string diagnostic;
  int divergence_sign = 1;
};

using EpochSink = std::function<void(const EpochRecord&)>;

// Mean and population standard deviation of per-batch totals over `x`,
// in batch_size chunks, with noise from `rng`.
struct BatchStats {
  CfeTerms mean;
  double total_std = 0.0;
};
BatchStats evaluate_cfe(const CvaeModel& model, const Eigen::MatrixXd& x, const TrainConfig& config, Rng& rng,
                        LatentSampling mode, int divergence_sign = 1);

// Adam with global-norm clipping, reshuffled every epoch from config.seed.
// Validation uses an rng stream derived from the seed and epoch, so results
// depend on nothing but (model, data, config). The divergence orientation is
// pinned once before the first step. A non-finite loss or gradient stops
// training with `aborted` set and the offending node in `diagnostic`.
TrainResult train(CvaeModel& model, const Eigen::MatrixXd& train_x, const Eigen::MatrixXd& val_x,
                  const TrainConfig& config, const EpochSink& sink = {});

// Little-endian: "CVAE", u32 version 1, f64 kappa, u32 alpha, u32 latent dim,
// u32 count, then per tensor u32 name length, name bytes, u32 rank, u32 dims,
// f64 payload. sigma_xz travels as a rank-0 tensor named "sigma_xz".
void checkpoint_save(const CvaeModel& model, const std::string& path);
CvaeModel checkpoint_load(const std::string& path);
std::vector<unsigned char> checkpoint_bytes(const CvaeModel& model);
CvaeModel checkpoint_parse(const std::vector<unsigned char>& bytes);

}  // namespace coupled
