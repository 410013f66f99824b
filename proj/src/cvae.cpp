#include "coupledgeom/cvae.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "coupledgeom/errors.hpp"

namespace coupled {

namespace {

using ad::Tape;
using ad::Tensor;
using ad::Var;

ad::Tensor to_tensor(const Eigen::MatrixXd& m) {
  Tensor t = Tensor::zeros({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t(r, c) = m(r, c);
  return t;
}

Eigen::MatrixXd to_matrix(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m(r, c) = t(r, c);
  return m;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

namespace {

struct Layout {
  std::size_t enc_hidden = 0;  // first index of enc.hidden.0.W
  std::size_t enc_mu = 0;
  std::size_t enc_logvar = 0;
  std::size_t dec_hidden = 0;
  std::size_t dec_out = 0;
  std::size_t total = 0;
};

Layout layout_of(const CvaeModel& m) {
  Layout l;
  const std::size_t h = m.hidden.size();
  l.enc_hidden = 0;
  l.enc_mu = 2 * h;
  l.enc_logvar = l.enc_mu + 2;
  l.dec_hidden = l.enc_logvar + 2;
  l.dec_out = l.dec_hidden + 2 * h;
  l.total = l.dec_out + 2;
  return l;
}

std::vector<int> decoder_hidden(const CvaeModel& m) { return {m.hidden.rbegin(), m.hidden.rend()}; }

Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t = Tensor::zeros({rows, cols});
  for (double& v : t.data()) v = u(rng);
  return t;
}

void add_layer(CvaeModel& m, const std::string& name, int fan_in, int fan_out, bool kaiming, Rng& rng) {
  const double bound = kaiming ? std::sqrt(2.0 / (1.0 + m.leaky_slope * m.leaky_slope)) * std::sqrt(3.0 / fan_in)
                               : std::sqrt(6.0 / (fan_in + fan_out));
  m.params.push_back({name + ".W", uniform_tensor(fan_in, fan_out, bound, rng)});
  m.params.push_back({name + ".b", Tensor::zeros({static_cast<std::size_t>(fan_out)})});
}

struct Encoded {
  Var mu;
  Var logvar;
};

// log-variance is clamped to +-kLogVarLimit so that exp stays finite for
// extreme inputs; inactive for ordinary activations.
Var clamp_logvar(Var v) {
  return ad::scale(ad::clamp_min(ad::scale(ad::clamp_min(v, -kLogVarLimit), -1.0), -kLogVarLimit), -1.0);
}

Encoded encoder_graph(const CvaeModel& m, const std::vector<Var>& p, Var x) {
  const Layout l = layout_of(m);
  Var h = x;
  for (std::size_t i = 0; i < m.hidden.size(); ++i) {
    h = ad::leaky_relu(ad::affine(h, p[l.enc_hidden + 2 * i], p[l.enc_hidden + 2 * i + 1]), m.leaky_slope);
  }
  return {ad::affine(h, p[l.enc_mu], p[l.enc_mu + 1]),
          clamp_logvar(ad::affine(h, p[l.enc_logvar], p[l.enc_logvar + 1]))};
}

Var decoder_graph(const CvaeModel& m, const std::vector<Var>& p, Var z) {
  const Layout l = layout_of(m);
  Var h = z;
  for (std::size_t i = 0; i < m.hidden.size(); ++i) {
    h = ad::leaky_relu(ad::affine(h, p[l.dec_hidden + 2 * i], p[l.dec_hidden + 2 * i + 1]), m.leaky_slope);
  }
  return ad::sigmoid(ad::affine(h, p[l.dec_out], p[l.dec_out + 1]));
}

std::vector<Var> bind(Tape& tape, const CvaeModel& m, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(m.params.size());
  for (const auto& p : m.params) vars.push_back(trainable ? tape.parameter(p.value) : tape.constant(p.value));
  return vars;
}

void require_input(const CvaeModel& m, const Eigen::MatrixXd& x) {
  if (x.cols() != m.input_dim) {
    throw ContractError("cvae: input has " + std::to_string(x.cols()) + " columns, model expects " +
                        std::to_string(m.input_dim));
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ContractError("TrainConfig: learning_rate must be positive");
  if (batch_size <= 0) throw ContractError("TrainConfig: batch_size must be positive");
  if (latent_dim <= 0) throw ContractError("TrainConfig: latent_dim must be positive");
  if (!(grad_clip_norm > 0.0)) throw ContractError("TrainConfig: grad_clip_norm must be positive");
  if (epochs < 0) throw ContractError("TrainConfig: epochs must be non-negative");
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw ContractError("TrainConfig: kappa must be finite and >= 0");
  if (mc_samples <= 0) throw ContractError("TrainConfig: mc_samples must be positive");
  if (!(sigma_xz > 0.0)) throw ContractError("TrainConfig: sigma_xz must be positive");
  for (int h : hidden)
    if (h <= 0) throw ContractError("TrainConfig: hidden layer sizes must be positive");
  if (a_xz_override && !std::isfinite(*a_xz_override)) throw ContractError("TrainConfig: a_xz_override must be finite");
}

CoupledGaussian CvaeModel::prior() const {
  return CoupledGaussian::diagonal(Eigen::VectorXd::Zero(latent_dim), Eigen::VectorXd::Ones(latent_dim),
                                   coupling.kappa);
}

std::size_t CvaeModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

CvaeModel make_cvae(int input_dim, const TrainConfig& config, Rng& rng) {
  config.validate();
  if (input_dim <= 0) throw ContractError("make_cvae: input_dim must be positive");
  CvaeModel m;
  m.input_dim = input_dim;
  m.latent_dim = config.latent_dim;
  m.hidden = config.hidden;
  m.leaky_slope = config.leaky_slope;
  m.coupling = Coupling::make(config.kappa, 2, config.latent_dim);
  m.sigma_xz = config.sigma_xz;

  int fan_in = input_dim;
  for (std::size_t i = 0; i < m.hidden.size(); ++i) {
    add_layer(m, "enc.hidden." + std::to_string(i), fan_in, m.hidden[i], true, rng);
    fan_in = m.hidden[i];
  }
  add_layer(m, "enc.mu", fan_in, m.latent_dim, false, rng);
  add_layer(m, "enc.logvar", fan_in, m.latent_dim, false, rng);
  fan_in = m.latent_dim;
  const std::vector<int> dec = decoder_hidden(m);
  for (std::size_t i = 0; i < dec.size(); ++i) {
    add_layer(m, "dec.hidden." + std::to_string(i), fan_in, dec[i], true, rng);
    fan_in = dec[i];
  }
  add_layer(m, "dec.out", fan_in, input_dim, false, rng);
  return m;
}

Posterior encode(const CvaeModel& model, const Eigen::MatrixXd& x) {
  require_input(model, x);
  Tape tape;
  const auto p = bind(tape, model, false);
  const Encoded e = encoder_graph(model, p, tape.constant(to_tensor(x)));
  Posterior out;
  out.mu = to_matrix(e.mu.value());
  out.sigma = (0.5 * to_matrix(e.logvar.value()).array()).exp().matrix();
  return out;
}

Eigen::MatrixXd decode(const CvaeModel& model, const Eigen::MatrixXd& z) {
  if (z.cols() != model.latent_dim) throw ContractError("decode: latent width mismatch");
  Tape tape;
  const auto p = bind(tape, model, false);
  return to_matrix(decoder_graph(model, p, tape.constant(to_tensor(z))).value());
}

Eigen::MatrixXd reconstruct(const CvaeModel& model, const Eigen::MatrixXd& x) {
  return decode(model, encode(model, x).mu);
}

std::vector<Eigen::MatrixXd> draw_latent_noise(std::size_t batch, int latent_dim, double kappa, int samples,
                                               Rng& rng, LatentSampling mode) {
  const double k = mode == LatentSampling::kEscort ? kappa / (1.0 + 2.0 * kappa) : kappa;
  const CoupledGaussian unit(Eigen::VectorXd::Zero(latent_dim), Eigen::MatrixXd::Identity(latent_dim, latent_dim), k);
  std::vector<Eigen::MatrixXd> out;
  out.reserve(samples);
  for (int s = 0; s < samples; ++s) out.push_back(cg_sample(unit, rng, batch));
  return out;
}

std::vector<Eigen::MatrixXd> sample_latent(const Eigen::MatrixXd& mu, const Eigen::MatrixXd& sigma, double kappa,
                                           Rng& rng, int samples, LatentSampling mode) {
  if (mu.rows() != sigma.rows() || mu.cols() != sigma.cols()) throw ContractError("sample_latent: shape mismatch");
  if (!(kappa >= 0.0)) throw DomainError("sample_latent: kappa must be >= 0");
  const double shrink = mode == LatentSampling::kEscort ? 1.0 / std::sqrt(1.0 + 2.0 * kappa) : 1.0;
  auto noise = draw_latent_noise(mu.rows(), static_cast<int>(mu.cols()), kappa, samples, rng, mode);
  for (auto& eps : noise) eps = mu + (shrink * sigma.array() * eps.array()).matrix();
  return noise;
}

double reconstruction_norm_term(const CvaeModel& model, const TrainConfig& config) {
  if (config.a_xz_override) return *config.a_xz_override;
  const int d = model.input_dim;
  const double log_z =
      cg_log_normalizer(d * std::log(model.sigma_xz * model.sigma_xz), model.coupling.kappa, d);
  return norm_term(std::exp(log_z), Coupling{model.coupling.kappa, 2, d}).value;
}

LossEvaluation cfe_loss_with_noise(const CvaeModel& model, const Eigen::MatrixXd& x,
                                   const std::vector<Eigen::MatrixXd>& noise, const TrainConfig& config,
                                   bool with_gradients, int divergence_sign, LatentSampling mode) {
  require_input(model, x);
  if (noise.empty()) throw ContractError("cfe_loss: no latent noise");
  const double k = model.coupling.kappa;
  const int d = model.latent_dim;
  const double a = reconstruction_norm_term(model, config);
  const double inv_var = 1.0 / (model.sigma_xz * model.sigma_xz);
  const double shrink = mode == LatentSampling::kEscort ? 1.0 / std::sqrt(1.0 + 2.0 * k) : 1.0;

  Tape tape;
  const auto p = bind(tape, model, with_gradients);
  const Var xv = tape.constant(to_tensor(x));
  const Encoded e = encoder_graph(model, p, xv);
  const Var sigma = ad::exp(ad::scale(e.logvar, 0.5));
  const Var step = ad::scale(sigma, shrink);

  // divergence bookkeeping for k > 0
  const double log_z0 = k > 0.0 ? cg_log_normalizer(0.0, k, d) : 0.0;
  const double c2 = 2.0 / (1.0 + d * k);
  std::optional<Var> log_z_q;
  if (k > 0.0) log_z_q = ad::add_scalar(ad::scale(ad::row_sum(e.logvar), 0.5), log_z0);

  std::optional<Var> rec_acc, div_acc;
  for (const auto& eps : noise) {
    if (eps.rows() != x.rows() || eps.cols() != d) throw ContractError("cfe_loss: noise shape mismatch");
    const Var z = ad::add(e.mu, ad::mul(step, tape.constant(to_tensor(eps))));
    const Var xhat = decoder_graph(model, p, z);
    const Var delta = ad::scale(ad::row_sum(ad::square(ad::sub(xv, xhat))), inv_var);
    const Var rec = ad::scale(ad::add_scalar(ad::scale(delta, 1.0 + k * a), a), 0.5);
    rec_acc = rec_acc ? ad::add(*rec_acc, rec) : rec;
    if (k > 0.0) {
      const Var m_q = ad::row_sum(ad::square(ad::div(ad::sub(z, e.mu), sigma)));
      const Var m_p = ad::row_sum(ad::square(z));
      const Var u_q = ad::add(ad::scale(ad::log1p(ad::scale(m_q, k)), 1.0 / k), ad::scale(*log_z_q, c2));
      const Var u_p = ad::add_scalar(ad::scale(ad::log1p(ad::scale(m_p, k)), 1.0 / k), c2 * log_z0);
      const Var div = ad::scale(ad::sub(ad::coupled_log_exp(u_p, k), ad::coupled_log_exp(u_q, k)), 0.5);
      div_acc = div_acc ? ad::add(*div_acc, div) : div;
    }
  }
  const double inv_s = 1.0 / static_cast<double>(noise.size());
  const Var rec = ad::scale(*rec_acc, inv_s);
  Var div = k > 0.0 ? ad::scale(*div_acc, inv_s)
                    : ad::scale(ad::row_sum(ad::add_scalar(
                                    ad::sub(ad::add(ad::exp(e.logvar), ad::square(e.mu)), e.logvar), -1.0)),
                                0.5);
  const Var total = ad::mean(ad::add(ad::scale(div, divergence_sign), rec));
  const Var div_mean = ad::mean(div);
  const Var rec_mean = ad::mean(rec);

  LossEvaluation out;
  out.terms = cfe_total(divergence_sign * div_mean.value().item(), rec_mean.value().item());
  out.terms.total = total.value().item();
  if (const auto bad = tape.first_non_finite()) {
    std::ostringstream msg;
    msg << "first non-finite value at node " << bad->id << " (" << ad::op_name(bad->op) << ")";
    out.non_finite = msg.str();
    return out;
  }
  if (with_gradients) {
    tape.backward(total);
    out.gradients.reserve(p.size());
    for (const Var& v : p) out.gradients.push_back(tape.grad(v));
  }
  return out;
}

CfeTerms cfe_loss(const CvaeModel& model, const Eigen::MatrixXd& x, Rng& rng, const TrainConfig& config) {
  const auto noise = draw_latent_noise(x.rows(), model.latent_dim, model.coupling.kappa, config.mc_samples, rng);
  return cfe_loss_with_noise(model, x, noise, config, false).terms;
}

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(std::vector<NamedTensor>& params, const std::vector<ad::Tensor>& grads) {
  if (params.size() != grads.size()) throw ContractError("Adam::step: gradient count mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].value.data();
    const auto& g = grads[i].data();
    if (g.size() != w.size()) throw ContractError("Adam::step: gradient shape mismatch for " + params[i].name);
    for (std::size_t j = 0; j < w.size(); ++j) {
      m_[i][j] = b1_ * m_[i][j] + (1.0 - b1_) * g[j];
      v_[i][j] = b2_ * v_[i][j] + (1.0 - b2_) * g[j] * g[j];
      w[j] -= lr_ * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
    }
  }
}

double global_norm(const std::vector<ad::Tensor>& grads) {
  double s = 0.0;
  for (const auto& g : grads)
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

double clip_global_norm(std::vector<ad::Tensor>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g.data()) v *= f;
  }
  return norm;
}

namespace {

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& x, const std::vector<std::size_t>& idx, std::size_t begin,
                            std::size_t end) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(end - begin), x.cols());
  for (std::size_t i = begin; i < end; ++i) out.row(static_cast<Eigen::Index>(i - begin)) = x.row(idx[i]);
  return out;
}

struct Running {
  double total = 0.0, total_sq = 0.0, div = 0.0, rec = 0.0;
  std::size_t n = 0;
  void add(const CfeTerms& t) {
    total += t.total;
    total_sq += t.total * t.total;
    div += t.divergence;
    rec += t.reconstruction;
    ++n;
  }
  BatchStats stats() const {
    BatchStats s;
    if (n == 0) return s;
    const double nn = static_cast<double>(n);
    s.mean = cfe_total(div / nn, rec / nn);
    s.mean.total = total / nn;
    s.total_std = std::sqrt(std::max(0.0, total_sq / nn - s.mean.total * s.mean.total));
    return s;
  }
};

}  // namespace

BatchStats evaluate_cfe(const CvaeModel& model, const Eigen::MatrixXd& x, const TrainConfig& config, Rng& rng,
                        LatentSampling mode, int divergence_sign) {
  Running run;
  const std::size_t n = static_cast<std::size_t>(x.rows());
  const std::size_t b = static_cast<std::size_t>(config.batch_size);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t start = 0; start < n; start += b) {
    const std::size_t end = std::min(n, start + b);
    const Eigen::MatrixXd xb = gather_rows(x, idx, start, end);
    const auto noise =
        draw_latent_noise(xb.rows(), model.latent_dim, model.coupling.kappa, config.mc_samples, rng, mode);
    run.add(cfe_loss_with_noise(model, xb, noise, config, false, divergence_sign, mode).terms);
  }
  return run.stats();
}

TrainResult train(CvaeModel& model, const Eigen::MatrixXd& train_x, const Eigen::MatrixXd& val_x,
                  const TrainConfig& config, const EpochSink& sink) {
  config.validate();
  if (train_x.rows() == 0) throw ContractError("train: empty training set");
  require_input(model, train_x);
  TrainResult result;
  result.divergence_sign = pin_divergence_sign().sign;

  Rng rng(derive_seed(config.seed, 1));
  Adam adam(config.learning_rate);
  const std::size_t n = static_cast<std::size_t>(train_x.rows());
  const std::size_t b = static_cast<std::size_t>(config.batch_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    Running run;
    for (std::size_t start = 0; start < n; start += b) {
      const std::size_t end = std::min(n, start + b);
      const Eigen::MatrixXd xb = gather_rows(train_x, order, start, end);
      const auto noise =
          draw_latent_noise(xb.rows(), model.latent_dim, model.coupling.kappa, config.mc_samples, rng);
      LossEvaluation ev = cfe_loss_with_noise(model, xb, noise, config, true, result.divergence_sign);
      if (ev.non_finite || !std::isfinite(ev.terms.total)) {
        result.aborted = true;
        std::ostringstream msg;
        msg << "epoch " << epoch << ", step " << adam.steps() + 1 << ": "
            << ev.non_finite.value_or("non-finite loss");
        result.diagnostic = msg.str();
        return result;
      }
      const double norm = clip_global_norm(ev.gradients, config.grad_clip_norm);
      if (!std::isfinite(norm)) {
        result.aborted = true;
        result.diagnostic = "epoch " + std::to_string(epoch) + ": non-finite gradient norm";
        return result;
      }
      rec.max_grad_norm = std::max(rec.max_grad_norm, norm);
      rec.max_clipped_norm = std::max(rec.max_clipped_norm, global_norm(ev.gradients));
      adam.step(model.params, ev.gradients);
      run.add(ev.terms);
    }
    const BatchStats tr = run.stats();
    rec.train_total = tr.mean.total;
    rec.train_total_std = tr.total_std;
    rec.train_divergence = tr.mean.divergence;
    rec.train_reconstruction = tr.mean.reconstruction;
    if (val_x.rows() > 0) {
      Rng val_rng(derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
      const BatchStats va = evaluate_cfe(model, val_x, config, val_rng, config.val_sampling, result.divergence_sign);
      rec.val_total = va.mean.total;
      rec.val_total_std = va.total_std;
      rec.val_divergence = va.mean.divergence;
      rec.val_reconstruction = va.mean.reconstruction;
    }
    rec.steps = adam.steps();
    result.epochs.push_back(rec);
    if (sink) sink(rec);
  }
  return result;
}

// checkpoint ----------------------------------------------------------------

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_f64(std::vector<unsigned char>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : b_(b) {}
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw FormatError("checkpoint: truncated payload at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<unsigned char>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> checkpoint_bytes(const CvaeModel& model) {
  std::vector<unsigned char> out{'C', 'V', 'A', 'E'};
  put_u32(out, kCheckpointVersion);
  put_f64(out, model.coupling.kappa);
  put_u32(out, static_cast<std::uint32_t>(model.coupling.alpha));
  put_u32(out, static_cast<std::uint32_t>(model.coupling.dim));
  put_u32(out, static_cast<std::uint32_t>(model.params.size() + 1));
  auto put_tensor = [&](const std::string& name, const Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) put_f64(out, v);
  };
  for (const auto& p : model.params) put_tensor(p.name, p.value);
  put_tensor("sigma_xz", Tensor::scalar(model.sigma_xz));
  return out;
}

CvaeModel checkpoint_parse(const std::vector<unsigned char>& bytes) {
  Reader in(bytes);
  if (in.bytes(4) != "CVAE") throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const double kappa = in.f64();
  const std::uint32_t alpha = in.u32();
  const std::uint32_t dim = in.u32();
  const std::uint32_t count = in.u32();
  CvaeModel m;
  m.coupling = Coupling{kappa, static_cast<int>(alpha), static_cast<int>(dim)};
  if (!m.coupling.valid() || alpha != 2) throw FormatError("checkpoint: invalid coupling");
  bool have_sigma = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = in.u32();
    if (name_len > 4096) throw FormatError("checkpoint: implausible name length");
    std::string name = in.bytes(name_len);
    const std::uint32_t rank = in.u32();
    if (rank > 2) throw FormatError("checkpoint: tensor rank above 2");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = in.u32();
      n *= d;
    }
    in.need(n * 8);
    std::vector<double> data(n);
    for (double& v : data) v = in.f64();
    Tensor t(std::move(shape), std::move(data));
    if (name == "sigma_xz") {
      m.sigma_xz = t.item();
      have_sigma = true;
    } else {
      m.params.push_back({std::move(name), std::move(t)});
    }
  }
  if (!in.done()) throw FormatError("checkpoint: trailing bytes");
  if (!have_sigma) throw FormatError("checkpoint: missing sigma_xz");

  // architecture from the tensor names and shapes
  std::size_t h = 0;
  while (h < m.params.size() && m.params[h].name.rfind("enc.hidden.", 0) == 0) ++h;
  if (h % 2 != 0) throw FormatError("checkpoint: unpaired encoder layer");
  h /= 2;
  if (m.params.size() != 4 * h + 6) throw FormatError("checkpoint: unexpected tensor count");
  if (m.params[0].value.rank() != 2) throw FormatError("checkpoint: bad first layer");
  const Layout probe = [&] {
    CvaeModel tmp;
    tmp.hidden.resize(h);
    return layout_of(tmp);
  }();
  m.input_dim = static_cast<int>(m.params[h > 0 ? 0 : probe.enc_mu].value.rows());
  m.latent_dim = static_cast<int>(m.params[probe.enc_mu].value.cols());
  for (std::size_t i = 0; i < h; ++i) m.hidden.push_back(static_cast<int>(m.params[2 * i].value.cols()));
  if (m.latent_dim != static_cast<int>(dim)) throw FormatError("checkpoint: latent dimension mismatch");

  // every tensor where the architecture expects it
  Rng rng(0);
  TrainConfig shape_cfg;
  shape_cfg.latent_dim = m.latent_dim;
  shape_cfg.hidden = m.hidden;
  const CvaeModel expected = make_cvae(m.input_dim, shape_cfg, rng);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    if (m.params[i].name != expected.params[i].name || m.params[i].value.shape() != expected.params[i].value.shape()) {
      throw FormatError("checkpoint: unexpected tensor " + m.params[i].name + " " +
                        ad::shape_string(m.params[i].value.shape()));
    }
  }
  return m;
}

void checkpoint_save(const CvaeModel& model, const std::string& path) {
  const auto bytes = checkpoint_bytes(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint_save: cannot open " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("checkpoint_save: write failed for " + path);
}

CvaeModel checkpoint_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint_load: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return checkpoint_parse(bytes);
}

}  // namespace coupled
