#include "coupledgeom/conformance.hpp"

#include <boost/math/quadrature/sinh_sinh.hpp>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>

#include "coupledgeom/autodiff.hpp"
#include "coupledgeom/cvae.hpp"
#include "coupledgeom/datasets.hpp"
#include "coupledgeom/distributions.hpp"
#include "coupledgeom/errors.hpp"
#include "coupledgeom/info_geometry.hpp"
#include "coupledgeom/info_measures.hpp"
#include "coupledgeom/metrics.hpp"

namespace coupled {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Collector {
  ConformanceReport& report;
  std::string module;

  // pass iff measured <= tolerance
  void bound(const std::string& name, double measured, double tolerance, std::string detail = {}) {
    report.oracles.push_back({module, name, std::isfinite(measured) && measured <= tolerance, true, measured,
                              tolerance, std::move(detail)});
  }
  void flag(const std::string& name, bool ok, std::string detail = {}) {
    report.oracles.push_back({module, name, ok, true, ok ? 0.0 : 1.0, 0.0, std::move(detail)});
  }
  // Runs `body`; an exception marks the oracle failed with its message.
  void guard(const std::string& name, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      report.oracles.push_back({module, name, false, true, NAN, 0.0, std::string("threw: ") + e.what()});
    }
  }
};

MatrixXd random_spd(Rng& rng, int d, double ridge = 0.5) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixXd a(d, d);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
  return a * a.transpose() / d + ridge * MatrixXd::Identity(d, d);
}

std::string kappa_tag(double k) {
  std::ostringstream s;
  s << "kappa=" << k;
  return s.str();
}

// algebra ---------------------------------------------------------------------

void algebra_oracles(ConformanceReport& r, const ConformanceOptions& o) {
  Collector c{r, "coupled_algebra"};
  Rng rng(o.seed);
  std::uniform_real_distribution<double> kd(-0.5, 10.0), xd(0.0, 1e6), ud(-10.0, 10.0);
  double round_trip = 0.0, homomorphism = 0.0, continuity = 0.0;
  for (std::size_t i = 0; i < o.sweep_points; ++i) {
    const double k = kd(rng), x = xd(rng);
    if (x > 0.0) round_trip = std::max(round_trip, std::abs(coupled_exp(coupled_log(x, k), k) / x - 1.0));
    const double a = 0.2 * ud(rng), b = 0.2 * ud(rng);
    if (coupled_exp_in_domain(a, k) && coupled_exp_in_domain(b, k))
      homomorphism = std::max(homomorphism, std::abs(coupled_exp(a, k) * coupled_exp(b, k) /
                                                         coupled_exp(coupled_sum(a, b, k), k) -
                                                     1.0));
    const double u = ud(rng);
    continuity = std::max(continuity, std::abs(coupled_exp(u, 1e-9) / std::exp(u) - 1.0));
    continuity = std::max(continuity, std::abs(coupled_log(x + 1e-3, 1e-9) - std::log(x + 1e-3)));
  }
  c.bound("round_trip", round_trip, 1e-12, "max |exp_k(ln_k x)/x - 1|");
  c.bound("homomorphism", homomorphism, 1e-12, "max relative |exp_k(a) exp_k(b) - exp_k(a (+) b)|");
  c.bound("kappa_to_zero", continuity, 1e-6, "k = 1e-9 against exp / log");
}

// distributions ---------------------------------------------------------------

double unnormalized_1d(double s, double k, double x) {
  const double delta = x * x / s;
  return k == 0.0 ? std::exp(-0.5 * delta) : std::pow(1.0 + k * delta, -(1.0 + k) / (2.0 * k));
}

void distribution_oracles(ConformanceReport& r, const ConformanceOptions& o) {
  Collector c{r, "distributions"};
  const QuadratureOptions tight{1e-11, 15};
  for (double k : {0.0, 0.1, 1.0 / 3.0, 1.0, 2.0}) {
    c.guard("normalization_1d " + kappa_tag(k), [&] {
      const CoupledGaussian g(VectorXd::Constant(1, 0.3), MatrixXd::Constant(1, 1, 1.7), k);
      const double mass =
          integrate_real_line([&](double x) { return std::exp(cg_log_density(g, VectorXd::Constant(1, x))); },
                              0.3, 1.0, tight)
              .value;
      c.bound("normalization_1d " + kappa_tag(k), std::abs(mass - 1.0), 1e-5);
      boost::math::quadrature::sinh_sinh<double> ss;
      const double z = ss.integrate([&](double x) { return unnormalized_1d(1.7, k, x); }, 1e-12);
      c.bound("normalizer_1d " + kappa_tag(k), std::abs(cg_normalizer(g.scale(), g.coupling()) / z - 1.0), 1e-6,
              "closed form vs double-exponential quadrature");
    });
    c.guard("normalization_2d " + kappa_tag(k), [&] {
      MatrixXd s(2, 2);
      s << 1.5, 0.4, 0.4, 0.8;
      const CoupledGaussian g(VectorXd::Zero(2), s, k);
      const QuadratureOptions opts{1e-10, 15};
      const MatrixXd inv = s.inverse();
      double mass = 0.0, z = 0.0;
      for (int pass = 0; pass < 2; ++pass) {
        auto outer = [&](double x0) {
          auto inner = [&](double x1) {
            const Eigen::Vector2d x(x0, x1);
            if (pass == 0) return std::exp(cg_log_density(g, x));
            const double delta = x.dot(inv * x);
            return k == 0.0 ? std::exp(-0.5 * delta) : std::pow(1.0 + k * delta, -(1.0 + 2.0 * k) / (2.0 * k));
          };
          return integrate_real_line(inner, 0.0, 1.0, opts).value;
        };
        (pass == 0 ? mass : z) = integrate_real_line(outer, 0.0, 1.0, opts).value;
      }
      c.bound("normalization_2d " + kappa_tag(k), std::abs(mass - 1.0), 1e-5);
      c.bound("normalizer_2d " + kappa_tag(k), std::abs(cg_normalizer(s, g.coupling()) / z - 1.0), 1e-6);
    });
  }

  c.guard("escort", [&] {
    const MatrixXd one = MatrixXd::Identity(1, 1);
    const double kq1 = escort_transform(CoupledGaussian(VectorXd::Zero(1), one, 1.0)).kappa();
    c.flag("escort_cauchy_kappa", kq1 == 1.0 / 3.0, "k = 1 gives k_Q = 1/3 exactly");
    const double kq5 = escort_transform(CoupledGaussian(VectorXd::Zero(1), one, 1e5)).kappa();
    c.bound("escort_extreme_kappa", std::abs(kq5 - 0.5), 1e-5, "k = 1e5, k_Q against 1/2");
    Rng rng(o.seed + 1);
    std::normal_distribution<double> n(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const int d = 1 + trial % 4;
      const double k = 0.05 + trial * 0.9;
      const CoupledGaussian q(VectorXd::Constant(d, 0.2), random_spd(rng, d), k);
      const CoupledGaussian big_q = escort_transform(q);
      const double power = escort_power(q.coupling(), 2.0);
      double first = 0.0;
      for (int i = 0; i < 100; ++i) {
        VectorXd x(d);
        for (int j = 0; j < d; ++j) x(j) = 3.0 * n(rng);
        const double log_ratio = power * cg_log_density(q, x) - cg_log_density(big_q, x);
        if (i == 0) first = log_ratio;
        worst = std::max(worst, std::abs(std::expm1(log_ratio - first)));
      }
    }
    c.bound("escort_density_ratio", worst, 1e-10, "p^q / Q constant over 1000 points");
  });

  c.guard("cauchy_moments", [&] {
    const CoupledGaussian cauchy(VectorXd::Zero(1), MatrixXd::Identity(1, 1), 1.0);
    c.bound("cauchy_coupled_mean", std::abs(coupled_moment(cauchy, 1, MomentMethod::kQuadrature).mean), 1e-8);
    boost::math::quadrature::sinh_sinh<double> ss;
    const double oracle =
        ss.integrate([](double x) { return x * x * 2.0 / std::numbers::pi / std::pow(1 + x * x, 2); });
    c.bound("cauchy_coupled_second_moment",
            std::abs(coupled_moment(cauchy, 2, MomentMethod::kQuadrature).mean - oracle), 1e-6);
  });
}

// geometry --------------------------------------------------------------------

void geometry_oracles(ConformanceReport& r, const ConformanceOptions& o) {
  Collector c{r, "info_geometry"};
  c.guard("fisher_exponential_limit", [&] {
    const double g = fisher_metric(gpd_model(2.0, 1e-8))(0, 0);
    c.bound("fisher_exponential_limit", std::abs(g / 0.25 - 1.0), 0.01, "GPD, theta = 2, k = 1e-8: 1/theta^2");
  });
  for (double k : {0.1, 0.5, 1.0}) {
    c.guard("lemma_vs_derivative " + kappa_tag(k), [&] {
      const ExpFamilyModel m = gpd_model(1.0, k);
      const auto d = geometry_quadrature(m, {ExpectationMeasure::kEscort, GeometryRoute::kDerivative});
      const auto l = geometry_quadrature(m, {ExpectationMeasure::kEscort, GeometryRoute::kLemma});
      c.bound("lemma_vs_derivative_quadrature_g " + kappa_tag(k), std::abs(d.g(0, 0) - l.g(0, 0)), 1e-6);
      c.bound("lemma_vs_derivative_quadrature_gamma " + kappa_tag(k),
              std::abs(d.gamma(0, 0, 0) - l.gamma(0, 0, 0)), 1e-6);
      Rng ra(o.seed + 7), rb(o.seed + 7);
      const auto dm = geometry_mc(m, ra, o.mc_samples, {ExpectationMeasure::kEscort, GeometryRoute::kDerivative});
      const auto lm = geometry_mc(m, rb, o.mc_samples, {ExpectationMeasure::kEscort, GeometryRoute::kLemma});
      const double sg = dm.mc_stderr_g(0, 0), sgam = dm.mc_stderr_gamma(0, 0, 0);
      c.bound("lemma_vs_derivative_mc_g " + kappa_tag(k), std::abs(dm.g(0, 0) - lm.g(0, 0)), 3 * sg + 1e-12);
      c.bound("lemma_vs_derivative_mc_gamma " + kappa_tag(k), std::abs(dm.gamma(0, 0, 0) - lm.gamma(0, 0, 0)),
              3 * sgam + 1e-12);
      c.bound("mc_vs_quadrature_g " + kappa_tag(k), std::abs(dm.g(0, 0) - d.g(0, 0)), 3 * sg);
      c.bound("mc_vs_quadrature_gamma " + kappa_tag(k), std::abs(dm.gamma(0, 0, 0) - d.gamma(0, 0, 0)), 3 * sgam);
    });
  }
}

// information measures --------------------------------------------------------

void measure_oracles(ConformanceReport& r, const ConformanceOptions& o) {
  Collector c{r, "info_measures"};
  c.guard("closed_form_kl", [&] {
    Rng rng(o.seed + 2);
    std::uniform_real_distribution<double> u(-1.0, 1.0), v(0.1, 3.0);
    std::uniform_int_distribution<int> dd(1, 10);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      const int d = dd(rng);
      VectorXd mq(d), mp(d), sq(d), sp(d);
      for (int i = 0; i < d; ++i) {
        mq(i) = u(rng);
        mp(i) = u(rng);
        sq(i) = v(rng);
        sp(i) = v(rng);
      }
      double kl = 0.0;
      for (int i = 0; i < d; ++i)
        kl += 0.5 * (sq(i) / sp(i) + (mq(i) - mp(i)) * (mq(i) - mp(i)) / sp(i) - 1.0 + std::log(sp(i) / sq(i)));
      const double closed = cfe_divergence_closed(CoupledGaussian::diagonal(mq, sq, 0.0),
                                                  CoupledGaussian::diagonal(mp, sp, 0.0));
      worst = std::max(worst, std::abs(closed - kl));
    }
    c.bound("closed_form_kl", worst, 1e-10, "k = 0, 100 diagonal pairs, d <= 10");
  });
  c.guard("shannon_limit", [&] {
    Rng rng(o.seed + 3);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
      std::vector<double> p(2 + t % 7);
      double s = 0.0;
      for (double& x : p) s += (x = u(rng));
      double h = 0.0;
      for (double& x : p) {
        x /= s;
        h -= x * std::log(x);
      }
      worst = std::max(worst, std::abs(coupled_entropy(DiscreteDistribution(p), Coupling{0.0, 1, 1}) - h));
    }
    c.bound("shannon_limit", worst, 1e-12);
  });
  c.guard("divergence_sign", [&] {
    const auto pin = pin_divergence_sign(o.seed);
    c.flag("divergence_sign", pin.sign == 1, "expectation form is +KL at k = 0");
  });
  for (double k : {0.1, 1.0}) {
    c.guard("cfe_gap " + kappa_tag(k), [&] {
      CfeGap gap = cfe_gap(k, o.seed + 11, o.mc_samples);
      c.bound("cfe_gap_stderr " + kappa_tag(k), gap.mc_stderr / std::abs(gap.mc), 0.01,
              "MC standard error relative to |MC|");
      r.cfe_gaps.push_back(std::move(gap));
    });
  }
  for (double k : {0.5, 1.0}) {
    for (const std::vector<double>& p : {std::vector<double>{0.5, 0.5}, std::vector<double>{0.7, 0.2, 0.1}}) {
      const DiscreteDistribution dist(p);
      const Coupling cp{k, 1, 1};
      EntropyGap e{k, p, coupled_entropy(dist, cp), coupled_entropy_closed_form(dist, cp), 0.0};
      e.gap = e.closed_form - e.canonical;
      r.entropy_gaps.push_back(e);
    }
  }
}

// autodiff --------------------------------------------------------------------

using ad::Tape;
using ad::Tensor;
using ad::Var;
using Graph = std::function<Var(const std::vector<Var>&)>;

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo, double hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

double weighted(const Graph& f, const std::vector<Tensor>& in, const Tensor& w) {
  Tape t;
  std::vector<Var> v;
  for (const auto& x : in) v.push_back(t.constant(x));
  return sum(mul(f(v), t.constant(w))).value().item();
}

double fd_error(const Graph& f, const std::vector<Tensor>& in, Rng& rng) {
  Tensor w;
  {
    Tape probe;
    std::vector<Var> v;
    for (const auto& x : in) v.push_back(probe.constant(x));
    w = random_tensor(f(v).value().shape(), rng, 0.5, 1.5);
  }
  Tape t;
  std::vector<Var> v;
  for (const auto& x : in) v.push_back(t.parameter(x));
  t.backward(sum(mul(f(v), t.constant(w))));
  double worst = 0.0;
  for (std::size_t a = 0; a < in.size(); ++a) {
    const Tensor g = t.grad(v[a]);
    for (std::size_t i = 0; i < in[a].size(); ++i) {
      auto up = in, down = in;
      const double h = 1e-6 * (1.0 + std::abs(in[a][i]));
      up[a][i] += h;
      down[a][i] -= h;
      const double fd = (weighted(f, up, w) - weighted(f, down, w)) / (2 * h);
      worst = std::max(worst, std::abs(g[i] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

void autodiff_oracles(ConformanceReport& r, const ConformanceOptions& o) {
  Collector c{r, "autodiff"};
  Rng rng(o.seed + 4);
  const std::vector<std::size_t> m{3, 4};
  auto any = [&] { return random_tensor(m, rng, -2.0, 2.0); };
  auto pos = [&] { return random_tensor(m, rng, 0.2, 3.0); };
  std::vector<std::tuple<std::string, Graph, std::vector<Tensor>>> cases{
      {"add", [](auto& v) { return add(v[0], v[1]); }, {any(), any()}},
      {"sub", [](auto& v) { return sub(v[0], v[1]); }, {any(), any()}},
      {"mul", [](auto& v) { return mul(v[0], v[1]); }, {any(), any()}},
      {"div", [](auto& v) { return div(v[0], v[1]); }, {any(), pos()}},
      {"matmul", [](auto& v) { return matmul(v[0], v[1]); },
       {random_tensor({3, 4}, rng, -1, 1), random_tensor({4, 2}, rng, -1, 1)}},
      {"affine", [](auto& v) { return affine(v[0], v[1], v[2]); },
       {random_tensor({3, 4}, rng, -1, 1), random_tensor({4, 2}, rng, -1, 1), random_tensor({2}, rng, -1, 1)}},
      {"leaky_relu", [](auto& v) { return leaky_relu(v[0], 0.01); }, {any()}},
      {"sigmoid", [](auto& v) { return sigmoid(v[0]); }, {any()}},
      {"square", [](auto& v) { return square(v[0]); }, {any()}},
      {"sum", [](auto& v) { return sum(v[0]); }, {any()}},
      {"mean", [](auto& v) { return mean(v[0]); }, {any()}},
      {"scale", [](auto& v) { return scale(v[0], -1.7); }, {any()}},
      {"add_scalar", [](auto& v) { return add_scalar(v[0], 0.3); }, {any()}},
      {"sqrt", [](auto& v) { return sqrt(v[0]); }, {pos()}},
      {"clamp_min", [](auto& v) { return clamp_min(v[0], 0.1); }, {any()}},
      {"exp", [](auto& v) { return exp(v[0]); }, {any()}},
      {"log", [](auto& v) { return log(v[0]); }, {pos()}},
      {"log1p", [](auto& v) { return log1p(v[0]); }, {pos()}},
      {"row_sum", [](auto& v) { return row_sum(v[0]); }, {any()}},
  };
  for (double k : {0.0, 1.0}) {
    cases.emplace_back("coupled_log_p " + kappa_tag(k), [k](auto& v) { return coupled_log_p(v[0], k); },
                       std::vector<Tensor>{pos()});
    cases.emplace_back("coupled_exp_p " + kappa_tag(k), [k](auto& v) { return coupled_exp_p(v[0], k); },
                       std::vector<Tensor>{random_tensor(m, rng, -0.3, 2.0)});
    cases.emplace_back("coupled_log_exp " + kappa_tag(k), [k](auto& v) { return coupled_log_exp(v[0], k); },
                       std::vector<Tensor>{any()});
  }
  for (const auto& [name, f, in] : cases)
    c.guard("fd " + name, [&] { c.bound("fd " + name, fd_error(f, in, rng), 1e-4); });
}

// cvae ------------------------------------------------------------------------

TrainConfig tiny_config(double k) {
  TrainConfig cfg;
  cfg.kappa = k;
  cfg.latent_dim = 2;
  cfg.hidden = {6, 5};
  cfg.batch_size = 8;
  cfg.sigma_xz = 0.6;
  return cfg;
}

void cvae_oracles(ConformanceReport& r, const ConformanceOptions& o) {
  Collector c{r, "cvae"};
  c.guard("kappa0_negative_elbo", [&] {
    Rng rng(o.seed + 5);
    TrainConfig cfg = tiny_config(0.0);
    cfg.mc_samples = 2;
    const CvaeModel m = make_cvae(4, cfg, rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MatrixXd x(6, 4);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
    const auto noise = draw_latent_noise(6, 2, 0.0, 2, rng);
    const CfeTerms terms = cfe_loss_with_noise(m, x, noise, cfg, false).terms;
    const Posterior post = encode(m, x);
    double kl = 0.0, rec = 0.0;
    for (int i = 0; i < post.mu.size(); ++i) {
      const double s2 = post.sigma.data()[i] * post.sigma.data()[i], mu = post.mu.data()[i];
      kl += 0.5 * (s2 + mu * mu - 1.0 - std::log(s2));
    }
    for (const auto& eps : noise) {
      const MatrixXd z = post.mu + (post.sigma.array() * eps.array()).matrix();
      rec += 0.5 * (x - decode(m, z)).squaredNorm() / (cfg.sigma_xz * cfg.sigma_xz);
    }
    const double elbo = kl / 6 + rec / 12;
    c.bound("kappa0_negative_elbo", std::abs(terms.total - elbo), 1e-10, "shared noise, A override 0");
  });
  for (double k : {0.0, 1.0}) {
    c.guard("loss_gradient " + kappa_tag(k), [&] {
      Rng rng(o.seed + 6);
      const TrainConfig cfg = tiny_config(k);
      CvaeModel m = make_cvae(3, cfg, rng);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      MatrixXd x(3, 3);
      for (int i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
      const auto noise = draw_latent_noise(3, 2, k, 1, rng);
      const LossEvaluation ev = cfe_loss_with_noise(m, x, noise, cfg, true);
      double worst = 0.0;
      for (std::size_t p = 0; p < m.params.size(); ++p)
        for (std::size_t i = 0; i < m.params[p].value.size(); ++i) {
          const double orig = m.params[p].value[i], h = 1e-6 * (1.0 + std::abs(orig));
          m.params[p].value[i] = orig + h;
          const double up = cfe_loss_with_noise(m, x, noise, cfg, false).terms.total;
          m.params[p].value[i] = orig - h;
          const double down = cfe_loss_with_noise(m, x, noise, cfg, false).terms.total;
          m.params[p].value[i] = orig;
          const double fd = (up - down) / (2 * h);
          worst = std::max(worst, std::abs(ev.gradients[p][i] - fd) / std::max(1.0, std::abs(fd)));
        }
      c.bound("loss_gradient " + kappa_tag(k), worst, 1e-4, "every parameter against central differences");
    });
  }
  c.guard("clipped_gradient_norm", [&] {
    Rng rng(o.seed + 8);
    TrainConfig cfg = tiny_config(1.0);
    cfg.epochs = 2;
    cfg.grad_clip_norm = 0.5;
    cfg.learning_rate = 1e-2;
    const Dataset x = generate_mixture(64, 3, MixtureSpec{}, rng);
    CvaeModel m = make_cvae(3, cfg, rng);
    const TrainResult res = train(m, x, Dataset(0, 3), cfg);
    double worst = 0.0;
    for (const auto& e : res.epochs) worst = std::max(worst, e.max_clipped_norm);
    c.bound("clipped_gradient_norm", res.aborted ? NAN : worst, cfg.grad_clip_norm + 1e-9);
  });
}

// harness pieces --------------------------------------------------------------

void metric_oracles(ConformanceReport& r, const ConformanceOptions& o) {
  Collector c{r, "metrics"};
  c.guard("frechet", [&] {
    const VectorXd z = VectorXd::Zero(2);
    const MatrixXd eye = MatrixXd::Identity(2, 2);
    c.bound("frechet_identical", frechet_gaussian(z, eye, z, eye), 1e-12);
    c.bound("frechet_shift", std::abs(frechet_gaussian(VectorXd::Unit(2, 0), eye, z, eye) - 1.0), 1e-12);
    c.bound("frechet_diagonal", std::abs(frechet_gaussian(z, eye, z, 4.0 * eye) - 2.0), 1e-12);
    Rng rng(o.seed + 9);
    std::normal_distribution<double> n(0.0, 1.0);
    double asym = 0.0, route = 0.0;
    for (int t = 0; t < 20; ++t) {
      const int d = 1 + t % 16;
      const MatrixXd a = random_spd(rng, d), b = random_spd(rng, d);
      VectorXd ma(d), mb(d);
      for (int i = 0; i < d; ++i) {
        ma(i) = n(rng);
        mb(i) = n(rng);
      }
      const double f = frechet_gaussian(ma, a, mb, b);
      asym = std::max(asym, std::abs(f - frechet_gaussian(mb, b, ma, a)));
      // tr (A B)^1/2 from the (real, positive) spectrum of the non-symmetric product
      const Eigen::VectorXcd ev = Eigen::EigenSolver<MatrixXd>(a * b, false).eigenvalues();
      double tr = 0.0;
      for (int i = 0; i < d; ++i) tr += std::sqrt(std::max(ev(i).real(), 0.0));
      const double other = (ma - mb).squaredNorm() + a.trace() + b.trace() - 2 * tr;
      route = std::max(route, std::abs(f - other) / std::max(1.0, std::abs(other)));
    }
    c.bound("frechet_symmetry", asym, 1e-9);
    c.bound("frechet_product_spectrum", route, 1e-8, "against eigenvalues of C1 C2");
  });
  Collector dc{r, "datasets"};
  dc.guard("idx_round_trip", [&] {
    const std::vector<unsigned char> px{0, 255, 128, 64};
    const Dataset x = parse_idx_images(idx_image_bytes(px, 1, 2, 2));
    dc.bound("idx_scaling", std::abs(x(0, 2) - 128.0 / 255.0) + std::abs(x(0, 1) - 1.0), 1e-15);
  });
  dc.guard("split_determinism", [&] {
    const auto a = split_indices(1000, 0.7, 0.15, 0.15, o.seed), b = split_indices(1000, 0.7, 0.15, 0.15, o.seed);
    dc.flag("split_determinism",
            a.train == b.train && a.val == b.val && a.test == b.test && a.train.size() == 700 && a.val.size() == 150);
  });
  dc.guard("outlier_count", [&] {
    Rng rng(o.seed);
    const auto out = inject_outliers(Dataset::Constant(1000, 2, 0.5), 0.1, 1.0, rng);
    dc.flag("outlier_count", std::count(out.corrupted.begin(), out.corrupted.end(), true) == 100);
  });
}

}  // namespace

bool ConformanceReport::all_hard_pass() const {
  return std::all_of(oracles.begin(), oracles.end(), [](const OracleResult& o) { return o.pass || !o.hard; });
}

CfeGap cfe_gap(double kappa, std::uint64_t seed, std::size_t n) {
  // Equal scales keep the surprisal difference linear in z, so the sampled
  // estimate has finite variance for every coupling.
  const CoupledGaussian q(VectorXd::Constant(1, 0.3), MatrixXd::Constant(1, 1, 0.05), kappa);
  const CoupledGaussian p(VectorXd::Zero(1), MatrixXd::Constant(1, 1, 0.05), kappa);
  CfeGap gap;
  gap.kappa = kappa;
  Rng rng(seed);
  const McEstimate mc = cfe_divergence_mc(q, p, rng, n);
  gap.mc = mc.mean;
  gap.mc_stderr = mc.std_error;
  gap.closed_coupled_log = cfe_divergence_closed(q, p, NormTermReading::kCoupledLog);
  gap.gap_coupled_log = gap.closed_coupled_log - gap.mc;
  try {
    gap.closed_printed = cfe_divergence_closed(q, p, NormTermReading::kPrinted);
    gap.gap_printed = *gap.closed_printed - gap.mc;
  } catch (const DomainError& e) {
    gap.note = e.what();
  }
  return gap;
}

ConformanceReport run_conformance(const ConformanceOptions& options) {
  ConformanceReport r;
  algebra_oracles(r, options);
  distribution_oracles(r, options);
  measure_oracles(r, options);
  geometry_oracles(r, options);
  autodiff_oracles(r, options);
  cvae_oracles(r, options);
  metric_oracles(r, options);
  return r;
}

}  // namespace coupled
