#include "coupledgeom/harness.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include "json.hpp"
#include <optional>
#include <ostream>
#include <sstream>

#include "coupledgeom/conformance.hpp"
#include "coupledgeom/datasets.hpp"
#include "coupledgeom/errors.hpp"
#include "coupledgeom/metrics.hpp"

namespace coupled {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kSchemaVersion = 1;

// value formatting / parsing ------------------------------------------------

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError("config: " + key + " = '" + value + "' is not " + want);
}

double parse_real(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
    bad_value(key, s, "a finite number");
  return v;
}

long long parse_int(const std::string& key, const std::string& s) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) bad_value(key, s, "an integer");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  bad_value(key, s, "true or false");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<double> parse_real_list(const std::string& key, const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(parse_real(key, item));
  if (out.empty()) bad_value(key, s, "a non-empty list");
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& v, F f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
  return out;
}

// key table -------------------------------------------------------------------

enum class Kind { kText, kInt, kReal, kBool, kList };

struct KeyEntry {
  const char* name;
  const char* help;
  Kind kind;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class M>
KeyEntry real_key(const char* name, const char* help, M member) {
  return {name, help, Kind::kReal, [=](ExperimentConfig& c, const std::string& v) { c.*member = parse_real(name, v); },
          [=](const ExperimentConfig& c) { return format_real(c.*member); }};
}

template <class M>
KeyEntry train_real(const char* name, const char* help, M member) {
  return {name, help, Kind::kReal,
          [=](ExperimentConfig& c, const std::string& v) { c.train.*member = parse_real(name, v); },
          [=](const ExperimentConfig& c) { return format_real(c.train.*member); }};
}

template <class T, class M>
KeyEntry int_key(const char* name, const char* help, M get_member) {
  return {name, help, Kind::kInt,
          [=](ExperimentConfig& c, const std::string& v) {
            const long long x = parse_int(name, v);
            if (x < 0 || static_cast<unsigned long long>(x) > std::numeric_limits<T>::max())
              bad_value(name, v, "a non-negative integer in range");
            get_member(c) = static_cast<T>(x);
          },
          [=](const ExperimentConfig& c) { return std::to_string(get_member(const_cast<ExperimentConfig&>(c))); }};
}

template <class M>
KeyEntry text_key(const char* name, const char* help, M member) {
  return {name, help, Kind::kText, [=](ExperimentConfig& c, const std::string& v) { c.*member = v; },
          [=](const ExperimentConfig& c) { return c.*member; }};
}

const std::vector<KeyEntry>& key_table() {
  static const std::vector<KeyEntry> table = [] {
    using C = ExperimentConfig;
    std::vector<KeyEntry> t;
    t.push_back(text_key("run_id", "label copied into every record", &C::run_id));
    t.push_back({"dataset", "synthetic-mixture | synthetic-heavytail | idx-images | csv-vectors", Kind::kText,
                 [](C& c, const std::string& v) {
                   if (v != "synthetic-mixture" && v != "synthetic-heavytail" && v != "idx-images" &&
                       v != "csv-vectors")
                     bad_value("dataset", v, "a known dataset kind");
                   c.dataset = v;
                 },
                 [](const C& c) { return c.dataset; }});
    t.push_back(text_key("data_path", "input file for idx-images / csv-vectors", &C::data_path));
    t.push_back(int_key<std::size_t>("n_samples", "rows of synthetic data", [](C& c) -> auto& { return c.n_samples; }));
    t.push_back(int_key<int>("data_dim", "width of synthetic data", [](C& c) -> auto& { return c.data_dim; }));
    t.push_back(int_key<int>("mixture_components", "synthetic-mixture component count",
                             [](C& c) -> auto& { return c.mixture_components; }));
    t.push_back(real_key("mixture_sigma", "synthetic-mixture per-coordinate std", &C::mixture_sigma));
    t.push_back(real_key("heavytail_kappa", "coupling of synthetic-heavytail draws", &C::heavytail_kappa));
    t.push_back(real_key("heavytail_scale", "scale of synthetic-heavytail draws", &C::heavytail_scale));
    t.push_back(real_key("split_train", "training fraction", &C::split_train));
    t.push_back(real_key("split_val", "validation fraction", &C::split_val));
    t.push_back(real_key("split_test", "test fraction", &C::split_test));
    t.push_back(real_key("outlier_fraction", "fraction of training rows given Cauchy noise", &C::outlier_fraction));
    t.push_back(real_key("outlier_scale", "scale of the Cauchy noise", &C::outlier_scale));
    t.push_back(train_real("learning_rate", "Adam step size", &TrainConfig::learning_rate));
    t.push_back(int_key<int>("batch_size", "minibatch rows", [](C& c) -> auto& { return c.train.batch_size; }));
    t.push_back(int_key<int>("latent_dim", "latent width", [](C& c) -> auto& { return c.train.latent_dim; }));
    t.push_back({"hidden", "encoder hidden widths, comma separated (decoder mirrors)", Kind::kList,
                 [](C& c, const std::string& v) {
                   std::vector<int> h;
                   for (const auto& item : split_list(v)) {
                     const long long x = parse_int("hidden", item);
                     if (x < 1 || x > 1 << 20) bad_value("hidden", v, "a list of positive widths");
                     h.push_back(static_cast<int>(x));
                   }
                   c.train.hidden = h;
                 },
                 [](const C& c) { return join(c.train.hidden, [](int x) { return std::to_string(x); }); }});
    t.push_back(train_real("leaky_slope", "LeakyReLU negative slope", &TrainConfig::leaky_slope));
    t.push_back(train_real("grad_clip_norm", "global gradient-norm ceiling", &TrainConfig::grad_clip_norm));
    t.push_back(int_key<int>("epochs", "training epochs", [](C& c) -> auto& { return c.train.epochs; }));
    t.push_back(train_real("kappa", "coupling of the latent model", &TrainConfig::kappa));
    t.push_back(int_key<int>("mc_samples", "latent draws per example", [](C& c) -> auto& { return c.train.mc_samples; }));
    t.push_back(int_key<std::uint64_t>("seed", "master seed", [](C& c) -> auto& { return c.train.seed; }));
    t.push_back(train_real("sigma_xz", "decoder noise standard deviation", &TrainConfig::sigma_xz));
    t.push_back({"a_xz", "reconstruction constant: a number, or 'normalizer'", Kind::kText,
                 [](C& c, const std::string& v) {
                   if (v == "normalizer")
                     c.train.a_xz_override.reset();
                   else
                     c.train.a_xz_override = parse_real("a_xz", v);
                 },
                 [](const C& c) {
                   return c.train.a_xz_override ? format_real(*c.train.a_xz_override) : std::string("normalizer");
                 }});
    t.push_back({"sampling", "latent draws from the escort Q or the posterior q", Kind::kText,
                 [](C& c, const std::string& v) {
                   if (v == "Q")
                     c.sampling = LatentSampling::kEscort;
                   else if (v == "q")
                     c.sampling = LatentSampling::kPosterior;
                   else
                     bad_value("sampling", v, "q or Q");
                 },
                 [](const C& c) { return std::string(c.sampling == LatentSampling::kEscort ? "Q" : "q"); }});
    t.push_back(int_key<int>("frechet_pca", "project onto this many principal directions (0: raw)",
                             [](C& c) -> auto& { return c.frechet_pca; }));
    t.push_back(int_key<int>("recon_rows", "test rows written to recon_grid.csv",
                             [](C& c) -> auto& { return c.recon_rows; }));
    t.push_back(int_key<std::size_t>("sample_count", "rows written by sample",
                                     [](C& c) -> auto& { return c.sample_count; }));
    t.push_back(text_key("checkpoint", "model file read by eval / sample", &C::checkpoint));
    t.push_back({"record_wall_time", "store elapsed seconds (breaks bitwise reruns)", Kind::kBool,
                 [](C& c, const std::string& v) { c.record_wall_time = parse_bool("record_wall_time", v); },
                 [](const C& c) { return std::string(c.record_wall_time ? "true" : "false"); }});
    t.push_back({"robustness_kappas", "couplings compared by robustness", Kind::kList,
                 [](C& c, const std::string& v) { c.robustness_kappas = parse_real_list("robustness_kappas", v); },
                 [](const C& c) { return join(c.robustness_kappas, format_real); }});
    t.push_back({"geometry_model", "gpd | bivariate", Kind::kText,
                 [](C& c, const std::string& v) {
                   if (v != "gpd" && v != "bivariate") bad_value("geometry_model", v, "gpd or bivariate");
                   c.geometry_model = v;
                 },
                 [](const C& c) { return c.geometry_model; }});
    t.push_back(real_key("geometry_kappa", "coupling of the geometry model", &C::geometry_kappa));
    t.push_back({"geometry_theta", "grid of (first) natural parameters", Kind::kList,
                 [](C& c, const std::string& v) { c.geometry_theta = parse_real_list("geometry_theta", v); },
                 [](const C& c) { return join(c.geometry_theta, format_real); }});
    t.push_back(real_key("geometry_theta2", "second parameter of the bivariate model", &C::geometry_theta2));
    t.push_back(int_key<std::size_t>("geometry_mc_samples", "0: quadrature, else importance samples",
                                     [](C& c) -> auto& { return c.geometry_mc_samples; }));
    t.push_back({"geometry_route", "derivative | lemma", Kind::kText,
                 [](C& c, const std::string& v) {
                   if (v == "derivative")
                     c.geometry_route = GeometryRoute::kDerivative;
                   else if (v == "lemma")
                     c.geometry_route = GeometryRoute::kLemma;
                   else
                     bad_value("geometry_route", v, "derivative or lemma");
                 },
                 [](const C& c) {
                   return std::string(c.geometry_route == GeometryRoute::kDerivative ? "derivative" : "lemma");
                 }});
    t.push_back({"geometry_measure", "escort | density", Kind::kText,
                 [](C& c, const std::string& v) {
                   if (v == "escort")
                     c.geometry_measure = ExpectationMeasure::kEscort;
                   else if (v == "density")
                     c.geometry_measure = ExpectationMeasure::kDensity;
                   else
                     bad_value("geometry_measure", v, "escort or density");
                 },
                 [](const C& c) {
                   return std::string(c.geometry_measure == ExpectationMeasure::kEscort ? "escort" : "density");
                 }});
    t.push_back(int_key<std::size_t>("check_mc_samples", "sample size of the sampled oracles in check",
                                     [](C& c) -> auto& { return c.check_mc_samples; }));
    return t;
  }();
  return table;
}

const KeyEntry& find_key(const std::string& key) {
  for (const auto& e : key_table())
    if (key == e.name) return e;
  throw ConfigError("config: unknown key '" + key + "'");
}

json typed_value(const KeyEntry& e, const std::string& v) {
  switch (e.kind) {
    case Kind::kInt: return json(std::stoull(v));
    case Kind::kReal: return json(std::stod(v));
    case Kind::kBool: return json(v == "true");
    default: return json(v);
  }
}

json config_json(const ExperimentConfig& c) {
  json j = json::object();
  for (const auto& e : key_table()) j[e.name] = typed_value(e, e.get(c));
  return j;
}

std::string json_scalar_text(const std::string& key, const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) return format_real(v.get<double>());
  throw ConfigError("config: unsupported JSON value for " + key);
}

// records ---------------------------------------------------------------------

// One writer per run; lines are appended whole.
class MetricsAppender {
 public:
  explicit MetricsAppender(const fs::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
  }
  void write(const json& record) {
    std::lock_guard<std::mutex> lock(mutex_);
    out_ << record.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::mutex mutex_;
};

json number_or_null(std::optional<double> v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

struct PhaseMetrics {
  std::optional<CfeTerms> cfe;
  std::optional<double> cfe_a_free;
  std::optional<double> cfe_std;
  std::optional<double> mse_value;
  std::optional<double> frechet;
  std::optional<double> wall_time;
  json extra = json::object();
};

json metrics_record(const ExperimentConfig& c, const std::string& run_id, std::optional<int> epoch,
                    const std::string& phase, double kappa, const PhaseMetrics& m) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["record"] = "metrics";
  j["run_id"] = run_id;
  j["seed"] = c.train.seed;
  j["epoch"] = epoch ? json(*epoch) : json(nullptr);
  j["phase"] = phase;
  j["kappa"] = kappa;
  j["sampling"] = c.sampling == LatentSampling::kEscort ? "Q" : "q";
  j["cfe_total"] = number_or_null(m.cfe ? std::optional(m.cfe->total) : std::nullopt);
  j["cfe_total_a_free"] = number_or_null(m.cfe_a_free);
  j["cfe_divergence"] = number_or_null(m.cfe ? std::optional(m.cfe->divergence) : std::nullopt);
  j["cfe_reconstruction"] = number_or_null(m.cfe ? std::optional(m.cfe->reconstruction) : std::nullopt);
  j["cfe_std_across_batches"] = number_or_null(m.cfe_std);
  j["mse"] = number_or_null(m.mse_value);
  j["psnr"] = number_or_null(m.mse_value ? std::optional(psnr(*m.mse_value)) : std::nullopt);
  j["frechet_gaussian"] = number_or_null(m.frechet);
  j["wall_time_s"] = number_or_null(m.wall_time);
  for (auto it = m.extra.begin(); it != m.extra.end(); ++it) j[it.key()] = it.value();
  return j;
}

// True when a record carries a null where a value was expected.
bool has_non_finite(const PhaseMetrics& m) {
  auto bad = [](std::optional<double> v) { return v && !std::isfinite(*v); };
  return (m.cfe && (!std::isfinite(m.cfe->total) || !std::isfinite(m.cfe->divergence) ||
                    !std::isfinite(m.cfe->reconstruction))) ||
         bad(m.cfe_a_free) || bad(m.cfe_std) || bad(m.mse_value) || bad(m.frechet);
}

json config_record(const std::string& subcommand, const ExperimentConfig& c) {
  return {{"schema_version", kSchemaVersion},
          {"record", "config"},
          {"subcommand", subcommand},
          {"run_id", c.run_id},
          {"seed", c.train.seed},
          {"config", config_json(c)}};
}

// data ------------------------------------------------------------------------

struct Splits {
  Dataset train, val, test;
  std::vector<bool> train_corrupted;
};

Dataset load_dataset(const ExperimentConfig& c) {
  if (c.dataset == "synthetic-mixture") {
    Rng rng(derive_seed(c.train.seed, 5));
    MixtureSpec spec;
    spec.components = c.mixture_components;
    spec.sigma = c.mixture_sigma;
    return generate_mixture(c.n_samples, c.data_dim, spec, rng);
  }
  if (c.dataset == "synthetic-heavytail") {
    Rng rng(derive_seed(c.train.seed, 5));
    return generate_heavytail(c.n_samples, c.data_dim, HeavyTailSpec{c.heavytail_kappa, c.heavytail_scale}, rng);
  }
  if (c.dataset == "idx-images") return load_idx_images(c.data_path);
  return load_csv_vectors(c.data_path);
}

Splits prepare_data(const ExperimentConfig& c) {
  const Dataset all = load_dataset(c);
  const SplitIndices idx =
      split_indices(static_cast<std::size_t>(all.rows()), c.split_train, c.split_val, c.split_test, c.train.seed);
  Splits s{take_rows(all, idx.train), take_rows(all, idx.val), take_rows(all, idx.test),
           std::vector<bool>(idx.train.size(), false)};
  if (c.outlier_fraction > 0.0) {
    Rng rng(derive_seed(c.train.seed, 3));
    CorruptedDataset corrupted = inject_outliers(s.train, c.outlier_fraction, c.outlier_scale, rng);
    s.train = std::move(corrupted.data);
    s.train_corrupted = std::move(corrupted.corrupted);
  }
  if (s.train.rows() == 0) throw ConfigError("config: the training split is empty");
  return s;
}

// model evaluation ------------------------------------------------------------

Eigen::MatrixXd sampled_reconstruction(const CvaeModel& m, const Eigen::MatrixXd& x, LatentSampling mode, Rng& rng) {
  const Posterior post = encode(m, x);
  return decode(m, sample_latent(post.mu, post.sigma, m.kappa(), rng, 1, mode).front());
}

Eigen::MatrixXd generate(const CvaeModel& m, std::size_t n, LatentSampling mode, Rng& rng) {
  const Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), m.latent_dim);
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(n), m.latent_dim);
  return decode(m, sample_latent(zeros, ones, m.kappa(), rng, 1, mode).front());
}

TrainConfig eval_config(const ExperimentConfig& c, const CvaeModel& m) {
  TrainConfig t = c.train;
  t.kappa = m.kappa();
  t.latent_dim = m.latent_dim;
  t.hidden = m.hidden;
  t.leaky_slope = m.leaky_slope;
  t.sigma_xz = m.sigma_xz;
  t.val_sampling = c.sampling;
  return t;
}

double a_free_total(const CfeTerms& t, double a, double kappa) {
  return t.total - t.reconstruction + (t.reconstruction - 0.5 * a) / (1.0 + kappa * a);
}

using Clock = std::chrono::steady_clock;

std::optional<double> elapsed(const ExperimentConfig& c, Clock::time_point since) {
  if (!c.record_wall_time) return std::nullopt;
  return std::chrono::duration<double>(Clock::now() - since).count();
}

// Full evaluation of one split: free energy, reconstruction error, Frechet.
PhaseMetrics evaluate_split(const CvaeModel& m, const Eigen::MatrixXd& x, const ExperimentConfig& c, std::uint64_t stream,
                            int sign, bool with_frechet) {
  PhaseMetrics p;
  if (x.rows() == 0) return p;
  const TrainConfig t = eval_config(c, m);
  Rng cfe_rng(derive_seed(c.train.seed, stream));
  const BatchStats stats = evaluate_cfe(m, x, t, cfe_rng, c.sampling, sign);
  p.cfe = stats.mean;
  p.cfe_std = stats.total_std;
  p.cfe_a_free = a_free_total(stats.mean, reconstruction_norm_term(m, t), m.kappa());
  Rng rec_rng(derive_seed(c.train.seed, stream + 1));
  p.mse_value = mse(x, sampled_reconstruction(m, x, c.sampling, rec_rng));
  if (with_frechet) {
    Rng gen_rng(derive_seed(c.train.seed, stream + 2));
    p.frechet = frechet_between(x, generate(m, static_cast<std::size_t>(x.rows()), c.sampling, gen_rng), c.frechet_pca);
  }
  return p;
}

void write_recon_grid(const fs::path& path, const CvaeModel& m, const Eigen::MatrixXd& x, const ExperimentConfig& c) {
  const Eigen::Index rows = std::min<Eigen::Index>(x.rows(), c.recon_rows);
  const Eigen::MatrixXd orig = x.topRows(rows);
  Rng rng(derive_seed(c.train.seed, 6));
  const Eigen::MatrixXd rec = sampled_reconstruction(m, orig, c.sampling, rng);
  Eigen::MatrixXd grid(rows, 1 + 2 * x.cols());
  std::vector<std::string> header{"row"};
  for (Eigen::Index j = 0; j < x.cols(); ++j) header.push_back("x_" + std::to_string(j));
  for (Eigen::Index j = 0; j < x.cols(); ++j) header.push_back("xhat_" + std::to_string(j));
  for (Eigen::Index i = 0; i < rows; ++i) {
    grid(i, 0) = static_cast<double>(i);
    grid.block(i, 1, 1, x.cols()) = orig.row(i);
    grid.block(i, 1 + x.cols(), 1, x.cols()) = rec.row(i);
  }
  write_csv(path.string(), grid, header);
}

json abort_record(const std::string& run_id, std::optional<int> epoch, const std::string& diagnostic) {
  return {{"schema_version", kSchemaVersion},
          {"record", "abort"},
          {"run_id", run_id},
          {"epoch", epoch ? json(*epoch) : json(nullptr)},
          {"diagnostic", diagnostic}};
}

// subcommands -----------------------------------------------------------------

struct TrainOutcome {
  CvaeModel model;
  bool aborted = false;
  int sign = 1;
};

// Trains one model and streams train / val records; emits a test record
// unless `test_record` is false.
TrainOutcome train_and_record(const ExperimentConfig& c, const Splits& data, MetricsAppender& sink,
                              const std::string& run_id, bool epoch_records, std::ostream& log) {
  Rng init(c.train.seed);
  TrainOutcome out{make_cvae(static_cast<int>(data.train.cols()), c.train, init)};
  TrainConfig t = c.train;
  t.val_sampling = c.sampling;
  Clock::time_point mark = Clock::now();
  const TrainResult res = train(out.model, data.train, data.val, t, [&](const EpochRecord& r) {
    if (!epoch_records) return;
    PhaseMetrics tr;
    tr.cfe = cfe_total(r.train_divergence, r.train_reconstruction);
    tr.cfe->total = r.train_total;
    tr.cfe_std = r.train_total_std;
    const double a = reconstruction_norm_term(out.model, t);
    tr.cfe_a_free = a_free_total(*tr.cfe, a, out.model.kappa());
    Rng rng(derive_seed(c.train.seed, 3000 + static_cast<std::uint64_t>(r.epoch)));
    tr.mse_value = mse(data.train, sampled_reconstruction(out.model, data.train, c.sampling, rng));
    tr.wall_time = elapsed(c, mark);
    tr.extra = {{"grad_norm_max", r.max_grad_norm}, {"clipped_grad_norm_max", r.max_clipped_norm}, {"steps", r.steps}};
    sink.write(metrics_record(c, run_id, r.epoch, "train", out.model.kappa(), tr));
    if (data.val.rows() > 0) {
      PhaseMetrics va;
      va.cfe = cfe_total(r.val_divergence, r.val_reconstruction);
      va.cfe->total = r.val_total;
      va.cfe_std = r.val_total_std;
      va.cfe_a_free = a_free_total(*va.cfe, a, out.model.kappa());
      Rng vr(derive_seed(c.train.seed, 4000 + static_cast<std::uint64_t>(r.epoch)));
      va.mse_value = mse(data.val, sampled_reconstruction(out.model, data.val, c.sampling, vr));
      Rng gr(derive_seed(c.train.seed, 5000 + static_cast<std::uint64_t>(r.epoch)));
      va.frechet = frechet_between(
          data.val, generate(out.model, static_cast<std::size_t>(data.val.rows()), c.sampling, gr), c.frechet_pca);
      va.wall_time = elapsed(c, mark);
      sink.write(metrics_record(c, run_id, r.epoch, "val", out.model.kappa(), va));
    }
    log << run_id << " epoch " << r.epoch << ": train CFE " << r.train_total << " (std " << r.train_total_std
        << "), val CFE " << r.val_total << '\n';
    mark = Clock::now();
  });
  out.sign = res.divergence_sign;
  if (res.aborted) {
    out.aborted = true;
    sink.write(abort_record(run_id, static_cast<int>(res.epochs.size()) + 1, res.diagnostic));
    log << run_id << " aborted: " << res.diagnostic << '\n';
  }
  return out;
}

int run_train(const ExperimentConfig& c, const fs::path& out, MetricsAppender& sink, std::ostream& log) {
  const Splits data = prepare_data(c);
  TrainOutcome t = train_and_record(c, data, sink, c.run_id, true, log);
  if (t.aborted) return 1;
  const Clock::time_point start = Clock::now();
  PhaseMetrics test = evaluate_split(t.model, data.test, c, 2000, t.sign, true);
  test.wall_time = elapsed(c, start);
  sink.write(metrics_record(c, c.run_id, c.train.epochs, "test", t.model.kappa(), test));
  checkpoint_save(t.model, (out / "model.ckpt").string());
  if (data.test.rows() > 0) write_recon_grid(out / "recon_grid.csv", t.model, data.test, c);
  if (has_non_finite(test)) {
    sink.write(abort_record(c.run_id, c.train.epochs, "non-finite test metrics"));
    return 1;
  }
  return 0;
}

int run_eval(const ExperimentConfig& c, const fs::path& out, MetricsAppender& sink, std::ostream& log) {
  const CvaeModel m = checkpoint_load(c.checkpoint);
  const Splits data = prepare_data(c);
  if (data.train.cols() != m.input_dim) throw ConfigError("eval: data width does not match the checkpoint");
  const int sign = pin_divergence_sign().sign;
  const Clock::time_point start = Clock::now();
  PhaseMetrics test = evaluate_split(m, data.test, c, 2000, sign, true);
  test.wall_time = elapsed(c, start);
  sink.write(metrics_record(c, c.run_id, std::nullopt, "test", m.kappa(), test));
  if (data.test.rows() > 0) write_recon_grid(out / "recon_grid.csv", m, data.test, c);
  log << "test CFE " << (test.cfe ? test.cfe->total : NAN) << ", MSE " << test.mse_value.value_or(NAN) << '\n';
  if (has_non_finite(test)) {
    sink.write(abort_record(c.run_id, std::nullopt, "non-finite test metrics"));
    return 1;
  }
  return 0;
}

int run_sample(const ExperimentConfig& c, const fs::path& out, std::ostream& log) {
  const CvaeModel m = checkpoint_load(c.checkpoint);
  Rng rng(derive_seed(c.train.seed, 8));
  const Eigen::MatrixXd x = generate(m, c.sample_count, c.sampling, rng);
  std::vector<std::string> header;
  for (int j = 0; j < m.input_dim; ++j) header.push_back("x_" + std::to_string(j));
  write_csv((out / "samples.csv").string(), x, header);
  log << "wrote " << x.rows() << " samples\n";
  return x.allFinite() ? 0 : 1;
}

json oracle_json(const OracleResult& o) {
  return {{"module", o.module},     {"name", o.name},   {"pass", o.pass},
          {"hard", o.hard},         {"measured", number_or_null(o.measured)},
          {"tolerance", o.tolerance}, {"detail", o.detail}};
}

int run_check(const ExperimentConfig& c, const fs::path& out, std::ostream& log) {
  ConformanceOptions opts;
  opts.mc_samples = c.check_mc_samples;
  const ConformanceReport r = run_conformance(opts);
  json j;
  j["schema_version"] = kSchemaVersion;
  j["config"] = config_json(c);
  j["oracles"] = json::array();
  for (const auto& o : r.oracles) j["oracles"].push_back(oracle_json(o));
  j["cfe_gap"] = json::array();
  for (const auto& g : r.cfe_gaps)
    j["cfe_gap"].push_back({{"kappa", g.kappa},
                            {"closed_printed", number_or_null(g.closed_printed)},
                            {"closed_coupled_log", g.closed_coupled_log},
                            {"mc", g.mc},
                            {"mc_stderr", g.mc_stderr},
                            {"mc_samples", c.check_mc_samples},
                            {"gap_printed", number_or_null(g.gap_printed)},
                            {"gap_coupled_log", g.gap_coupled_log},
                            {"note", g.note}});
  j["entropy_gap"] = json::array();
  for (const auto& e : r.entropy_gaps)
    j["entropy_gap"].push_back({{"kappa", e.kappa},
                                {"probs", e.probs},
                                {"canonical", e.canonical},
                                {"closed_form", e.closed_form},
                                {"gap", e.gap}});
  j["all_pass"] = r.all_hard_pass();
  std::ofstream((out / "conformance.json").string()) << j.dump(2) << '\n';
  std::size_t failed = 0;
  for (const auto& o : r.oracles) {
    if (o.pass) continue;
    ++failed;
    log << "FAIL " << o.module << "/" << o.name << ": measured " << o.measured << ", tolerance " << o.tolerance
        << (o.detail.empty() ? "" : " (" + o.detail + ")") << '\n';
  }
  log << r.oracles.size() - failed << "/" << r.oracles.size() << " oracles pass\n";
  for (const auto& g : r.cfe_gaps)
    log << "CFE gap at kappa " << g.kappa << ": MC " << g.mc << " +- " << g.mc_stderr << ", closed (coupled log) "
        << g.closed_coupled_log << '\n';
  return r.all_hard_pass() ? 0 : 1;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json j = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(number_or_null(m(i, k)));
    j.push_back(row);
  }
  return j;
}

json tensor3_json(const Tensor3& t) {
  json j = json::array();
  for (int i = 0; i < t.size(); ++i) {
    json a = json::array();
    for (int k = 0; k < t.size(); ++k) {
      json b = json::array();
      for (int l = 0; l < t.size(); ++l) b.push_back(number_or_null(t(i, k, l)));
      a.push_back(b);
    }
    j.push_back(a);
  }
  return j;
}

int run_geometry(const ExperimentConfig& c, const fs::path& out, std::ostream& log) {
  const GeometryOptions opts{c.geometry_measure, c.geometry_route, {}};
  json points = json::array();
  for (std::size_t i = 0; i < c.geometry_theta.size(); ++i) {
    const double th = c.geometry_theta[i];
    const ExpFamilyModel m = c.geometry_model == "gpd"
                                 ? gpd_model(th, c.geometry_kappa)
                                 : bivariate_exponential_model(th, c.geometry_theta2, c.geometry_kappa);
    GeometryTensors g;
    if (c.geometry_mc_samples == 0) {
      g = geometry_quadrature(m, opts);
    } else {
      Rng rng(derive_seed(c.train.seed, 9000 + i));
      g = geometry_mc(m, rng, c.geometry_mc_samples, opts);
    }
    json theta = json::array();
    for (Eigen::Index k = 0; k < m.theta.size(); ++k) theta.push_back(m.theta(k));
    json lemma = json::array();
    for (Eigen::Index k = 0; k < g.lemma_printed_g.size(); ++k) lemma.push_back(number_or_null(g.lemma_printed_g(k)));
    points.push_back({{"theta", theta},
                      {"g", matrix_json(g.g)},
                      {"gamma", tensor3_json(g.gamma)},
                      {"g_stderr", matrix_json(g.mc_stderr_g)},
                      {"gamma_stderr", tensor3_json(g.mc_stderr_gamma)},
                      {"lemma_printed_g", lemma}});
    log << "theta " << th << ": g(0,0) = " << g.g(0, 0) << ", gamma(0,0,0) = " << g.gamma(0, 0, 0) << '\n';
  }
  const json j = {{"schema_version", kSchemaVersion},
                  {"config", config_json(c)},
                  {"model", c.geometry_model},
                  {"kappa", c.geometry_kappa},
                  {"method", c.geometry_mc_samples == 0 ? "quadrature" : "importance-sampling"},
                  {"points", points}};
  std::ofstream((out / "geometry.json").string()) << j.dump(2) << '\n';
  return 0;
}

int run_robustness(const ExperimentConfig& c, const fs::path& out, MetricsAppender& sink, std::ostream& log) {
  const Splits data = prepare_data(c);
  std::vector<std::size_t> clean_rows, dirty_rows;
  for (std::size_t i = 0; i < data.train_corrupted.size(); ++i)
    (data.train_corrupted[i] ? dirty_rows : clean_rows).push_back(i);
  Eigen::MatrixXd table(static_cast<Eigen::Index>(c.robustness_kappas.size()), 6);
  int code = 0;
  for (std::size_t i = 0; i < c.robustness_kappas.size(); ++i) {
    ExperimentConfig ck = c;
    ck.train.kappa = c.robustness_kappas[i];
    const std::string id = c.run_id + "/kappa=" + format_real(ck.train.kappa);
    TrainOutcome t = train_and_record(ck, data, sink, id, false, log);
    const auto row = static_cast<Eigen::Index>(i);
    table.row(row).setConstant(NAN);
    table(row, 0) = ck.train.kappa;
    if (t.aborted) {
      code = 1;
      continue;
    }
    PhaseMetrics test = evaluate_split(t.model, data.test, ck, 2000, t.sign, false);
    Rng rng(derive_seed(ck.train.seed, 10));
    const Eigen::MatrixXd rec = sampled_reconstruction(t.model, data.train, ck.sampling, rng);
    auto subset_mse = [&](const std::vector<std::size_t>& rows) -> std::optional<double> {
      if (rows.empty()) return std::nullopt;
      return mse(take_rows(data.train, rows), take_rows(rec, rows));
    };
    const auto clean = subset_mse(clean_rows), dirty = subset_mse(dirty_rows);
    test.extra = {{"clean_train_mse", number_or_null(clean)}, {"corrupted_train_mse", number_or_null(dirty)}};
    sink.write(metrics_record(ck, id, ck.train.epochs, "test", ck.train.kappa, test));
    table(row, 1) = test.mse_value.value_or(NAN);
    table(row, 2) = psnr(table(row, 1));
    table(row, 3) = clean.value_or(NAN);
    table(row, 4) = dirty.value_or(NAN);
    table(row, 5) = test.cfe ? test.cfe->total : NAN;
  }
  write_csv((out / "robustness.csv").string(), table,
            {"kappa", "clean_test_mse", "clean_test_psnr", "clean_train_mse", "corrupted_train_mse", "test_cfe_total"});
  log << "kappa  clean_test_mse  clean_test_psnr\n";
  for (Eigen::Index r = 0; r < table.rows(); ++r)
    log << std::setw(5) << table(r, 0) << "  " << std::setw(14) << table(r, 1) << "  " << std::setw(15) << table(r, 2)
        << '\n';
  return code;
}

// Paths made absolute and checked before anything runs.
void resolve(ExperimentConfig& c, const std::string& subcommand) {
  validate_config(c);
  const bool needs_data = subcommand == "train" || subcommand == "eval" || subcommand == "robustness";
  if (needs_data && (c.dataset == "idx-images" || c.dataset == "csv-vectors")) {
    if (c.data_path.empty()) throw ConfigError("config: dataset " + c.dataset + " needs data_path");
    if (!fs::is_regular_file(c.data_path)) throw ConfigError("config: data_path not found: " + c.data_path);
  }
  if (!c.data_path.empty()) c.data_path = fs::absolute(c.data_path).lexically_normal().string();
  if (subcommand == "eval" || subcommand == "sample") {
    if (c.checkpoint.empty()) throw ConfigError("config: " + subcommand + " needs checkpoint");
    if (!fs::is_regular_file(c.checkpoint)) throw ConfigError("config: checkpoint not found: " + c.checkpoint);
  }
  if (!c.checkpoint.empty()) c.checkpoint = fs::absolute(c.checkpoint).lexically_normal().string();
  if (subcommand == "geometry" && c.geometry_model == "bivariate" && c.geometry_mc_samples == 0)
    throw ConfigError("config: the bivariate model needs geometry_mc_samples > 0");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& e : key_table()) k.push_back({e.name, e.help});
    return k;
  }();
  return keys;
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  find_key(key).set(config, trim(value));
}

std::string get_config_value(const ExperimentConfig& config, const std::string& key) {
  return find_key(key).get(config);
}

ExperimentConfig parse_config_text(const std::string& text, ExperimentConfig base) {
  std::stringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos || text[first] != '{') return parse_config_text(text);
  // echoed configuration: first JSON line / document
  std::string doc = text.substr(first);
  json j;
  try {
    j = json::parse(doc.substr(0, doc.find('\n')));
  } catch (const json::exception&) {
    try {
      j = json::parse(doc);
    } catch (const json::exception& e) {
      throw ConfigError("config " + path + ": " + e.what());
    }
  }
  if (!j.contains("config") || !j["config"].is_object()) throw ConfigError("config " + path + ": no echoed config");
  ExperimentConfig c;
  for (auto it = j["config"].begin(); it != j["config"].end(); ++it)
    set_config_value(c, it.key(), json_scalar_text(it.key(), it.value()));
  return c;
}

std::string config_text(const ExperimentConfig& config) {
  std::string out;
  for (const auto& e : key_table()) out += std::string(e.name) + " = " + e.get(config) + "\n";
  return out;
}

void validate_config(const ExperimentConfig& c) {
  const double fsum = c.split_train + c.split_val + c.split_test;
  if (c.split_train < 0 || c.split_val < 0 || c.split_test < 0 || std::abs(fsum - 1.0) > 1e-9)
    throw ConfigError("config: split fractions must be non-negative and sum to 1");
  if (!(c.outlier_fraction >= 0.0 && c.outlier_fraction <= 1.0))
    throw ConfigError("config: outlier_fraction must be in [0, 1]");
  if (c.n_samples == 0 || c.data_dim <= 0) throw ConfigError("config: n_samples and data_dim must be positive");
  if (c.mixture_components < 1) throw ConfigError("config: mixture_components must be positive");
  if (c.frechet_pca < 0) throw ConfigError("config: frechet_pca must be non-negative");
  if (c.geometry_kappa < 0) throw ConfigError("config: geometry_kappa must be non-negative");
  for (double th : c.geometry_theta)
    if (th <= 0) throw ConfigError("config: geometry_theta values must be positive");
  try {
    c.train.validate();
    Coupling::make(c.train.kappa, 2, c.train.latent_dim);
    if (c.train.kappa < 0) throw ConfigError("kappa must be non-negative");
    for (double k : c.robustness_kappas)
      if (k < 0) throw ConfigError("robustness_kappas must be non-negative");
  } catch (const std::logic_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

int run(const std::string& subcommand, ExperimentConfig config, const std::string& out_dir, std::ostream& log) {
  static const std::vector<std::string> known{"train", "eval", "check", "geometry", "sample", "robustness"};
  if (std::find(known.begin(), known.end(), subcommand) == known.end()) {
    log << "unknown subcommand '" << subcommand << "'\n";
    return 2;
  }
  try {
    resolve(config, subcommand);
  } catch (const ConfigError& e) {
    log << e.what() << '\n';
    return 2;
  }
  const fs::path out(out_dir);
  std::optional<MetricsAppender> sink;
  try {
    fs::create_directories(out);
    std::ofstream(out / "resolved.cfg") << config_text(config);
    sink.emplace(out / "metrics.jsonl");
    sink->write(config_record(subcommand, config));
    if (subcommand == "train") return run_train(config, out, *sink, log);
    if (subcommand == "eval") return run_eval(config, out, *sink, log);
    if (subcommand == "sample") return run_sample(config, out, log);
    if (subcommand == "check") return run_check(config, out, log);
    if (subcommand == "geometry") return run_geometry(config, out, log);
    return run_robustness(config, out, *sink, log);
  } catch (const ConfigError& e) {
    log << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    if (sink) sink->write({{"schema_version", kSchemaVersion}, {"record", "error"}, {"diagnostic", e.what()}});
    return 1;
  }
}

}  // namespace coupled
