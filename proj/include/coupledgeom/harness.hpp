#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "coupledgeom/cvae.hpp"
#include "coupledgeom/info_geometry.hpp"

namespace coupled {

// Everything a run depends on. Files hold flat `key = value` lines with `#`
// comments; see config_keys() for the accepted keys.
struct ExperimentConfig {
  std::string run_id = "run";
  // synthetic-mixture | synthetic-heavytail | idx-images | csv-vectors
  std::string dataset = "synthetic-mixture";
  std::string data_path;
  std::size_t n_samples = 4096;
  int data_dim = 16;
  int mixture_components = 4;
  double mixture_sigma = 0.05;
  double heavytail_kappa = 1.0;
  double heavytail_scale = 1.0;
  double split_train = 0.70;
  double split_val = 0.15;
  double split_test = 0.15;
  double outlier_fraction = 0.0;  // training rows only
  double outlier_scale = 0.5;

  TrainConfig train;
  LatentSampling sampling = LatentSampling::kEscort;  // "Q" (escort) or "q" (posterior)

  int frechet_pca = 0;  // 0: raw features
  int recon_rows = 16;
  std::size_t sample_count = 256;
  std::string checkpoint;  // eval / sample input
  bool record_wall_time = false;

  std::vector<double> robustness_kappas{0.0, 1.0};

  std::string geometry_model = "gpd";  // gpd | bivariate
  double geometry_kappa = 0.5;
  std::vector<double> geometry_theta{0.5, 1.0, 2.0};
  double geometry_theta2 = 1.0;  // second parameter of the bivariate model
  std::size_t geometry_mc_samples = 0;  // 0: quadrature (gpd only)
  GeometryRoute geometry_route = GeometryRoute::kDerivative;
  ExpectationMeasure geometry_measure = ExpectationMeasure::kEscort;

  std::size_t check_mc_samples = 1000000;
};

struct ConfigKey {
  const char* name;
  const char* help;
};
const std::vector<ConfigKey>& config_keys();

// ConfigError on unknown keys, malformed lines or unparsable values.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& config, const std::string& key);
ExperimentConfig parse_config_text(const std::string& text, ExperimentConfig base = {});
// A key=value file, or a metrics.jsonl / JSON document whose first record
// echoes a configuration.
ExperimentConfig load_config_file(const std::string& path);
// Canonical key=value text; parse_config_text(config_text(c)) == c.
std::string config_text(const ExperimentConfig& config);
// Cross-field checks (split fractions, sizes). ConfigError.
void validate_config(const ExperimentConfig& config);

// Runs one subcommand: train | eval | check | geometry | sample | robustness.
// Artifacts go to `out_dir` (created if needed); a short human summary goes
// to `log`. Returns 0 on success, 1 when a run-time assertion fails, 2 for
// configuration errors.
int run(const std::string& subcommand, ExperimentConfig config, const std::string& out_dir, std::ostream& log);

}  // namespace coupled
