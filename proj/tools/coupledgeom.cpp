#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "coupledgeom/errors.hpp"
#include "coupledgeom/harness.hpp"

namespace {

std::string key_listing() {
  std::string s = "\nConfig keys (file lines `key = value`, or --key value):\n";
  for (const auto& k : coupled::config_keys()) s += "  " + std::string(k.name) + "  " + k.help + "\n";
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coupled VAE and information-geometry toolkit"};
  app.require_subcommand(1, 1);
  app.footer(key_listing());

  std::string config_path, out_dir = "out";
  const std::vector<std::pair<std::string, std::string>> subs{
      {"train", "train a coupled VAE and write metrics.jsonl, model.ckpt, recon_grid.csv"},
      {"eval", "evaluate a checkpoint on the test split"},
      {"check", "run every oracle and write conformance.json"},
      {"geometry", "Fisher metric and affine connection over a parameter grid (geometry.json)"},
      {"sample", "decode latent draws from a checkpoint (samples.csv)"},
      {"robustness", "compare couplings on outlier-corrupted training data (robustness.csv)"}};
  for (const auto& [name, help] : subs) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "key=value file or an echoed metrics.jsonl");
    sub->add_option("--out", out_dir, "output directory")->capture_default_str();
    sub->allow_extras();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  CLI::App* sub = app.get_subcommands().front();

  try {
    coupled::ExperimentConfig config;
    if (!config_path.empty()) config = coupled::load_config_file(config_path);
    const std::vector<std::string> extra = sub->remaining();
    for (std::size_t i = 0; i < extra.size(); ++i) {
      std::string key = extra[i];
      if (key.rfind("--", 0) != 0) throw coupled::ConfigError("unexpected argument '" + key + "'");
      key.erase(0, 2);
      std::string value;
      if (const auto eq = key.find('='); eq != std::string::npos) {
        value = key.substr(eq + 1);
        key.erase(eq);
      } else {
        if (i + 1 >= extra.size()) throw coupled::ConfigError("--" + key + " needs a value");
        value = extra[++i];
      }
      coupled::set_config_value(config, key, value);
    }
    return coupled::run(sub->get_name(), config, out_dir, std::cout);
  } catch (const coupled::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }
}
