#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace coupled {

struct OracleResult {
  std::string module;
  std::string name;
  bool pass = false;
  bool hard = true;  // soft oracles are reported, never fail the run
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

// Closed-form vs sampled coupled divergence for one coupling.
struct CfeGap {
  double kappa = 0.0;
  std::optional<double> closed_printed;  // empty when out of domain
  double closed_coupled_log = 0.0;
  double mc = 0.0;
  double mc_stderr = 0.0;
  std::optional<double> gap_printed;
  double gap_coupled_log = 0.0;
  std::string note;
};

struct EntropyGap {
  double kappa = 0.0;
  std::vector<double> probs;
  double canonical = 0.0;
  double closed_form = 0.0;
  double gap = 0.0;
};

struct ConformanceReport {
  std::vector<OracleResult> oracles;
  std::vector<CfeGap> cfe_gaps;
  std::vector<EntropyGap> entropy_gaps;
  bool all_hard_pass() const;
};

struct ConformanceOptions {
  std::uint64_t seed = 20240601;
  std::size_t mc_samples = 1000000;  // CFE gap and geometry sampling
  std::size_t sweep_points = 10000;  // algebra sweeps
};

// Every module's oracle suite.
ConformanceReport run_conformance(const ConformanceOptions& options = {});

// The gap report alone (used by `check` and by callers that only need it).
CfeGap cfe_gap(double kappa, std::uint64_t seed, std::size_t n);

}  // namespace coupled
