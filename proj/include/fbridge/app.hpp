#pragma once

#include "fbridge/io.hpp"
#include "fbridge/mcmc.hpp"
#include "fbridge/validate.hpp"

#include <optional>
#include <ostream>
#include <string>

namespace fbridge::app {

struct RunConfig {
  std::string model = "ou";
  int dim = 0;
  Vec theta;  // true value for simulate, starting value otherwise
  Vec theta_init;
  Vec theta_proposal;  // empty keeps theta fixed
  std::vector<std::string> theta_prior;
  std::string auxiliary = "auto";  // auto (sigma matched at the right end) | linear
  std::string observations = "obs.csv";
  Vec x0_mean;
  Mat x0_cov;
  Vec x0_true;

  TimeGrid obs_times;
  Mat obs_L;
  Mat obs_sigma;
  int sim_steps = 200;

  double rho = 0.5;
  int steps = 100;
  int sweeps = 1000;
  std::uint64_t seed = 1;
  int burnin = 0;
  int thin = 1;
  int snapshot_every = 0;
  std::string update_theta = "even";  // even | odd | both | none

  bool noise = false;
  double noise_init = 0.1;
  double noise_scale = 0.05;
  std::string noise_prior = "invgamma(2,0.1)";

  double band_level = 0.95;
  std::string out = "out";
};

// Command-line values that take precedence over the config file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> sweeps;
  std::optional<double> rho;
  std::optional<int> steps;
};

/// Output directory precedence: --out, then FBRIDGE_OUT, then the `out` key.
RunConfig run_config_from(const io::KeyValueConfig& kv, const Overrides& ov);
RunConfig load_run_config(const std::string& path, const Overrides& ov);

Problem make_problem(const RunConfig& cfg, const ObservationScheme& scheme);
ChainConfig make_chain_config(const RunConfig& cfg, const Problem& problem);

struct SimulationResult {
  ObservationScheme scheme;
  PathSegment truth;
};

SimulationResult simulate(const RunConfig& cfg);

struct ParameterSummary {
  Vec mean, lower, upper;
};

/// Over trace records with sweep > burnin (the initial state alone when none).
ParameterSummary summarize_theta(const Trace& trace, int burnin, double level);

int cmd_simulate(const RunConfig& cfg, std::ostream& log);
int cmd_infer(const RunConfig& cfg, std::ostream& log);
int cmd_smooth(const RunConfig& cfg, std::ostream& log);
int cmd_validate(const ValidationOptions& options, std::ostream& log);

}  // namespace fbridge::app
