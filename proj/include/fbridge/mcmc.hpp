#pragma once

#include "fbridge/bridge.hpp"
#include "fbridge/kernel.hpp"
#include "fbridge/model.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>

namespace fbridge {

using LogDensity = std::function<double(const Vec&)>;

// Sigma_i = eps * I for every observation. The guiding term uses the same
// Sigma(eps), so q and q~ coincide.
struct NoiseParameter {
  double initial = 0.1;
  double proposal_scale = 0.05;
  std::function<double(double)> log_prior;
};

struct Problem {
  DiffusionModel model;
  AuxiliaryBuilder aux;
  ObservationScheme scheme;
  StartPrior x0_prior;
  std::optional<NoiseParameter> noise;
};

struct ChainConfig {
  double rho = 0.5;
  int steps_per_segment = 100;
  Vec theta_init;
  Vec theta_proposal;  // random-walk scales; zero entries keep a component fixed
  LogDensity log_prior;
  int n_sweeps = 1000;
  std::uint64_t seed = 1;
  bool update_theta_even = true;
  bool update_theta_odd = false;
  int snapshot_every = 0;  // 0 disables path snapshots
  int init_retries = 100;
  KernelOptions kernel;

  /// Throws ConfigError on out-of-range fields.
  void validate(const Problem& problem) const;
};

struct ChainState {
  Vec theta;
  Vec eps;                            // empty without a noise parameter
  std::vector<PathSegment> segments;  // one per observation interval
  std::size_t sweep_index = 0;

  /// State at observation index i.
  const Vec& at_observation(std::size_t i) const;
};

struct TraceRecord {
  std::size_t sweep = 0;
  Vec theta;
  Vec eps;
  double acc_even = 0.0;
  double acc_odd = 0.0;
  double acc_theta = 0.0;
  double logpsi_total = 0.0;
};

struct AcceptanceCounter {
  std::size_t accepted = 0;
  std::size_t proposed = 0;
  double rate() const { return proposed ? static_cast<double>(accepted) / proposed : 0.0; }
};

struct Snapshot {
  std::size_t sweep = 0;
  std::vector<PathSegment> segments;
};

struct Trace {
  std::vector<TraceRecord> records;
  std::vector<Snapshot> snapshots;
  AcceptanceCounter even, odd, start, end, theta, noise;
  std::size_t proposal_failures = 0;
};

/// One JSON object per line.
void write_trace_jsonl(std::ostream& os, const Trace& trace);
std::string trace_record_json(const TraceRecord& record);

// A two-interval block between anchors, or a boundary interval.
struct Block {
  SegmentKind kind = SegmentKind::Interior;
  std::size_t left = 0;   // observation index of the left end
  std::size_t right = 0;  // observation index of the right end
};

/// Blocks of one parity pass (0 = even, 1 = odd) for n intervals. Even pass:
/// interiors between even anchors plus, for odd n, the last interval as an
/// end block. Odd pass: the start block [0, 1], interiors between odd anchors
/// and, for even n, the last interval as an end block.
std::vector<Block> parity_blocks(std::size_t n_intervals, int parity);

using SweepObserver = std::function<void(const ChainState&)>;

class Sampler {
 public:
  Sampler(Problem problem, ChainConfig config);

  const Problem& problem() const { return problem_; }
  const ChainConfig& config() const { return config_; }

  ChainState init_chain();

  /// Returns the fraction of accepted block proposals.
  double update_even_blocks(ChainState& state);
  double update_odd_blocks(ChainState& state);
  bool update_theta(ChainState& state, int parity);
  bool update_noise_param(ChainState& state);

  /// One full cycle: even blocks, theta, odd blocks, theta, noise.
  TraceRecord sweep(ChainState& state);

  /// Initial state plus n_sweeps cycles. `observer` sees the state after
  /// every sweep.
  Trace run_chain(const SweepObserver& observer = {});

  /// Kernel for one block under the state's current theta and eps.
  GuidedKernel block_kernel(const ChainState& state, const Block& block, const Vec& theta);

  /// Concatenated path of a block.
  PathSegment block_path(const ChainState& state, const Block& block) const;

  /// Observation i with the covariance implied by eps.
  Observation observation(const ChainState& state, std::size_t i) const;

  /// Sum of log Psi over the blocks of one parity under the current state.
  double log_psi_total(ChainState& state, int parity);

  const Trace& counters() const { return counters_; }

 private:
  double update_blocks(ChainState& state, int parity);
  bool update_block(ChainState& state, const Block& block, RandomStream& rng);
  void write_block(ChainState& state, const Block& block, const PathSegment& path) const;
  SegmentSpec block_spec(const ChainState& state, const Block& block) const;
  TimeGrid block_grid(const Block& block) const;
  Vec aux_key(const Vec& theta, const SegmentSpec& spec) const;
  GuidedKernel kernel_for(const ChainState& state, const Block& block, const Vec& theta, bool store);

  struct CachedKernel {
    Vec key;
    Vec eps;
    std::optional<GuidedKernel> kernel;
  };

  Problem problem_;
  ChainConfig config_;
  Trace counters_;
  double last_logpsi_ = 0.0;
  std::map<std::pair<int, std::size_t>, CachedKernel> cache_;
};

// Pointwise posterior summary of the latent path over the chain grid.
struct PathSummary {
  TimeGrid grid;
  std::vector<Vec> mean;
  std::vector<Vec> lower;
  std::vector<Vec> upper;
  std::size_t samples = 0;
};

class PathAccumulator {
 public:
  void add(const std::vector<PathSegment>& segments);
  /// Central interval with the given coverage, e.g. 0.95.
  PathSummary summarize(double level) const;
  std::size_t size() const { return draws_.size(); }

 private:
  TimeGrid grid_;
  std::vector<std::vector<Vec>> draws_;
};

/// Empirical quantile with linear interpolation; `values` need not be sorted.
double quantile(std::vector<double> values, double p);

/// Convenience wrapper around Sampler::run_chain.
Trace run_chain(const Problem& problem, const ChainConfig& config,
                const SweepObserver& observer = {});

}  // namespace fbridge
