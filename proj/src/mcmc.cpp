#include "fbridge/mcmc.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace fbridge {

namespace {

enum StepType : std::uint64_t { kInit = 0, kEven = 1, kOdd = 2, kThetaEven = 3, kThetaOdd = 4, kNoise = 5 };

bool same_vec(const Vec& a, const Vec& b) {
  return a.size() == b.size() && (a.size() == 0 || a == b);
}

std::string block_context(const Block& b) {
  std::ostringstream os;
  os << "block [" << b.left << ", " << b.right << "]";
  return os.str();
}

// log N(x; m + sqrt(rho)(x_from - m), (1 - rho) C)
double ar_logpdf(const Vec& x, const Vec& x_from, const StartPrior& post, double rho) {
  const Vec mean = post.mean + std::sqrt(rho) * (x_from - post.mean);
  return gaussian_logpdf(x, mean, (1.0 - rho) * post.cov);
}

bool positive_definite(const Mat& m) {
  Eigen::LLT<Mat> llt(m);
  return llt.info() == Eigen::Success;
}

}  // namespace

void ChainConfig::validate(const Problem& problem) const {
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must lie in [0, 1)");
  if (steps_per_segment < 2) throw ConfigError("steps_per_segment must be at least 2");
  if (n_sweeps < 0) throw ConfigError("n_sweeps must be non-negative");
  if (init_retries < 1) throw ConfigError("init_retries must be positive");
  const auto p = static_cast<Eigen::Index>(problem.model.parameter_dim);
  if (theta_init.size() != p) throw ConfigError("theta_init has the wrong length");
  if (theta_proposal.size() != 0 && theta_proposal.size() != p)
    throw ConfigError("theta_proposal has the wrong length");
  if (theta_proposal.size() != 0 && (theta_proposal.array() < 0.0).any())
    throw ConfigError("theta_proposal scales must be non-negative");
  if (problem.scheme.size() < 2) throw ConfigError("need at least two observation times");
  problem.scheme.validate(problem.model.dim_state);
  if (problem.x0_prior.mean.size() != problem.model.dim_state ||
      problem.x0_prior.cov.rows() != problem.model.dim_state ||
      problem.x0_prior.cov.cols() != problem.model.dim_state)
    throw ConfigError("x0 prior has the wrong dimension");
  if (problem.noise) {
    if (!(problem.noise->initial > 0.0)) throw ConfigError("noise parameter must start positive");
    if (!problem.noise->log_prior) throw ConfigError("noise parameter needs a prior");
  }
}

const Vec& ChainState::at_observation(std::size_t i) const {
  if (i == 0) return segments.front().front();
  return segments.at(i - 1).back();
}

std::string trace_record_json(const TraceRecord& r) {
  nlohmann::json j;
  j["sweep"] = r.sweep;
  j["theta"] = std::vector<double>(r.theta.data(), r.theta.data() + r.theta.size());
  j["eps"] = std::vector<double>(r.eps.data(), r.eps.data() + r.eps.size());
  j["acc_even"] = r.acc_even;
  j["acc_odd"] = r.acc_odd;
  j["acc_theta"] = r.acc_theta;
  j["logpsi_total"] = r.logpsi_total;
  return j.dump();
}

void write_trace_jsonl(std::ostream& os, const Trace& trace) {
  for (const auto& r : trace.records) os << trace_record_json(r) << '\n';
}

std::vector<Block> parity_blocks(std::size_t n, int parity) {
  std::vector<Block> blocks;
  const auto p = static_cast<std::size_t>(parity & 1);
  if (p == 1) blocks.push_back({SegmentKind::Start, 0, 1});
  std::size_t a = p;
  for (; a + 2 <= n; a += 2) blocks.push_back({SegmentKind::Interior, a, a + 2});
  if (a < n) blocks.push_back({SegmentKind::End, n - 1, n});
  return blocks;
}

Sampler::Sampler(Problem problem, ChainConfig config)
    : problem_(std::move(problem)), config_(std::move(config)) {
  config_.validate(problem_);
  if (config_.theta_proposal.size() == 0)
    config_.theta_proposal = Vec::Zero(problem_.model.parameter_dim);
}

Observation Sampler::observation(const ChainState& state, std::size_t i) const {
  Observation o = problem_.scheme.at(i);
  if (problem_.noise) o.cov = state.eps[0] * Mat::Identity(o.rows(), o.rows());
  return o;
}

TimeGrid Sampler::block_grid(const Block& block) const {
  const auto& t = problem_.scheme.times;
  TimeGrid g = uniform_grid(t[block.left], t[block.left + 1], config_.steps_per_segment);
  for (std::size_t i = block.left + 1; i < block.right; ++i) {
    const TimeGrid next = uniform_grid(t[i], t[i + 1], config_.steps_per_segment);
    g.insert(g.end(), next.begin() + 1, next.end());
  }
  return g;
}

SegmentSpec Sampler::block_spec(const ChainState& state, const Block& b) const {
  const auto& t = problem_.scheme.times;
  const Vec& xl = state.at_observation(b.left);
  switch (b.kind) {
    case SegmentKind::Interior:
      return interior_spec(t[b.left], t[b.left + 1], t[b.right], xl, observation(state, b.left + 1),
                           state.at_observation(b.right));
    case SegmentKind::End:
      return end_spec(t[b.left], t[b.right], xl, observation(state, b.right));
    case SegmentKind::Start:
      return start_spec(t[b.left], t[b.right], problem_.x0_prior, observation(state, b.left), xl,
                        state.at_observation(b.right));
  }
  throw ConfigError("unknown block kind");
}

Vec Sampler::aux_key(const Vec& theta, const SegmentSpec& spec) const {
  const bool has_right = spec.kind != SegmentKind::End;
  if (problem_.aux.key) return problem_.aux.key(theta, spec.t_right, has_right ? &spec.right_anchor : nullptr);
  if (!has_right || !problem_.aux.anchor_dependent) return theta;
  Vec k(theta.size() + spec.right_anchor.size());
  k << theta, spec.right_anchor;
  return k;
}

GuidedKernel Sampler::kernel_for(const ChainState& state, const Block& block, const Vec& theta,
                                 bool store) {
  const SegmentSpec spec = block_spec(state, block);
  const bool has_right = block.kind != SegmentKind::End;
  const Vec key = aux_key(theta, spec);
  auto& slot = cache_[{static_cast<int>(block.kind), block.left}];
  if (slot.kernel && same_vec(slot.key, key) && same_vec(slot.eps, state.eps))
    return slot.kernel->rebind(spec.left_anchor, has_right ? spec.right_anchor : Vec());
  const LinearAuxiliary aux =
      problem_.aux.build(theta, spec.t_right, has_right ? &spec.right_anchor : nullptr);
  GuidedKernel k = GuidedKernel::build(spec, aux, block_grid(block), config_.kernel);
  if (store) {
    slot.key = key;
    slot.eps = state.eps;
    slot.kernel = k;
  }
  return k;
}

GuidedKernel Sampler::block_kernel(const ChainState& state, const Block& block, const Vec& theta) {
  return kernel_for(state, block, theta, true);
}

PathSegment Sampler::block_path(const ChainState& state, const Block& block) const {
  PathSegment path;
  path.grid = block_grid(block);
  path.values.reserve(path.grid.size());
  path.values.push_back(state.segments[block.left].front());
  for (std::size_t i = block.left; i < block.right; ++i) {
    const auto& v = state.segments[i].values;
    path.values.insert(path.values.end(), v.begin() + 1, v.end());
  }
  return path;
}

void Sampler::write_block(ChainState& state, const Block& block, const PathSegment& path) const {
  const auto M = static_cast<std::size_t>(config_.steps_per_segment);
  for (std::size_t i = block.left; i < block.right; ++i) {
    auto& seg = state.segments[i];
    const std::size_t off = (i - block.left) * M;
    for (std::size_t k = 0; k <= M; ++k) seg.values[k] = path.values[off + k];
  }
  // Neighbouring segments share the boundary nodes.
  if (block.left > 0) state.segments[block.left - 1].values.back() = path.values.front();
  if (block.right < state.segments.size()) state.segments[block.right].values.front() = path.values.back();
}

ChainState Sampler::init_chain() {
  ChainState state;
  state.theta = config_.theta_init;
  if (problem_.noise) state.eps = Vec::Constant(1, problem_.noise->initial);
  const auto& scheme = problem_.scheme;
  const std::size_t n = scheme.size() - 1;
  const Observation o0 = observation(state, 0);
  RandomStream rng0(config_.seed, {0, kInit, 0});
  const StartPrior post = start_posterior(problem_.x0_prior, o0.L, o0.cov, o0.value);
  Vec x = sample_gaussian(post.mean, post.cov, rng0);
  state.segments.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const SegmentSpec spec = end_spec(scheme.times[i], scheme.times[i + 1], x, observation(state, i + 1));
    const LinearAuxiliary aux = problem_.aux.build(state.theta, spec.t_right, nullptr);
    const TimeGrid grid = segment_grid(spec, config_.steps_per_segment);
    const GuidedKernel kernel = GuidedKernel::build(spec, aux, grid, config_.kernel);
    std::optional<PathSegment> seg;
    for (int attempt = 0; attempt < config_.init_retries && !seg; ++attempt) {
      RandomStream rng(config_.seed, {0, kInit, i + 1, static_cast<std::uint64_t>(attempt)});
      try {
        seg = forward_guided(problem_.model, state.theta, kernel,
                             draw_innovations(grid, problem_.model.dim_noise, rng));
      } catch (const ProposalFailure&) {
        ++counters_.proposal_failures;
      }
    }
    if (!seg) {
      std::ostringstream os;
      os << "initialisation failed on interval " << i << " after " << config_.init_retries
         << " attempts";
      throw NumericError(os.str());
    }
    x = seg->back();
    state.segments.push_back(std::move(*seg));
  }
  return state;
}

bool Sampler::update_block(ChainState& state, const Block& block, RandomStream& rng) {
  const auto& model = problem_.model;
  const Vec& theta = state.theta;
  const GuidedKernel kernel = block_kernel(state, block, theta);
  const PathSegment path = block_path(state, block);
  const Observation obs =
      observation(state, block.kind == SegmentKind::Interior ? block.left + 1 : block.right);

  const InnovationSegment z = inverse_innovation(model, theta, kernel, path);
  const double lpsi = log_psi(model, theta, kernel, path);
  double log_a = -lpsi - acceptance_factors(kernel, path, obs).log_obs_ratio();

  GuidedKernel proposal_kernel = kernel;
  if (block.kind == SegmentKind::Start) {
    const Observation o0 = observation(state, 0);
    const StartPrior post = start_posterior(problem_.x0_prior, o0.L, o0.cov, o0.value);
    const Vec& x0 = path.front();
    const double rho = config_.rho;
    const Vec x0_new = post.mean + std::sqrt(rho) * (x0 - post.mean) +
                       std::sqrt(1.0 - rho) * (psd_sqrt(post.cov) * rng.normal_vector(x0.size()));
    proposal_kernel = kernel.rebind(x0_new, kernel.spec().right_anchor);
    log_a += proposal_kernel.log_ptilde_at_left() - kernel.log_ptilde_at_left();
    if (positive_definite(post.cov)) {
      // These cancel for the reversible proposal; kept explicit.
      log_a += gaussian_logpdf(x0_new, post.mean, post.cov) - gaussian_logpdf(x0, post.mean, post.cov);
      log_a += ar_logpdf(x0, x0_new, post, rho) - ar_logpdf(x0_new, x0, post, rho);
    }
  }

  const InnovationSegment z_new = pcn_refresh(z, config_.rho, rng);
  const double log_u = std::log(rng.uniform());
  WeightedPath w;
  try {
    w = weighted_proposal(model, theta, proposal_kernel, z_new, obs);
  } catch (const ProposalFailure&) {
    ++counters_.proposal_failures;
    last_logpsi_ += lpsi;
    return false;
  }
  log_a += w.log_psi + w.log_obs_ratio;
  if (log_u < log_a) {
    write_block(state, block, w.path);
    last_logpsi_ += w.log_psi;
    return true;
  }
  last_logpsi_ += lpsi;
  return false;
}

double Sampler::update_blocks(ChainState& state, int parity) {
  const auto blocks = parity_blocks(state.segments.size(), parity);
  if (blocks.empty()) return 0.0;
  last_logpsi_ = 0.0;
  std::size_t accepted = 0;
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    const Block& b = blocks[j];
    RandomStream rng(config_.seed, {state.sweep_index, parity ? kOdd : kEven, b.left});
    bool ok = false;
    try {
      ok = update_block(state, b, rng);
    } catch (const ProposalFailure&) {
      throw;
    } catch (const NumericError& e) {
      std::ostringstream os;
      os << "sweep " << state.sweep_index << ", " << block_context(b) << ": " << e.what();
      throw NumericError(os.str());
    }
    accepted += ok;
    AcceptanceCounter& c = b.kind == SegmentKind::Start ? counters_.start
                           : b.kind == SegmentKind::End ? counters_.end
                           : parity ? counters_.odd
                                    : counters_.even;
    ++c.proposed;
    c.accepted += ok;
  }
  return static_cast<double>(accepted) / static_cast<double>(blocks.size());
}

double Sampler::update_even_blocks(ChainState& state) { return update_blocks(state, 0); }
double Sampler::update_odd_blocks(ChainState& state) { return update_blocks(state, 1); }

bool Sampler::update_theta(ChainState& state, int parity) {
  if (!(config_.theta_proposal.array() > 0.0).any()) return false;
  const auto& model = problem_.model;
  RandomStream rng(config_.seed, {state.sweep_index, parity ? kThetaOdd : kThetaEven, 0});
  const Vec& theta = state.theta;
  Vec theta_new = theta;
  for (Eigen::Index j = 0; j < theta.size(); ++j)
    if (config_.theta_proposal[j] > 0.0) theta_new[j] += config_.theta_proposal[j] * rng.normal();
  const double log_u = std::log(rng.uniform());
  ++counters_.theta.proposed;

  const double lp_new = config_.log_prior ? config_.log_prior(theta_new) : 0.0;
  const double lp_old = config_.log_prior ? config_.log_prior(theta) : 0.0;
  if (!std::isfinite(lp_new)) return false;
  double log_a = lp_new - lp_old;

  const auto blocks = parity_blocks(state.segments.size(), parity);
  std::vector<std::pair<Block, PathSegment>> proposals;
  std::vector<GuidedKernel> new_kernels;
  proposals.reserve(blocks.size());
  for (const Block& b : blocks) {
    const GuidedKernel kernel = block_kernel(state, b, theta);
    const PathSegment path = block_path(state, b);
    const Observation obs = observation(state, b.kind == SegmentKind::Interior ? b.left + 1 : b.right);
    const InnovationSegment z = inverse_innovation(model, theta, kernel, path);
    log_a -= kernel.log_ptilde_at_left() + log_psi(model, theta, kernel, path) +
             acceptance_factors(kernel, path, obs).log_obs_ratio();
    try {
      GuidedKernel k_new = kernel_for(state, b, theta_new, false);
      WeightedPath w = weighted_proposal(model, theta_new, k_new, z, obs);
      log_a += k_new.log_ptilde_at_left() + w.log_psi + w.log_obs_ratio;
      proposals.emplace_back(b, std::move(w.path));
      new_kernels.push_back(std::move(k_new));
    } catch (const NumericError&) {
      ++counters_.proposal_failures;
      return false;
    }
  }
  if (!(log_u < log_a)) return false;

  state.theta = theta_new;
  for (std::size_t j = 0; j < proposals.size(); ++j) {
    const Block& b = proposals[j].first;
    write_block(state, b, proposals[j].second);
    auto& slot = cache_[{static_cast<int>(b.kind), b.left}];
    slot.key = aux_key(theta_new, new_kernels[j].spec());
    slot.eps = state.eps;
    slot.kernel = new_kernels[j];
  }
  ++counters_.theta.accepted;
  return true;
}

bool Sampler::update_noise_param(ChainState& state) {
  if (!problem_.noise) return false;
  const auto& noise = *problem_.noise;
  RandomStream rng(config_.seed, {state.sweep_index, kNoise, 0});
  const double eps = state.eps[0];
  const double eps_new = eps + noise.proposal_scale * rng.normal();
  const double log_u = std::log(rng.uniform());
  ++counters_.noise.proposed;
  if (!(eps_new > 0.0)) return false;
  const double lp_new = noise.log_prior(eps_new);
  if (!std::isfinite(lp_new)) return false;
  double log_a = lp_new - noise.log_prior(eps);
  const auto& scheme = problem_.scheme;
  for (std::size_t i = 0; i < scheme.size(); ++i) {
    const Vec res = scheme.values[i] - scheme.projections[i] * state.at_observation(i);
    const double m = static_cast<double>(res.size());
    const double ss = res.squaredNorm();
    log_a += -0.5 * m * (std::log(eps_new) - std::log(eps)) - 0.5 * ss * (1.0 / eps_new - 1.0 / eps);
  }
  if (!(log_u < log_a)) return false;
  state.eps[0] = eps_new;
  ++counters_.noise.accepted;
  return true;
}

double Sampler::log_psi_total(ChainState& state, int parity) {
  double total = 0.0;
  for (const Block& b : parity_blocks(state.segments.size(), parity)) {
    const GuidedKernel kernel = block_kernel(state, b, state.theta);
    total += log_psi(problem_.model, state.theta, kernel, block_path(state, b));
  }
  return total;
}

TraceRecord Sampler::sweep(ChainState& state) {
  ++state.sweep_index;
  TraceRecord r;
  r.sweep = state.sweep_index;
  int theta_tries = 0, theta_acc = 0;
  r.acc_even = update_even_blocks(state);
  if (config_.update_theta_even && (config_.theta_proposal.array() > 0.0).any()) {
    ++theta_tries;
    theta_acc += update_theta(state, 0);
  }
  r.acc_odd = update_odd_blocks(state);
  r.logpsi_total = last_logpsi_;
  if (config_.update_theta_odd && (config_.theta_proposal.array() > 0.0).any()) {
    ++theta_tries;
    theta_acc += update_theta(state, 1);
  }
  update_noise_param(state);
  r.acc_theta = theta_tries ? static_cast<double>(theta_acc) / theta_tries : 0.0;
  r.theta = state.theta;
  r.eps = state.eps;
  return r;
}

Trace Sampler::run_chain(const SweepObserver& observer) {
  counters_ = Trace{};
  cache_.clear();
  ChainState state = init_chain();
  Trace trace;
  TraceRecord first;
  first.sweep = 0;
  first.theta = state.theta;
  first.eps = state.eps;
  first.logpsi_total = log_psi_total(state, 1);
  trace.records.push_back(first);
  if (config_.snapshot_every > 0) trace.snapshots.push_back({0, state.segments});
  for (int s = 0; s < config_.n_sweeps; ++s) {
    trace.records.push_back(sweep(state));
    if (config_.snapshot_every > 0 && state.sweep_index % config_.snapshot_every == 0)
      trace.snapshots.push_back({state.sweep_index, state.segments});
    if (observer) observer(state);
  }
  trace.even = counters_.even;
  trace.odd = counters_.odd;
  trace.start = counters_.start;
  trace.end = counters_.end;
  trace.theta = counters_.theta;
  trace.noise = counters_.noise;
  trace.proposal_failures = counters_.proposal_failures;
  return trace;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw DomainError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(p, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

void PathAccumulator::add(const std::vector<PathSegment>& segments) {
  std::vector<Vec> flat;
  TimeGrid grid;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    const std::size_t first = i == 0 ? 0 : 1;
    grid.insert(grid.end(), s.grid.begin() + static_cast<std::ptrdiff_t>(first), s.grid.end());
    flat.insert(flat.end(), s.values.begin() + static_cast<std::ptrdiff_t>(first), s.values.end());
  }
  if (draws_.empty()) grid_ = grid;
  else if (grid != grid_) throw ConfigError("path accumulator: grids differ between draws");
  draws_.push_back(std::move(flat));
}

PathSummary PathAccumulator::summarize(double level) const {
  PathSummary out;
  out.grid = grid_;
  out.samples = draws_.size();
  if (draws_.empty()) return out;
  const double tail = 0.5 * (1.0 - level);
  const Eigen::Index d = draws_.front().front().size();
  std::vector<double> column(draws_.size());
  for (std::size_t k = 0; k < grid_.size(); ++k) {
    Vec mean = Vec::Zero(d), lo(d), hi(d);
    for (const auto& draw : draws_) mean += draw[k];
    mean /= static_cast<double>(draws_.size());
    for (Eigen::Index j = 0; j < d; ++j) {
      for (std::size_t s = 0; s < draws_.size(); ++s) column[s] = draws_[s][k][j];
      lo[j] = quantile(column, tail);
      hi[j] = quantile(column, 1.0 - tail);
    }
    out.mean.push_back(mean);
    out.lower.push_back(lo);
    out.upper.push_back(hi);
  }
  return out;
}

Trace run_chain(const Problem& problem, const ChainConfig& config, const SweepObserver& observer) {
  Sampler sampler(problem, config);
  return sampler.run_chain(observer);
}

}  // namespace fbridge
