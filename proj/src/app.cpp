#include "fbridge/app.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>

namespace fbridge::app {

namespace {

const std::set<std::string> kKnownKeys = {
    "model",        "dim",          "theta",         "theta_init",   "theta_proposal",
    "theta_prior",  "auxiliary",    "observations",  "x0_mean",      "x0_cov",
    "x0",           "obs_times",    "obs_start",     "obs_step",     "obs_count",
    "obs_L",        "obs_sigma",    "sim_steps",     "rho",          "steps_per_segment",
    "sweeps",       "seed",         "burnin",        "thin",         "snapshot_every",
    "update_theta", "noise",        "noise_init",    "noise_scale",  "noise_prior",
    "band_level",   "out"};

std::string join(const std::string& dir, const std::string& name) { return dir + "/" + name; }

std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

RunConfig run_config_from(const io::KeyValueConfig& kv, const Overrides& ov) {
  kv.require_known(kKnownKeys);
  RunConfig c;
  c.model = kv.get("model", c.model);
  c.dim = static_cast<int>(kv.get_int("dim", 0));
  if (kv.has("theta")) c.theta = kv.get_vector("theta");
  c.theta_init = kv.has("theta_init") ? kv.get_vector("theta_init") : c.theta;
  if (kv.has("theta_proposal")) c.theta_proposal = kv.get_vector("theta_proposal");
  if (kv.has("theta_prior")) c.theta_prior = io::split_terms(kv.get("theta_prior"));
  c.auxiliary = kv.get("auxiliary", c.auxiliary);
  c.observations = kv.get("observations", c.observations);
  if (kv.has("x0_mean")) c.x0_mean = kv.get_vector("x0_mean");
  if (kv.has("x0_cov")) c.x0_cov = kv.get_matrix("x0_cov");
  if (kv.has("x0")) c.x0_true = kv.get_vector("x0");
  if (kv.has("obs_times")) {
    const Vec t = kv.get_vector("obs_times");
    c.obs_times.assign(t.data(), t.data() + t.size());
  } else if (kv.has("obs_count")) {
    const double start = kv.get_double("obs_start", 0.0);
    const double step = kv.get_double("obs_step", 1.0);
    const long long n = kv.get_int("obs_count", 0);
    for (long long i = 0; i < n; ++i) c.obs_times.push_back(start + static_cast<double>(i) * step);
  }
  if (kv.has("obs_L")) c.obs_L = kv.get_matrix("obs_L");
  if (kv.has("obs_sigma")) c.obs_sigma = kv.get_matrix("obs_sigma");
  c.sim_steps = static_cast<int>(kv.get_int("sim_steps", c.sim_steps));
  c.rho = kv.get_double("rho", c.rho);
  c.steps = static_cast<int>(kv.get_int("steps_per_segment", c.steps));
  c.sweeps = static_cast<int>(kv.get_int("sweeps", c.sweeps));
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.burnin = static_cast<int>(kv.get_int("burnin", c.burnin));
  c.thin = static_cast<int>(kv.get_int("thin", c.thin));
  c.snapshot_every = static_cast<int>(kv.get_int("snapshot_every", c.snapshot_every));
  c.update_theta = kv.get("update_theta", c.update_theta);
  const std::string noise = kv.get("noise", "none");
  if (noise != "none" && noise != "eps") throw ConfigError("noise must be 'none' or 'eps'");
  c.noise = noise == "eps";
  c.noise_init = kv.get_double("noise_init", c.noise_init);
  c.noise_scale = kv.get_double("noise_scale", c.noise_scale);
  c.noise_prior = kv.get("noise_prior", c.noise_prior);
  c.band_level = kv.get_double("band_level", c.band_level);
  c.out = kv.get("out", c.out);

  if (const char* env = std::getenv("FBRIDGE_OUT"); env && *env) c.out = env;
  if (ov.out) c.out = *ov.out;
  if (ov.seed) c.seed = *ov.seed;
  if (ov.sweeps) c.sweeps = *ov.sweeps;
  if (ov.rho) c.rho = *ov.rho;
  if (ov.steps) c.steps = *ov.steps;

  if (!ModelRegistry::global().contains(c.model)) throw ConfigError("unknown model '" + c.model + "'");
  if (c.auxiliary != "auto" && c.auxiliary != "linear")
    throw ConfigError("auxiliary must be 'auto' or 'linear'");
  if (c.auxiliary == "linear" && !ModelRegistry::global().get(c.model).linear)
    throw ConfigError("model '" + c.model + "' has no linear form");
  if (c.update_theta != "even" && c.update_theta != "odd" && c.update_theta != "both" &&
      c.update_theta != "none")
    throw ConfigError("update_theta must be even, odd, both or none");
  if (c.burnin < 0 || c.thin < 1) throw ConfigError("burnin must be >= 0 and thin >= 1");
  if (!(c.band_level > 0.0 && c.band_level < 1.0)) throw ConfigError("band_level must lie in (0, 1)");
  return c;
}

RunConfig load_run_config(const std::string& path, const Overrides& ov) {
  return run_config_from(io::KeyValueConfig::load(path), ov);
}

Problem make_problem(const RunConfig& cfg, const ObservationScheme& scheme) {
  auto& reg = ModelRegistry::global();
  Problem p;
  p.model = reg.make(cfg.model, cfg.dim);
  p.aux = cfg.auxiliary == "linear" ? reg.auxiliary(cfg.model, cfg.dim)
                                    : endpoint_matched_auxiliary(p.model);
  p.scheme = scheme;
  const int d = p.model.dim_state;
  p.x0_prior.mean = cfg.x0_mean.size() ? cfg.x0_mean : Vec::Zero(d);
  p.x0_prior.cov = cfg.x0_cov.size() ? cfg.x0_cov : Mat::Identity(d, d);
  if (p.x0_prior.cov.size() == 1 && d > 1) p.x0_prior.cov = p.x0_prior.cov(0, 0) * Mat::Identity(d, d);
  if (cfg.noise) {
    NoiseParameter n;
    n.initial = cfg.noise_init;
    n.proposal_scale = cfg.noise_scale;
    n.log_prior = io::parse_prior(cfg.noise_prior);
    p.noise = n;
  }
  return p;
}

ChainConfig make_chain_config(const RunConfig& cfg, const Problem& problem) {
  ChainConfig c;
  c.rho = cfg.rho;
  c.steps_per_segment = cfg.steps;
  c.theta_init = cfg.theta_init;
  c.theta_proposal = cfg.theta_proposal;
  c.n_sweeps = cfg.sweeps;
  c.seed = cfg.seed;
  c.update_theta_even = cfg.update_theta == "even" || cfg.update_theta == "both";
  c.update_theta_odd = cfg.update_theta == "odd" || cfg.update_theta == "both";
  c.snapshot_every = cfg.snapshot_every;
  const auto p = static_cast<std::size_t>(problem.model.parameter_dim);
  if (!cfg.theta_prior.empty()) {
    if (cfg.theta_prior.size() != p)
      throw ConfigError("theta_prior needs one term per parameter (" + std::to_string(p) + ")");
    std::vector<std::function<double(double)>> terms;
    for (const auto& t : cfg.theta_prior) terms.push_back(io::parse_prior(t));
    c.log_prior = [terms](const Vec& th) {
      double s = 0.0;
      for (std::size_t j = 0; j < terms.size(); ++j) s += terms[j](th[static_cast<Eigen::Index>(j)]);
      return s;
    };
  }
  c.validate(problem);
  return c;
}

SimulationResult simulate(const RunConfig& cfg) {
  auto& reg = ModelRegistry::global();
  const DiffusionModel model = reg.make(cfg.model, cfg.dim);
  const int d = model.dim_state;
  if (cfg.theta.size() != model.parameter_dim) throw ConfigError("simulate: theta has the wrong length");
  if (cfg.obs_times.size() < 2) throw ConfigError("simulate: need at least two observation times");
  if (cfg.sim_steps < 1) throw ConfigError("simulate: sim_steps must be positive");
  const Mat L = cfg.obs_L.size() ? cfg.obs_L : Mat::Identity(d, d);
  if (L.cols() != d) throw ConfigError("simulate: obs_L must have one column per state component");
  Mat Sigma = cfg.obs_sigma.size() ? cfg.obs_sigma : Mat::Zero(L.rows(), L.rows());
  if (Sigma.size() == 1) Sigma = Sigma(0, 0) * Mat::Identity(L.rows(), L.rows());

  RandomStream rng(cfg.seed, {7});
  Vec x0 = cfg.x0_true;
  if (x0.size() == 0) {
    const Vec m = cfg.x0_mean.size() ? cfg.x0_mean : Vec::Zero(d);
    Mat C = cfg.x0_cov.size() ? cfg.x0_cov : Mat::Identity(d, d);
    if (C.size() == 1 && d > 1) C = C(0, 0) * Mat::Identity(d, d);
    x0 = sample_gaussian(m, C, rng);
  }
  if (x0.size() != d) throw ConfigError("simulate: x0 has the wrong dimension");

  SimulationResult out;
  std::vector<Vec> states{x0};
  out.truth.grid = {cfg.obs_times.front()};
  out.truth.values = {x0};
  for (std::size_t i = 0; i + 1 < cfg.obs_times.size(); ++i) {
    const TimeGrid grid = uniform_grid(cfg.obs_times[i], cfg.obs_times[i + 1], cfg.sim_steps);
    const PathSegment seg = simulate_euler(model, cfg.theta, states.back(), grid, rng);
    out.truth.grid.insert(out.truth.grid.end(), seg.grid.begin() + 1, seg.grid.end());
    out.truth.values.insert(out.truth.values.end(), seg.values.begin() + 1, seg.values.end());
    states.push_back(seg.back());
  }
  for (std::size_t i = 0; i < cfg.obs_times.size(); ++i)
    out.scheme.push_back(cfg.obs_times[i], L, Sigma, Vec::Zero(L.rows()));
  out.scheme.values = sample_observations(states, out.scheme, rng);
  out.scheme.validate(d);
  return out;
}

ParameterSummary summarize_theta(const Trace& trace, int burnin, double level) {
  std::vector<const TraceRecord*> kept;
  for (const auto& r : trace.records)
    if (r.sweep > static_cast<std::size_t>(burnin)) kept.push_back(&r);
  if (kept.empty() && !trace.records.empty()) kept.push_back(&trace.records.front());
  ParameterSummary s;
  if (kept.empty()) return s;
  const Eigen::Index p = kept.front()->theta.size();
  s.mean = Vec::Zero(p);
  s.lower.resize(p);
  s.upper.resize(p);
  std::vector<double> col(kept.size());
  for (Eigen::Index j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < kept.size(); ++i) col[i] = kept[i]->theta[j];
    for (double v : col) s.mean[j] += v;
    s.mean[j] /= static_cast<double>(col.size());
    s.lower[j] = quantile(col, 0.5 * (1.0 - level));
    s.upper[j] = quantile(col, 0.5 * (1.0 + level));
  }
  return s;
}

namespace {

struct ChainOutput {
  Trace trace;
  PathSummary paths;
};

ChainOutput run_and_write(const RunConfig& cfg, std::ostream& log, bool smoothing) {
  int dim_state = 0;
  const ObservationScheme scheme = io::read_observations(cfg.observations, &dim_state);
  const Problem problem = make_problem(cfg, scheme);
  const ChainConfig chain = make_chain_config(cfg, problem);
  io::ensure_directory(cfg.out);

  PathAccumulator acc;
  SweepObserver observer;
  if (smoothing) {
    observer = [&](const ChainState& s) {
      const auto k = static_cast<int>(s.sweep_index);
      if (k > cfg.burnin && (k - cfg.burnin) % cfg.thin == 0) acc.add(s.segments);
    };
  }
  ChainOutput out;
  {
    Sampler sampler(problem, chain);
    out.trace = sampler.run_chain(observer);
  }
  const Trace& trace = out.trace;
  {
    std::ofstream os(join(cfg.out, "trace.jsonl"));
    if (!os) throw ConfigError("cannot write trace in '" + cfg.out + "'");
    write_trace_jsonl(os, trace);
  }
  if (!trace.snapshots.empty()) {
    io::ensure_directory(join(cfg.out, "paths"));
    for (const auto& snap : trace.snapshots)
      io::write_path_csv(join(cfg.out, "paths/sweep_" + std::to_string(snap.sweep) + ".csv"),
                         snap.segments);
  }

  const ParameterSummary ps = summarize_theta(trace, cfg.burnin, 0.95);
  nlohmann::json j;
  j["model"] = cfg.model;
  j["sweeps"] = cfg.sweeps;
  j["burnin"] = cfg.burnin;
  j["seed"] = cfg.seed;
  j["theta"] = {{"mean", to_std(ps.mean)}, {"lower95", to_std(ps.lower)}, {"upper95", to_std(ps.upper)}};
  if (cfg.noise) {
    std::vector<double> eps;
    for (const auto& r : trace.records)
      if (r.sweep > static_cast<std::size_t>(cfg.burnin) || cfg.sweeps <= cfg.burnin) eps.push_back(r.eps[0]);
    double m = 0.0;
    for (double e : eps) m += e;
    j["eps"] = {{"mean", m / static_cast<double>(eps.size())},
                {"lower95", quantile(eps, 0.025)},
                {"upper95", quantile(eps, 0.975)}};
  }
  auto rate = [](const AcceptanceCounter& c) {
    return nlohmann::json{{"accepted", c.accepted}, {"proposed", c.proposed}, {"rate", c.rate()}};
  };
  j["acceptance"] = {{"even", rate(trace.even)},   {"odd", rate(trace.odd)},
                     {"start", rate(trace.start)}, {"end", rate(trace.end)},
                     {"theta", rate(trace.theta)}, {"noise", rate(trace.noise)}};
  j["proposal_failures"] = trace.proposal_failures;
  {
    std::ofstream os(join(cfg.out, "summary.json"));
    os << j.dump(2) << '\n';
  }
  log << "sweeps: " << cfg.sweeps << "  acceptance even/odd/theta: " << trace.even.rate() << " / "
      << trace.odd.rate() << " / " << trace.theta.rate() << '\n';
  for (Eigen::Index k = 0; k < ps.mean.size(); ++k)
    log << "theta[" << k << "] mean " << ps.mean[k] << "  95% [" << ps.lower[k] << ", " << ps.upper[k]
        << "]\n";
  if (smoothing) {
    if (acc.size() == 0) throw ConfigError("smooth: no draws kept after burn-in");
    out.paths = acc.summarize(cfg.band_level);
    io::write_summary_csv(join(cfg.out, "smooth.csv"), out.paths);
    log << "smoothing summary over " << acc.size() << " draws written to " << join(cfg.out, "smooth.csv")
        << '\n';
  }
  return out;
}

}  // namespace

int cmd_simulate(const RunConfig& cfg, std::ostream& log) {
  const SimulationResult sim = simulate(cfg);
  const int d = ModelRegistry::global().make(cfg.model, cfg.dim).dim_state;
  io::ensure_directory(cfg.out);
  io::write_observations(join(cfg.out, "obs.csv"), sim.scheme, d);
  io::write_path_csv(join(cfg.out, "truth.csv"), sim.truth);
  log << "wrote " << sim.scheme.size() << " observations to " << join(cfg.out, "obs.csv") << '\n';
  return 0;
}

int cmd_infer(const RunConfig& cfg, std::ostream& log) {
  run_and_write(cfg, log, false);
  return 0;
}

int cmd_smooth(const RunConfig& cfg, std::ostream& log) {
  run_and_write(cfg, log, true);
  return 0;
}

int cmd_validate(const ValidationOptions& options, std::ostream& log) {
  const ValidationReport report = run_validation(options);
  print_report(log, report);
  return report.all_passed() ? 0 : 1;
}

}  // namespace fbridge::app
