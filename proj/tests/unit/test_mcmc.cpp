#include "fbridge/mcmc.hpp"
#include "fbridge/oracle.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace fbridge;

namespace {

Problem ou_problem(std::size_t n_obs, double sigma2, std::uint64_t seed, bool linear_aux) {
  auto& reg = ModelRegistry::global();
  Problem p;
  p.model = reg.make("ou");
  p.aux = linear_aux ? reg.auxiliary("ou") : endpoint_matched_auxiliary(p.model);
  RandomStream rng(seed, {});
  for (std::size_t i = 0; i < n_obs; ++i)
    p.scheme.push_back(0.5 * i, Mat::Identity(1, 1), sigma2 * Mat::Identity(1, 1), rng.normal_vector(1));
  p.x0_prior = {Vec::Zero(1), Mat::Identity(1, 1)};
  return p;
}

ChainConfig fixed_theta_config(int steps, int sweeps) {
  ChainConfig c;
  c.theta_init = (Vec(3) << 1.0, 0.2, 0.8).finished();
  c.steps_per_segment = steps;
  c.n_sweeps = sweeps;
  c.seed = 17;
  return c;
}

Problem sine_problem(std::size_t n_obs) {
  Problem p;
  p.model = ModelRegistry::global().make("sine");
  p.aux = endpoint_matched_auxiliary(p.model);
  RandomStream rng(3, {});
  for (std::size_t i = 0; i < n_obs; ++i)
    p.scheme.push_back(0.7 * i, Mat::Identity(1, 1), 0.1 * Mat::Identity(1, 1), rng.normal_vector(1));
  p.x0_prior = {Vec::Zero(1), Mat::Identity(1, 1)};
  return p;
}

}  // namespace

TEST_CASE("parity blocks") {
  auto b4e = parity_blocks(4, 0), b4o = parity_blocks(4, 1);
  REQUIRE(b4e.size() == 2);
  CHECK((b4e[0].left == 0 && b4e[0].right == 2 && b4e[1].left == 2 && b4e[1].right == 4));
  REQUIRE(b4o.size() == 3);
  CHECK(b4o[0].kind == SegmentKind::Start);
  CHECK((b4o[1].kind == SegmentKind::Interior && b4o[1].left == 1 && b4o[1].right == 3));
  CHECK((b4o[2].kind == SegmentKind::End && b4o[2].left == 3));

  auto b5e = parity_blocks(5, 0), b5o = parity_blocks(5, 1);
  REQUIRE(b5e.size() == 3);
  CHECK((b5e[2].kind == SegmentKind::End && b5e[2].left == 4 && b5e[2].right == 5));
  REQUIRE(b5o.size() == 3);
  CHECK((b5o[2].left == 3 && b5o[2].right == 5));

  auto b1o = parity_blocks(1, 1);
  REQUIRE(b1o.size() == 1);
  CHECK(b1o[0].kind == SegmentKind::Start);
}

TEST_CASE("config validation") {
  const Problem p = ou_problem(3, 0.1, 1, true);
  ChainConfig c = fixed_theta_config(10, 1);
  c.rho = 1.0;
  CHECK_THROWS_AS(c.validate(p), ConfigError);
  c = fixed_theta_config(1, 1);
  CHECK_THROWS_AS(c.validate(p), ConfigError);
  c = fixed_theta_config(10, 1);
  c.theta_init = Vec::Ones(2);
  CHECK_THROWS_AS(c.validate(p), ConfigError);
  CHECK_THROWS_AS(Sampler(ou_problem(1, 0.1, 1, true), fixed_theta_config(10, 1)), ConfigError);
}

TEST_CASE("init joins segments and is reproducible") {
  Sampler s(ou_problem(3, 0.1, 2, true), fixed_theta_config(10, 0));
  const ChainState a = s.init_chain(), b = s.init_chain();
  REQUIRE(a.segments.size() == 2);
  CHECK(a.segments[0].back() == a.segments[1].front());
  for (std::size_t i = 0; i < 2; ++i) CHECK(a.segments[i].values == b.segments[i].values);
}

TEST_CASE("noiseless full observations pin the path") {
  Sampler s(ou_problem(4, 0.0, 3, false), fixed_theta_config(10, 0));
  ChainState st = s.init_chain();
  for (int k = 0; k < 3; ++k) {
    st.sweep_index = k;
    s.sweep(st);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(std::abs(st.at_observation(i)[0] - s.problem().scheme.values[i][0]) < 1e-12);
  }
}

TEST_CASE("linear model: every bridge proposal is accepted") {
  const Trace t = run_chain(ou_problem(5, 0.1, 4, true), fixed_theta_config(10, 300));
  CHECK(t.even.rate() == 1.0);
  CHECK(t.odd.rate() == 1.0);
  CHECK(t.end.rate() == 1.0);
  CHECK(t.even.proposed == 600);
}

TEST_CASE("block updates keep their anchors and the innovation map") {
  const Problem p = sine_problem(6);
  ChainConfig c;
  c.theta_init = (Vec(3) << 1.0, 0.0, 0.7).finished();
  c.steps_per_segment = 12;
  Sampler s(p, c);
  ChainState st = s.init_chain();
  for (int k = 0; k < 5; ++k) {
    st.sweep_index = k + 1;
    const ChainState before = st;
    s.update_even_blocks(st);
    for (std::size_t i = 0; i <= 5; i += 2) CHECK(st.at_observation(i) == before.at_observation(i));
    const ChainState mid = st;
    s.update_odd_blocks(st);
    for (std::size_t i = 1; i <= 5; i += 2) CHECK(st.at_observation(i) == mid.at_observation(i));
    for (std::size_t i = 0; i + 1 < st.segments.size(); ++i) CHECK(st.segments[i].back() == st.segments[i + 1].front());
  }
  CHECK(s.counters().even.accepted > 0);

  for (int parity : {0, 1}) {
    for (const Block& b : parity_blocks(st.segments.size(), parity)) {
      const GuidedKernel k = s.block_kernel(st, b, st.theta);
      const PathSegment path = s.block_path(st, b);
      const PathSegment again = forward_guided(p.model, st.theta, k, inverse_innovation(p.model, st.theta, k, path));
      for (std::size_t j = 0; j < path.values.size(); ++j) CHECK(std::abs(path.values[j][0] - again.values[j][0]) < 1e-10);
    }
  }
}

TEST_CASE("rho near one gives near-certain acceptance") {
  ChainConfig c;
  c.theta_init = (Vec(3) << 1.0, 0.0, 0.7).finished();
  c.steps_per_segment = 12;
  c.rho = 0.9999;
  c.n_sweeps = 100;
  const Trace t = run_chain(sine_problem(5), c);
  CHECK(t.even.rate() > 0.97);
  CHECK(t.odd.rate() > 0.97);
}

TEST_CASE("parameters that do not enter the likelihood sample the prior") {
  Problem p = ou_problem(3, 0.1, 5, true);
  // Drift and dispersion ignore the fourth parameter.
  DiffusionModel base = p.model;
  p.model.parameter_dim = 4;
  p.model.drift = [base](const Vec& th, double t, const Vec& x) { return base.drift(th.head(3), t, x); };
  p.model.dispersion = [base](const Vec& th, double t, const Vec& x) { return base.dispersion(th.head(3), t, x); };
  AuxiliaryBuilder lin = p.aux;
  p.aux.build = [lin](const Vec& th, double t, const Vec* x) { return lin.build(th.head(3), t, x); };
  ChainConfig c;
  c.theta_init = (Vec(4) << 1.0, 0.2, 0.8, 0.0).finished();
  c.theta_proposal = (Vec(4) << 0.0, 0.0, 0.0, 1.5).finished();
  c.log_prior = [](const Vec& th) { return -0.5 * (th[3] - 1.0) * (th[3] - 1.0) / 0.25; };
  c.steps_per_segment = 4;
  c.n_sweeps = 20000;
  c.update_theta_odd = true;
  const Trace t = run_chain(p, c);
  std::vector<double> x;
  for (std::size_t i = 1; i < t.records.size(); ++i) x.push_back(t.records[i].theta[3]);
  double m = 0.0, v = 0.0;
  for (double y : x) m += y;
  m /= x.size();
  for (double y : x) v += (y - m) * (y - m);
  v /= x.size() - 1;
  // Batch means for the standard error.
  const std::size_t nb = 50, bs = x.size() / nb;
  double bv = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    double bm = 0.0;
    for (std::size_t j = 0; j < bs; ++j) bm += x[b * bs + j];
    bm /= bs;
    bv += (bm - m) * (bm - m);
  }
  const double se = std::sqrt(bv / (nb - 1) / nb);
  CHECK(std::abs(m - 1.0) < 3.0 * se);
  CHECK(v == doctest::Approx(0.25).epsilon(0.1));
}

TEST_CASE("noise parameter: conjugate posterior given the path") {
  Problem p = ou_problem(8, 0.1, 6, true);
  NoiseParameter np;
  np.initial = 0.2;
  np.proposal_scale = 0.15;
  const oracle::InverseGamma prior{3.0, 0.2};
  np.log_prior = [prior](double e) { return -(prior.shape + 1.0) * std::log(e) - prior.scale / e; };
  p.noise = np;
  Sampler s(p, fixed_theta_config(6, 0));
  ChainState st = s.init_chain();
  std::vector<Vec> res;
  for (std::size_t i = 0; i < p.scheme.size(); ++i) res.push_back(p.scheme.values[i] - st.at_observation(i));
  const oracle::InverseGamma post = oracle::noise_variance_posterior(prior, res);

  const std::size_t n = 40000;
  std::vector<double> draws;
  for (std::size_t k = 0; k < n; ++k) {
    st.sweep_index = k + 1;
    s.update_noise_param(st);
    draws.push_back(st.eps[0]);
  }
  double m = 0.0;
  for (double e : draws) m += e;
  m /= n;
  const std::size_t nb = 40, bs = n / nb;
  double bv = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    double bm = 0.0;
    for (std::size_t j = 0; j < bs; ++j) bm += draws[b * bs + j];
    bv += (bm / bs - m) * (bm / bs - m);
  }
  const double se = std::sqrt(bv / (nb - 1) / nb);
  CHECK(std::abs(m - post.mean()) < 3.0 * se);
}

TEST_CASE("negative noise proposals are rejected") {
  Problem p = ou_problem(3, 0.1, 7, true);
  NoiseParameter np;
  np.initial = 1e-6;
  np.proposal_scale = 10.0;
  np.log_prior = [](double) { return 0.0; };
  p.noise = np;
  Sampler s(p, fixed_theta_config(6, 0));
  ChainState st = s.init_chain();
  for (int k = 0; k < 50; ++k) {
    st.sweep_index = k + 1;
    s.update_noise_param(st);
    REQUIRE(st.eps[0] > 0.0);
  }
}

TEST_CASE("run_chain: zero sweeps and determinism") {
  const Problem p = ou_problem(4, 0.1, 8, false);
  ChainConfig c = fixed_theta_config(8, 0);
  c.theta_proposal = (Vec(3) << 0.3, 0.0, 0.0).finished();
  c.log_prior = [](const Vec& th) { return th[0] > 0 ? 0.0 : -INFINITY; };
  const Trace t0 = run_chain(p, c);
  REQUIRE(t0.records.size() == 1);
  CHECK(t0.records[0].sweep == 0);
  CHECK(t0.records[0].theta == c.theta_init);

  c.n_sweeps = 20;
  c.snapshot_every = 10;
  std::ostringstream a, b;
  const Trace t1 = run_chain(p, c);
  write_trace_jsonl(a, t1);
  write_trace_jsonl(b, run_chain(p, c));
  CHECK(a.str() == b.str());
  CHECK(t1.records.size() == 21);
  CHECK(t1.snapshots.size() == 3);
}

TEST_CASE("theta moves under the endpoint-matched auxiliary") {
  const Problem p = ou_problem(6, 0.05, 9, false);
  ChainConfig c = fixed_theta_config(10, 100);
  c.theta_proposal = (Vec(3) << 0.5, 0.0, 0.0).finished();
  c.log_prior = [](const Vec& th) { return th[0] > 0 ? -th[0] : -INFINITY; };
  const Trace t = run_chain(p, c);
  CHECK(t.theta.proposed == 100);
  CHECK(t.theta.accepted > 10);
  CHECK(t.theta.accepted < 100);
  for (const auto& r : t.records) CHECK(r.theta[0] > 0.0);
}

TEST_CASE("quantile and path accumulator") {
  CHECK(quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);
  CHECK(quantile({0.0, 1.0}, 0.25) == doctest::Approx(0.25));
  CHECK_THROWS_AS(quantile({}, 0.5), DomainError);

  PathAccumulator acc;
  const TimeGrid g = uniform_grid(0.0, 1.0, 2);
  for (int k = 0; k < 5; ++k) acc.add({PathSegment{g, {Vec::Constant(1, k), Vec::Constant(1, 2.0 * k), Vec::Constant(1, 0.0)}}});
  const PathSummary s = acc.summarize(0.5);
  CHECK(s.samples == 5);
  REQUIRE(s.grid.size() == 3);
  CHECK(s.mean[1][0] == doctest::Approx(4.0));
  CHECK(s.lower[1][0] == doctest::Approx(2.0));
  CHECK(s.upper[1][0] == doctest::Approx(6.0));
  CHECK(s.upper[2][0] == 0.0);
  CHECK_THROWS_AS(acc.add({PathSegment{uniform_grid(0.0, 2.0, 2), std::vector<Vec>(3, Vec::Zero(1))}}), ConfigError);
}

TEST_CASE("kernel reuse keyed on the auxiliary leaves the chain unchanged") {
  Problem keyed = ou_problem(6, 0.05, 9, false);
  REQUIRE(keyed.aux.key);
  Problem plain = keyed;
  plain.aux.key = nullptr;
  ChainConfig c = fixed_theta_config(10, 40);
  c.theta_proposal = (Vec(3) << 0.5, 0.0, 0.0).finished();
  c.update_theta_odd = true;
  c.log_prior = [](const Vec& th) { return th[0] > 0 ? -th[0] : -INFINITY; };
  std::ostringstream a, b;
  write_trace_jsonl(a, run_chain(keyed, c));
  write_trace_jsonl(b, run_chain(plain, c));
  CHECK(a.str() == b.str());
}
