#include "fbridge/validate.hpp"

#include "fbridge/bridge.hpp"
#include "fbridge/mcmc.hpp"
#include "fbridge/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace fbridge {

namespace {

int uniform_int(RandomStream& rng, int lo, int hi) {
  return lo + std::min(hi - lo, static_cast<int>(rng.uniform() * (hi - lo + 1)));
}

Mat normal_matrix(RandomStream& rng, Eigen::Index r, Eigen::Index c) {
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.normal();
  return m;
}

Mat random_dispersion(RandomStream& rng, Eigen::Index d) {
  Mat s = Mat::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    s(i, i) = 0.5 + 0.5 * std::abs(rng.normal());
    for (Eigen::Index j = 0; j < i; ++j) s(i, j) = 0.3 * rng.normal();
  }
  return s;
}

LinearAuxiliary random_auxiliary(RandomStream& rng, Eigen::Index d) {
  const int structure = uniform_int(rng, 0, 2);
  const Vec beta = rng.normal_vector(d);
  const Mat sigma = random_dispersion(rng, d);
  if (structure == 0) return LinearAuxiliary::brownian(beta, sigma);
  const Mat B = 0.5 * normal_matrix(rng, d, d);
  if (structure == 1) return LinearAuxiliary::constant(beta, B, sigma);
  const Vec beta1 = rng.normal_vector(d);
  const Mat B1 = 0.3 * normal_matrix(rng, d, d);
  return LinearAuxiliary::time_varying(
      [beta, beta1](double t) -> Vec { return beta + std::sin(2.0 * t) * beta1; },
      [B, B1](double t) -> Mat { return B + std::cos(3.0 * t) * B1; },
      [sigma](double t) -> Mat { return (1.0 + 0.25 * std::sin(t)) * sigma; });
}

CheckResult make_result(std::string name, double err, double tol, std::string detail = {}) {
  CheckResult r;
  r.name = std::move(name);
  r.max_error = err;
  r.tolerance = tol;
  r.passed = std::isfinite(err) && err <= tol;
  r.detail = std::move(detail);
  return r;
}

}  // namespace

bool ValidationReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

KernelCase random_kernel_case(RandomStream& rng, SegmentKind kind, bool after_obs) {
  const Eigen::Index d = uniform_int(rng, 1, 4);
  const Eigen::Index m = uniform_int(rng, 1, static_cast<int>(d));
  KernelCase c;
  c.aux = random_auxiliary(rng, d);
  Observation obs;
  obs.L = normal_matrix(rng, m, d);
  const Mat G = 0.4 * normal_matrix(rng, m, m);
  obs.cov = G * G.transpose() + 0.05 * Mat::Identity(m, m);
  obs.value = rng.normal_vector(m);
  const double t_left = 0.5 * rng.normal();
  const double S = t_left + 0.3 + 0.7 * rng.uniform();
  const double T = S + 0.3 + 0.7 * rng.uniform();
  c.x = rng.normal_vector(d);
  if (kind == SegmentKind::End) {
    c.spec = end_spec(t_left, S, c.x, obs);
    c.t = t_left + 0.95 * rng.uniform() * (S - t_left);
  } else {
    c.spec = interior_spec(t_left, S, T, c.x, obs, rng.normal_vector(d));
    c.t = after_obs ? S + 0.95 * rng.uniform() * (T - S)
                    : t_left + 0.95 * rng.uniform() * (S - t_left);
  }
  c.grid = segment_grid(c.spec, 16);
  return c;
}

std::pair<CheckResult, CheckResult> check_gradient_consistency(int configs, std::uint64_t seed,
                                                               const KernelOptions& options,
                                                               bool end_segments) {
  const double h = 1e-2;
  double max_rel = 0.0, max_abs = 0.0;
  for (int i = 0; i < configs; ++i) {
    RandomStream rng(seed, {static_cast<std::uint64_t>(i)});
    const SegmentKind kind = end_segments ? SegmentKind::End : SegmentKind::Interior;
    const KernelCase c = random_kernel_case(rng, kind, i % 2 == 1);
    const GuidedKernel kernel = GuidedKernel::build(c.spec, c.aux, c.grid, options);
    const oracle::ScalarField f = [&](const Vec& y) {
      return oracle::reference_log_ptilde(c.aux, c.spec, c.t, y);
    };
    const Vec r = kernel.guiding_r(c.t, c.x);
    const Vec fd = oracle::finite_diff_grad(f, c.x, h);
    max_rel = std::max(max_rel, (r - fd).norm() / std::max(1.0, r.norm()));
    const Mat H = kernel.guiding_H(c.t);
    const Mat fdh = oracle::finite_diff_hess(f, c.x, h);
    max_abs = std::max(max_abs, (H + fdh).cwiseAbs().maxCoeff());
  }
  const std::string suffix = end_segments ? " (end segments)" : "";
  return {make_result("gradient r~ vs finite differences" + suffix, max_rel, 1e-6, "relative"),
          make_result("curvature H~ vs finite differences" + suffix, max_abs, 1e-5, "absolute")};
}

CheckResult check_closed_form(int points, std::uint64_t seed) {
  double err = 0.0;
  KernelOptions general;
  general.closed_form_fast_path = false;
  for (int i = 0; i < points; ++i) {
    RandomStream rng(seed, {static_cast<std::uint64_t>(i)});
    const Eigen::Index d = uniform_int(rng, 1, 4);
    const Eigen::Index m = uniform_int(rng, 1, static_cast<int>(d));
    const Vec beta = rng.normal_vector(d);
    const Mat sigma = random_dispersion(rng, d);
    const LinearAuxiliary aux = LinearAuxiliary::brownian(beta, sigma);
    Observation obs;
    obs.L = normal_matrix(rng, m, d);
    const Mat G = 0.4 * normal_matrix(rng, m, m);
    obs.cov = G * G.transpose() + 0.05 * Mat::Identity(m, m);
    obs.value = rng.normal_vector(m);
    const double S = 0.3 + 0.7 * rng.uniform();
    const double T = S + 0.3 + 0.7 * rng.uniform();
    const Vec x = rng.normal_vector(d), xT = rng.normal_vector(d);
    const SegmentSpec spec = interior_spec(0.0, S, T, x, obs, xT);
    const GuidedKernel kernel = GuidedKernel::build(spec, aux, segment_grid(spec, 8), general);
    const ConstantCoefficientPull pull(beta, aux.diffusion(0.0), obs.L, obs.cov, S, T, obs.value, xT);
    const double t = 0.95 * rng.uniform() * S;

    const Mat U = kernel.precision_U(t);
    err = std::max(err, (pull.U(t) - U).cwiseAbs().maxCoeff() / std::max(1.0, U.cwiseAbs().maxCoeff()));
    const Mat N_general = U.topLeftCorner(m, m) * (S - t) * (T - S) / (T - t);
    err = std::max(err, (pull.N(t) - N_general).cwiseAbs().maxCoeff());
    err = std::max(err, (pull.Q(t) - obs.L.transpose() * N_general * obs.L).cwiseAbs().maxCoeff());
    const Vec r = kernel.guiding_r(t, x);
    err = std::max(err, (pull.r(t, x) - r).norm() / std::max(1.0, r.norm()));
    const Mat H = kernel.guiding_H(t);
    err = std::max(err, (pull.H(t) - H).cwiseAbs().maxCoeff() / std::max(1.0, H.cwiseAbs().maxCoeff()));

    // t -> S along the general route, three-level Richardson extrapolation in S - t.
    const double delta = 1e-6 * S;
    const Vec r1 = kernel.guiding_r(S - delta, x);
    const Vec r2 = kernel.guiding_r(S - delta / 2, x);
    const Vec r4 = kernel.guiding_r(S - delta / 4, x);
    const Vec e1 = 2.0 * r2 - r1, e2 = 2.0 * r4 - r2;
    const Vec limit = (4.0 * e2 - e1) / 3.0;
    const Vec closed = pull.limit_at_S(x);
    err = std::max(err, (closed - limit).norm() / std::max(1.0, closed.norm()));
  }
  return make_result("closed forms vs general route", err, 1e-10, "relative");
}

CheckResult check_brownian_example(int points) {
  const double S = 1.0, T = 2.0, Sigma = 0.3;
  Mat L(1, 2);
  L << 1.0, 0.0;
  const ConstantCoefficientPull pull(Vec::Zero(2), Mat::Identity(2, 2), L, Mat::Constant(1, 1, Sigma), S,
                                     T, Vec::Constant(1, 0.4), Vec::Zero(2));
  double err = 0.0;
  for (int i = 0; i < points; ++i) {
    const double t = S * i / points;
    const double expected = (S - t) * (T - S) / ((S - t) * (T - S) + Sigma * (T - t));
    err = std::max(err, std::abs(pull.N(t)(0, 0) - expected));
  }
  return make_result("2d Brownian N(t)", err, 1e-12);
}

CheckResult check_kalman_joint(std::uint64_t seed) {
  double err = 0.0;
  auto& reg = ModelRegistry::global();
  for (int problem = 0; problem < 4; ++problem) {
    RandomStream rng(seed, {static_cast<std::uint64_t>(problem)});
    const bool scalar = problem % 2 == 0;
    LinearAuxiliary lin = scalar ? reg.get("bm").linear(Vec::Constant(1, 0.3), 1)
                                 : reg.get("oscillator").linear((Vec(4) << 1.2, 0.4, 0.5, 0.8).finished(), 2);
    const Eigen::Index d = lin.dim();
    ObservationScheme scheme;
    for (int i = 0; i < 5 + problem % 2; ++i) {
      const Eigen::Index m = scalar ? 1 : uniform_int(rng, 1, 2);
      const Mat L = normal_matrix(rng, m, d);
      scheme.push_back(0.4 * i + 0.1 * rng.uniform(), L, (0.1 + rng.uniform()) * Mat::Identity(m, m),
                       rng.normal_vector(m));
    }
    const StartPrior prior{rng.normal_vector(d), Mat::Identity(d, d)};
    const auto ssm = oracle::make_state_space(lin, scheme, 200);
    const double a = oracle::kalman_loglik(ssm, scheme.values, prior);
    const double b = oracle::joint_gaussian_loglik(ssm, scheme.values, prior);
    err = std::max(err, std::abs(a - b));
  }
  return make_result("Kalman recursion vs stacked Gaussian", err, 1e-8);
}

namespace {

struct RoundTripCase {
  std::string name;
  DiffusionModel model;
  Vec theta;
  AuxiliaryBuilder aux;
};

}  // namespace

CheckResult check_round_trip(std::uint64_t seed, int segments_per_kind) {
  auto& reg = ModelRegistry::global();
  std::vector<RoundTripCase> cases;
  {
    DiffusionModel ou = reg.make("ou");
    cases.push_back({"ou", ou, (Vec(3) << 1.5, 1.0, 0.6).finished(), endpoint_matched_auxiliary(ou)});
    DiffusionModel bm2 = reg.make("2d-bm");
    AuxiliaryBuilder off;
    off.build = [](const Vec&, double, const Vec*) {
      return LinearAuxiliary::brownian(Vec::Constant(2, 0.2), Mat::Identity(2, 2));
    };
    cases.push_back({"2d-bm", bm2, (Vec(2) << 0.7, 1.3).finished(), off});
  }
  double err = 0.0;
  std::uint64_t counter = 0;
  for (const auto& c : cases) {
    const Eigen::Index d = c.model.dim_state;
    for (const SegmentKind kind : {SegmentKind::Interior, SegmentKind::End, SegmentKind::Start}) {
      for (int i = 0; i < segments_per_kind; ++i) {
        RandomStream rng(seed, {counter++});
        Observation obs;
        obs.L = Mat::Identity(d, d).topRows(d == 1 ? 1 : 1 + (i % 2));
        const auto m = obs.L.rows();
        obs.cov = (i % 3 == 2 ? 0.0 : 0.1) * Mat::Identity(m, m);
        obs.value = rng.normal_vector(m);
        const Vec xl = rng.normal_vector(d), xr = rng.normal_vector(d);
        SegmentSpec spec;
        if (kind == SegmentKind::Interior)
          spec = interior_spec(0.0, 0.5, 1.0, xl, obs, xr);
        else if (kind == SegmentKind::End)
          spec = end_spec(0.0, 0.5, xl, obs);
        else
          spec = start_spec(0.0, 0.5, {Vec::Zero(d), Mat::Identity(d, d)}, obs, xl, xr);
        const bool right = kind != SegmentKind::End;
        const LinearAuxiliary aux = c.aux.build(c.theta, spec.t_right, right ? &spec.right_anchor : nullptr);
        const TimeGrid grid = segment_grid(spec, 40);
        const GuidedKernel kernel = GuidedKernel::build(spec, aux, grid);
        const PathSegment path =
            forward_guided(c.model, c.theta, kernel, draw_innovations(grid, c.model.dim_noise, rng));
        const PathSegment again =
            forward_guided(c.model, c.theta, kernel, inverse_innovation(c.model, c.theta, kernel, path));
        for (std::size_t k = 0; k < path.values.size(); ++k)
          err = std::max(err, (path.values[k] - again.values[k]).cwiseAbs().maxCoeff());
      }
    }
  }
  return make_result("innovation round trip", err, 1e-10, "max abs over nodes");
}

CheckResult check_linear_exactness(std::uint64_t seed, int segments) {
  auto& reg = ModelRegistry::global();
  double err = 0.0;
  const std::vector<std::pair<std::string, Vec>> models = {
      {"ou", (Vec(3) << 1.5, 1.0, 0.6).finished()},
      {"oscillator", (Vec(4) << 1.0, 0.3, 0.4, 0.6).finished()},
      {"bm", Vec::Constant(1, 0.5)}};
  for (std::size_t j = 0; j < models.size(); ++j) {
    const auto& [name, theta] = models[j];
    const DiffusionModel model = reg.make(name);
    const AuxiliaryBuilder aux = reg.auxiliary(name);
    const Eigen::Index d = model.dim_state;
    for (int i = 0; i < segments; ++i) {
      RandomStream rng(seed, {j, static_cast<std::uint64_t>(i)});
      Observation obs{Mat::Identity(d, d).topRows(1), 0.2 * Mat::Identity(1, 1), rng.normal_vector(1)};
      const SegmentSpec spec = interior_spec(0.0, 0.6, 1.0, rng.normal_vector(d), obs, rng.normal_vector(d));
      const TimeGrid grid = segment_grid(spec, 30);
      const GuidedKernel kernel =
          GuidedKernel::build(spec, aux.build(theta, spec.t_right, &spec.right_anchor), grid);
      const PathSegment path =
          forward_guided(model, theta, kernel, draw_innovations(grid, model.dim_noise, rng));
      err = std::max(err, std::abs(log_psi(model, theta, kernel, path)));
    }
  }
  return make_result("log Psi = 0 when model equals auxiliary", err, 1e-10);
}

CheckResult check_determinism(std::uint64_t seed) {
  auto& reg = ModelRegistry::global();
  Problem p;
  p.model = reg.make("ou");
  p.aux = endpoint_matched_auxiliary(p.model);
  RandomStream rng(seed, {});
  for (int i = 0; i < 6; ++i)
    p.scheme.push_back(0.5 * i, Mat::Identity(1, 1), 0.1 * Mat::Identity(1, 1), rng.normal_vector(1));
  p.x0_prior = {Vec::Zero(1), Mat::Identity(1, 1)};
  ChainConfig c;
  c.theta_init = (Vec(3) << 1.0, 0.0, 0.7).finished();
  c.theta_proposal = (Vec(3) << 0.3, 0.0, 0.0).finished();
  c.log_prior = [](const Vec& th) { return th[0] > 0 ? -th[0] : -INFINITY; };
  c.steps_per_segment = 10;
  c.n_sweeps = 30;
  c.seed = seed;
  c.update_theta_odd = true;
  std::ostringstream a, b;
  write_trace_jsonl(a, run_chain(p, c));
  write_trace_jsonl(b, run_chain(p, c));
  return make_result("bitwise determinism", a.str() == b.str() ? 0.0 : 1.0, 0.0);
}

ValidationReport run_validation(const ValidationOptions& options) {
  ValidationReport report;
  auto [g, h] = check_gradient_consistency(options.configs, options.seed, options.kernel, false);
  report.checks.push_back(g);
  report.checks.push_back(h);
  auto [ge, he] = check_gradient_consistency(std::max(1, options.configs / 4), options.seed + 1,
                                             options.kernel, true);
  report.checks.push_back(ge);
  report.checks.push_back(he);
  report.checks.push_back(check_closed_form(100, options.seed + 2));
  report.checks.push_back(check_brownian_example(20));
  report.checks.push_back(check_kalman_joint(options.seed + 3));
  report.checks.push_back(check_round_trip(options.seed + 4, 6));
  report.checks.push_back(check_linear_exactness(options.seed + 5, 10));
  report.checks.push_back(check_determinism(options.seed + 6));
  return report;
}

void print_report(std::ostream& os, const ValidationReport& report) {
  char buf[64];
  for (const auto& c : report.checks) {
    os << (c.passed ? "PASS " : "FAIL ") << c.name;
    std::snprintf(buf, sizeof buf, "  max_error=%.3e tol=%.1e", c.max_error, c.tolerance);
    os << buf;
    if (!c.detail.empty()) os << " (" << c.detail << ")";
    os << '\n';
  }
  os << (report.all_passed() ? "all checks passed" : "some checks failed") << '\n';
}

}  // namespace fbridge
