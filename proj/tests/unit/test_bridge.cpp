#include "fbridge/bridge.hpp"

#include <doctest.h>

#include <cmath>

using namespace fbridge;

namespace {

DiffusionModel driftless_bm(int d) {
  DiffusionModel m;
  m.dim_state = m.dim_noise = d;
  m.drift = [d](const Vec&, double, const Vec&) -> Vec { return Vec::Zero(d); };
  m.dispersion = [d](const Vec&, double, const Vec&) -> Mat { return Mat::Identity(d, d); };
  return m;
}

LinearAuxiliary unit_bm(int d) { return LinearAuxiliary::brownian(Vec::Zero(d), Mat::Identity(d, d)); }

InnovationSegment zeros(const TimeGrid& g, int d) {
  return {g, std::vector<Vec>(g.size() - 1, Vec::Zero(d))};
}

}  // namespace

TEST_CASE("zero innovations trace the bridge mean line") {
  const DiffusionModel m = driftless_bm(1);
  const Observation obs{Mat::Identity(1, 1), Mat::Zero(1, 1), Vec::Constant(1, 2.0)};
  const auto spec = interior_spec(0.0, 0.5, 1.0, Vec::Zero(1), obs, Vec::Constant(1, 1.0));
  const TimeGrid g = segment_grid(spec, 50);
  const auto k = GuidedKernel::build(spec, unit_bm(1), g);
  const PathSegment p = forward_guided(m, Vec(), k, zeros(g, 1));
  CHECK(p.values[k.obs_index()][0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(p.back()[0] == 1.0);
  // Straight lines in each half.
  CHECK(p.values[25][0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p.values[75][0] == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("interior paths end at the right anchor and the 2d example pull is plain") {
  const DiffusionModel m = driftless_bm(2);
  Mat L(1, 2);
  L << 1.0, 0.0;
  const Observation obs{L, Mat::Constant(1, 1, 0.3), Vec::Constant(1, 0.4)};
  const Vec xT = (Vec(2) << 0.5, -0.7).finished();
  const auto spec = interior_spec(0.0, 1.0, 2.0, Vec::Zero(2), obs, xT);
  const TimeGrid g = segment_grid(spec, 40);
  const auto k = GuidedKernel::build(spec, unit_bm(2), g);
  RandomStream rng(1, {});
  const PathSegment p = forward_guided(m, Vec(), k, draw_innovations(g, 2, rng));
  CHECK(p.back() == xT);
  for (std::size_t i = 0; i + 1 < g.size(); ++i)
    CHECK(k.guiding_r_node(i, p.values[i])[1] == doctest::Approx((xT[1] - p.values[i][1]) / (2.0 - g[i])).epsilon(1e-12));
}

TEST_CASE("inverse innovation recovers the driving noise") {
  const DiffusionModel ou = ModelRegistry::global().make("ou");
  const Vec th = (Vec(3) << 1.5, 0.5, 0.8).finished();
  const Observation obs{Mat::Identity(1, 1), Mat::Constant(1, 1, 0.05), Vec::Constant(1, 0.3)};
  const auto spec = interior_spec(0.0, 0.5, 1.0, Vec::Zero(1), obs, Vec::Constant(1, 0.6));
  const TimeGrid g = segment_grid(spec, 30);
  const auto k = GuidedKernel::build(spec, LinearAuxiliary::brownian(Vec::Zero(1), Mat::Constant(1, 1, 0.8)), g);
  RandomStream rng(2, {});
  const InnovationSegment z = draw_innovations(g, 1, rng);
  const PathSegment p = forward_guided(ou, th, k, z);
  const InnovationSegment back = inverse_innovation(ou, th, k, p);
  for (std::size_t i = 0; i + 2 < g.size(); ++i) CHECK(std::abs(back.increments[i][0] - z.increments[i][0]) < 1e-10);
  const PathSegment again = forward_guided(ou, th, k, back);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(again.values[i][0] - p.values[i][0]) < 1e-10);
}

TEST_CASE("inverse innovation on a hand-computable path") {
  const DiffusionModel m = driftless_bm(1);
  const auto spec = end_spec(0.0, 1.0, Vec::Zero(1), {Mat::Identity(1, 1), Mat::Constant(1, 1, 1.0), Vec::Constant(1, 1.0)});
  const TimeGrid g = uniform_grid(0.0, 1.0, 4);
  const auto k = GuidedKernel::build(spec, unit_bm(1), g);
  PathSegment line{g, {}};
  for (double t : g) line.values.push_back(Vec::Constant(1, t));
  const InnovationSegment z = inverse_innovation(m, Vec(), k, line);
  for (std::size_t i = 0; i + 1 < g.size(); ++i) {
    // r_end = (v - x) / (S - t + Sigma)
    const double pull = (1.0 - g[i]) / (1.0 - g[i] + 1.0);
    CHECK(z.increments[i][0] == doctest::Approx(0.25 - pull * 0.25).epsilon(1e-12));
  }
}

TEST_CASE("singular dispersion cannot be inverted") {
  DiffusionModel m = driftless_bm(1);
  m.dispersion = [](const Vec&, double, const Vec&) -> Mat { return Mat::Zero(1, 1); };
  const auto spec = end_spec(0.0, 1.0, Vec::Zero(1), {Mat::Identity(1, 1), Mat::Constant(1, 1, 1.0), Vec::Zero(1)});
  const TimeGrid g = uniform_grid(0.0, 1.0, 4);
  const auto k = GuidedKernel::build(spec, unit_bm(1), g);
  PathSegment p{g, std::vector<Vec>(5, Vec::Zero(1))};
  CHECK_THROWS_AS(inverse_innovation(m, Vec(), k, p), DomainError);
}

TEST_CASE("pCN refresh") {
  const TimeGrid g = uniform_grid(0.0, 1.0, 200);
  RandomStream rng(3, {});
  const InnovationSegment z = draw_innovations(g, 1, rng);
  const InnovationSegment near = pcn_refresh(z, 1.0 - 1e-10, rng);
  for (std::size_t i = 0; i < z.increments.size(); ++i)
    CHECK(std::abs(near.increments[i][0] - z.increments[i][0]) < 1e-4);
  CHECK_THROWS(pcn_refresh(z, 1.0, rng));

  // Pooled increments keep variance ds and lag-one correlation sqrt(rho).
  const double rho = 0.6, ds = 1.0 / 200;
  double v = 0.0, c = 0.0;
  std::size_t n = 0;
  for (int rep = 0; rep < 200; ++rep) {
    RandomStream r(4, {static_cast<std::uint64_t>(rep)});
    const InnovationSegment a = draw_innovations(g, 1, r);
    const InnovationSegment b = pcn_refresh(a, rho, r);
    for (std::size_t i = 0; i < a.increments.size(); ++i, ++n) {
      v += b.increments[i][0] * b.increments[i][0];
      c += a.increments[i][0] * b.increments[i][0];
    }
  }
  v /= n * ds;
  c /= n * ds;
  const double se = std::sqrt(2.0 / n);
  CHECK(std::abs(v - 1.0) < 3.0 * se);
  CHECK(std::abs(c - std::sqrt(rho)) < 3.0 * std::sqrt((1.0 + rho) / n));
}

TEST_CASE("log Psi vanishes when the model is its own auxiliary") {
  auto& reg = ModelRegistry::global();
  const Vec th = (Vec(4) << 1.0, 0.3, 0.4, 0.6).finished();
  const DiffusionModel osc = reg.make("oscillator");
  const Observation obs{(Mat(1, 2) << 1.0, 0.0).finished(), Mat::Constant(1, 1, 0.1), Vec::Constant(1, 0.2)};
  const auto spec = interior_spec(0.0, 0.5, 1.0, Vec::Zero(2), obs, Vec::Ones(2));
  const TimeGrid g = segment_grid(spec, 30);
  const auto k = GuidedKernel::build(spec, reg.get("oscillator").linear(th, 0), g);
  RandomStream rng(5, {});
  const WeightedPath w = weighted_proposal(osc, th, k, draw_innovations(g, 2, rng), obs);
  CHECK(w.log_psi == 0.0);
  CHECK(w.log_obs_ratio == 0.0);
  CHECK(log_psi(osc, th, k, w.path) == w.log_psi);
}

TEST_CASE("log Psi with a constant drift offset is a sum of pulls") {
  DiffusionModel m = driftless_bm(1);
  m.drift = [](const Vec&, double, const Vec&) -> Vec { return Vec::Constant(1, 0.7); };
  const Observation obs{Mat::Identity(1, 1), Mat::Constant(1, 1, 0.2), Vec::Constant(1, 0.1)};
  const auto spec = interior_spec(0.0, 0.5, 1.0, Vec::Zero(1), obs, Vec::Constant(1, 0.4));
  const TimeGrid g = segment_grid(spec, 25);
  const auto k = GuidedKernel::build(spec, unit_bm(1), g);
  RandomStream rng(6, {});
  const PathSegment p = forward_guided(m, Vec(), k, draw_innovations(g, 1, rng));
  double expected = 0.0;
  for (std::size_t i = 0; i + 1 < g.size(); ++i) expected += 0.7 * k.guiding_r_node(i, p.values[i])[0] * (g[i + 1] - g[i]);
  CHECK(log_psi(m, Vec(), k, p) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("log Psi refines at rate O(ds)") {
  const DiffusionModel ou = ModelRegistry::global().make("ou");
  const Vec th = (Vec(3) << 2.0, 0.5, 1.0).finished();
  const Observation obs{Mat::Identity(1, 1), Mat::Constant(1, 1, 0.1), Vec::Constant(1, 0.2)};
  const auto spec = interior_spec(0.0, 0.5, 1.0, Vec::Zero(1), obs, Vec::Constant(1, 0.4));
  const auto aux = unit_bm(1);
  // Common-refinement innovations: coarse increments are sums of fine ones.
  const std::vector<int> levels = {50, 100, 200, 400};
  std::vector<double> diff(levels.size() - 1, 0.0);
  const int reps = 40, finest = 400;
  for (int rep = 0; rep < reps; ++rep) {
    RandomStream rng(7, {static_cast<std::uint64_t>(rep)});
    const InnovationSegment fine = draw_innovations(segment_grid(spec, finest), 1, rng);
    std::vector<double> lp;
    for (int M : levels) {
      const TimeGrid gm = segment_grid(spec, M);
      const int r = finest / M;
      InnovationSegment z{gm, {}};
      for (std::size_t i = 0; i + 1 < gm.size(); ++i) {
        Vec s = Vec::Zero(1);
        for (int j = 0; j < r; ++j) s += fine.increments[i * r + j];
        z.increments.push_back(s);
      }
      const auto k = GuidedKernel::build(spec, aux, gm);
      lp.push_back(log_psi(ou, th, k, forward_guided(ou, th, k, z)));
    }
    for (std::size_t j = 0; j + 1 < lp.size(); ++j) diff[j] += std::abs(lp[j + 1] - lp[j]) / reps;
  }
  MESSAGE("mean |log Psi(2M) - log Psi(M)|: " << diff[0] << " " << diff[1] << " " << diff[2]);
  // Halving ds should roughly halve the difference.
  CHECK(diff[2] < 0.5 * diff[0]);
}

TEST_CASE("acceptance factors") {
  const double S = 0.5, T = 1.0;
  const Observation obs{Mat::Identity(1, 1), Mat::Constant(1, 1, 0.2), Vec::Constant(1, 0.3)};
  const Vec x0 = Vec::Constant(1, 0.1), xT = Vec::Constant(1, -0.4);
  const auto spec = interior_spec(0.0, S, T, x0, obs, xT);
  const TimeGrid g = segment_grid(spec, 10);
  const auto k = GuidedKernel::build(spec, unit_bm(1), g);
  RandomStream rng(8, {});
  const PathSegment p = forward_guided(driftless_bm(1), Vec(), k, draw_innovations(g, 1, rng));
  const AcceptanceFactors f = acceptance_factors(k, p, obs);
  CHECK(f.log_obs_ratio() == 0.0);
  // Stacked (V_S, X_T) | X_0 = x0: mean (x0, x0), cov [[S + 0.2, S], [S, T]].
  Mat C(2, 2);
  C << S + 0.2, S, S, T;
  const Vec y = (Vec(2) << 0.3, -0.4).finished();
  CHECK(f.log_ptilde == doctest::Approx(gaussian_logpdf(y, Vec::Constant(2, 0.1), C)).epsilon(1e-10));

  Observation noisier = obs;
  noisier.cov(0, 0) = 0.5;
  const AcceptanceFactors h = acceptance_factors(k, p, noisier);
  const double r = 0.3 - p.values[k.obs_index()][0];
  CHECK(h.log_obs_ratio() ==
        doctest::Approx(gaussian_logpdf(Vec::Constant(1, r), Vec::Zero(1), Mat::Constant(1, 1, 0.5)) -
                        gaussian_logpdf(Vec::Constant(1, r), Vec::Zero(1), Mat::Constant(1, 1, 0.2))));
}

TEST_CASE("an overflowing log weight rejects the proposal") {
  DiffusionModel m = driftless_bm(1);
  m.drift = [](const Vec&, double, const Vec&) -> Vec { return Vec::Constant(1, 1e200); };
  const Observation obs{Mat::Identity(1, 1), Mat::Constant(1, 1, 0.1), Vec::Zero(1)};
  const auto spec = interior_spec(0.0, 0.5, 1.0, Vec::Zero(1), obs, Vec::Zero(1));
  const TimeGrid g = segment_grid(spec, 50);
  const auto k = GuidedKernel::build(spec, unit_bm(1), g);
  const PathSegment p = forward_guided(m, Vec(), k, zeros(g, 1));
  for (const auto& x : p.values) REQUIRE(x.allFinite());
  CHECK_THROWS_AS(log_psi(m, Vec(), k, p), NumericError);
  CHECK_THROWS_AS(weighted_proposal(m, Vec(), k, zeros(g, 1), obs), ProposalFailure);
}
