#include "fbridge/model.hpp"

#include <doctest.h>

#include <cmath>

using namespace fbridge;

TEST_CASE("registry") {
  auto& reg = ModelRegistry::global();
  for (const char* name : {"bm", "ou", "2d-bm", "oscillator", "sine"}) CHECK(reg.contains(name));
  CHECK_FALSE(reg.contains("nope"));
  CHECK_THROWS_AS(reg.make("nope"), ConfigError);
  CHECK(reg.make("bm", 3).dim_state == 3);
  CHECK(reg.make("oscillator").parameter_dim == 4);
}

TEST_CASE("wrong parameter length is a config error") {
  const DiffusionModel ou = ModelRegistry::global().make("ou");
  CHECK_THROWS_AS(ou.drift(Vec::Ones(2), 0.0, Vec::Zero(1)), ConfigError);
}

TEST_CASE("linear forms agree with the models") {
  auto& reg = ModelRegistry::global();
  const Vec th = (Vec(4) << 1.1, 0.3, 0.5, 0.7).finished();
  const DiffusionModel osc = reg.make("oscillator");
  const LinearAuxiliary lin = reg.get("oscillator").linear(th, 0);
  const Vec x = (Vec(2) << 0.4, -1.2).finished();
  CHECK((osc.drift(th, 0.0, x) - lin.drift(0.0, x)).norm() < 1e-15);
  CHECK((osc.diffusion(th, 0.0, x) - lin.diffusion(0.0)).norm() < 1e-15);
}

TEST_CASE("endpoint-matched auxiliary uses sigma at the right anchor") {
  const DiffusionModel ou = ModelRegistry::global().make("ou");
  const AuxiliaryBuilder aux = endpoint_matched_auxiliary(ou);
  CHECK(aux.anchor_dependent);
  const Vec x = Vec::Constant(1, 2.0);
  const LinearAuxiliary lin = aux.build((Vec(3) << 1.0, 0.0, 0.8).finished(), 1.0, &x);
  CHECK(lin.is_constant());
  CHECK(lin.diffusion(0.3)(0, 0) == doctest::Approx(0.64));
}

TEST_CASE("euler with zero noise follows the explicit scheme") {
  const DiffusionModel ou = ModelRegistry::global().make("ou");
  const Vec th = (Vec(3) << 2.0, 1.0, 0.5).finished();
  const TimeGrid grid = uniform_grid(0.0, 1.0, 10);
  std::vector<Vec> zero(10, Vec::Zero(1));
  const PathSegment p = simulate_euler(ou, th, Vec::Constant(1, 0.0), grid, zero);
  double x = 0.0;
  for (int k = 0; k < 10; ++k) x += 2.0 * (1.0 - x) * 0.1;
  CHECK(p.back()[0] == doctest::Approx(x).epsilon(1e-14));
  CHECK(p.cells() == 10);
}

TEST_CASE("noiseless observations are exact projections") {
  ObservationScheme s;
  Mat L(1, 2);
  L << 1.0, 1.0;
  s.push_back(0.0, L, Mat::Zero(1, 1), Vec::Zero(1));
  s.push_back(1.0, L, Mat::Zero(1, 1), Vec::Zero(1));
  std::vector<Vec> states = {(Vec(2) << 1.0, 2.0).finished(), (Vec(2) << -1.0, 0.5).finished()};
  RandomStream rng(1, {});
  const auto v = sample_observations(states, s, rng);
  CHECK(v[0][0] == 3.0);
  CHECK(v[1][0] == -0.5);
}

TEST_CASE("observation scheme validation") {
  ObservationScheme s;
  s.push_back(0.0, Mat::Identity(1, 1), Mat::Identity(1, 1), Vec::Zero(1));
  s.push_back(1.0, Mat::Identity(1, 1), Mat::Identity(1, 1), Vec::Zero(1));
  CHECK_NOTHROW(s.validate(1));
  CHECK_THROWS_AS(s.validate(2), ConfigError);

  ObservationScheme t = s;
  t.times[1] = 0.0;
  CHECK_THROWS_AS(t.validate(1), ConfigError);

  ObservationScheme u = s;
  u.noise_covs[0] = -Mat::Identity(1, 1);
  CHECK_THROWS_AS(u.validate(1), ConfigError);

  ObservationScheme w;
  w.push_back(0.0, Mat::Zero(1, 2), Mat::Identity(1, 1), Vec::Zero(1));
  CHECK_THROWS_AS(w.validate(2), ConfigError);
}

TEST_CASE("gaussian sampling handles singular covariance") {
  Mat C = Mat::Zero(2, 2);
  C(0, 0) = 4.0;
  RandomStream rng(2, {});
  double m2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const Vec x = sample_gaussian(Vec::Ones(2), C, rng);
    REQUIRE(x[1] == doctest::Approx(1.0));
    m2 += (x[0] - 1.0) * (x[0] - 1.0);
  }
  CHECK(m2 / n == doctest::Approx(4.0).epsilon(0.05));
  const Mat R = psd_sqrt(C);
  CHECK((R * R - C).norm() < 1e-12);
}
