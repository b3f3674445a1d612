#include "fbridge/oracle.hpp"

#include <doctest.h>

#include <cmath>

using namespace fbridge;

TEST_CASE("OU transition matches the analytic moments") {
  const double a = 1.3, mu = 0.4, s = 0.7, h = 0.9;
  const LinearAuxiliary lin =
      LinearAuxiliary::constant(Vec::Constant(1, a * mu), Mat::Constant(1, 1, -a), Mat::Constant(1, 1, s));
  const auto tr = oracle::gaussian_transition(lin, 0.2, 0.2 + h);
  CHECK(tr.phi(0, 0) == doctest::Approx(std::exp(-a * h)).epsilon(1e-12));
  CHECK(tr.g[0] == doctest::Approx(mu * (1.0 - std::exp(-a * h))).epsilon(1e-12));
  CHECK(tr.K(0, 0) == doctest::Approx(s * s * (1.0 - std::exp(-2.0 * a * h)) / (2.0 * a)).epsilon(1e-12));
}

TEST_CASE("finite differences are exact on quadratics") {
  Mat A(2, 2);
  A << 2.0, 0.5, 0.5, 1.0;
  const Vec b = (Vec(2) << 1.0, -1.0).finished();
  const oracle::ScalarField f = [&](const Vec& x) { return 0.5 * x.dot(A * x) + b.dot(x); };
  const Vec x = (Vec(2) << 0.3, 0.7).finished();
  CHECK((oracle::finite_diff_grad(f, x, 1e-2) - (A * x + b)).norm() < 1e-10);
  CHECK((oracle::finite_diff_hess(f, x, 1e-2) - A).norm() < 1e-8);
}

TEST_CASE("Kalman likelihood equals the joint Gaussian") {
  const LinearAuxiliary lin = ModelRegistry::global().get("ou").linear((Vec(3) << 1.0, 0.5, 0.8).finished(), 0);
  ObservationScheme s;
  RandomStream rng(4, {});
  for (int i = 0; i < 6; ++i)
    s.push_back(0.3 * i, Mat::Identity(1, 1), 0.1 * Mat::Identity(1, 1), rng.normal_vector(1));
  const StartPrior prior{Vec::Zero(1), Mat::Identity(1, 1)};
  const auto ssm = oracle::make_state_space(lin, s, 500);
  CHECK(oracle::kalman_loglik(ssm, s.values, prior) ==
        doctest::Approx(oracle::joint_gaussian_loglik(ssm, s.values, prior)).epsilon(1e-10));
  const auto post = oracle::joint_state_posterior(ssm, s.values, prior);
  CHECK(post.mean.size() == 6);
  CHECK(post.cov.llt().info() == Eigen::Success);
}

TEST_CASE("rejection sampler agrees with the conditional Gaussian") {
  const LinearAuxiliary lin = LinearAuxiliary::brownian(Vec::Constant(1, 0.2), Mat::Identity(1, 1));
  const Observation obs{Mat::Identity(1, 1), 0.5 * Mat::Identity(1, 1), Vec::Constant(1, 0.8)};
  const Vec xa = Vec::Zero(1), xb = Vec::Constant(1, 0.3);
  const auto exact = oracle::bridge_conditional(lin, 0.0, xa, 0.5, obs, 1.0, xb);
  RandomStream rng(9, {});
  const auto rej = oracle::rejection_bridge_sampler(lin, 0.0, xa, 0.5, obs, 1.0, xb, 20000, rng);
  CHECK(std::abs(rej.mean[0] - exact.mean[0]) < 4.0 * rej.mean_se[0]);
  CHECK(rej.cov(0, 0) == doctest::Approx(exact.cov(0, 0)).epsilon(0.05));
}

TEST_CASE("noise variance posterior") {
  const oracle::InverseGamma prior{2.0, 0.1};
  const std::vector<Vec> r = {Vec::Constant(1, 0.3), Vec::Constant(2, 0.1)};
  const auto post = oracle::noise_variance_posterior(prior, r);
  CHECK(post.shape == doctest::Approx(2.0 + 1.5));
  CHECK(post.scale == doctest::Approx(0.1 + 0.5 * (0.09 + 0.02)));
}
