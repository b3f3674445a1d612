#pragma once

// Slow reference computations for linear-Gaussian problems. Nothing here
// calls into the kernel or bridge code; these routines only share Eigen.

#include "fbridge/kernel.hpp"
#include "fbridge/model.hpp"
#include "fbridge/random.hpp"

#include <functional>

namespace fbridge::oracle {

struct GaussianTransition {
  Mat phi;  // Phi(t, s)
  Vec g;    // mean offset
  Mat K;    // covariance
};

/// X_t | X_s = x ~ N(phi x + g, K) for the linear SDE, by fixed-step RK4 on
/// the moment equations with `steps` steps.
GaussianTransition gaussian_transition(const LinearAuxiliary& lin, double s, double t,
                                       int steps = 2000);

struct LinearStateSpace {
  std::vector<GaussianTransition> transitions;  // between consecutive observation times
  std::vector<Mat> projections;
  std::vector<Mat> noise_covs;
};

LinearStateSpace make_state_space(const LinearAuxiliary& lin, const ObservationScheme& scheme,
                                  int steps = 2000);

/// Predict/update recursion for the marginal log-likelihood of all observations.
double kalman_loglik(const LinearStateSpace& ssm, const std::vector<Vec>& observations,
                     const StartPrior& x0_prior);

struct StackedGaussian {
  Vec mean;
  Mat cov;
};

/// Joint law of (X_0, ..., X_n) stacked.
StackedGaussian joint_state_law(const LinearStateSpace& ssm, const StartPrior& x0_prior);

/// log-density of the stacked observations under the joint Gaussian.
double joint_gaussian_loglik(const LinearStateSpace& ssm, const std::vector<Vec>& observations,
                             const StartPrior& x0_prior);

/// Stacked states given all observations.
StackedGaussian joint_state_posterior(const LinearStateSpace& ssm,
                                      const std::vector<Vec>& observations,
                                      const StartPrior& x0_prior);

using ScalarField = std::function<double(const Vec&)>;

Vec finite_diff_grad(const ScalarField& f, const Vec& x, double h);
Mat finite_diff_hess(const ScalarField& f, const Vec& x, double h);

/// log p~(t, x) for a segment, evaluated from the joint Gaussian of
/// (X_S, X_T) given X_t = x.
double reference_log_ptilde(const LinearAuxiliary& lin, const SegmentSpec& spec, double t,
                            const Vec& x, int steps = 2000);

struct GaussianMoments {
  Vec mean;
  Mat cov;
};

/// Law of X_S given X_{t_a} = x_a, V_S = L X_S + eta and X_{t_b} = x_b.
GaussianMoments bridge_conditional(const LinearAuxiliary& lin, double t_a, const Vec& x_a, double S,
                                   const Observation& obs, double t_b, const Vec& x_b,
                                   int steps = 2000);

struct RejectionResult {
  Vec mean;
  Mat cov;
  Vec mean_se;
  std::size_t accepted = 0;
  std::size_t proposed = 0;
};

/// Exact draws of X_S given (x_a, V_S, x_b): X_S is drawn from the forward
/// transition and accepted with probability proportional to the observation
/// density times the transition density to x_b. Throws NumericError when the
/// acceptance rate falls below 1e-6.
RejectionResult rejection_bridge_sampler(const LinearAuxiliary& lin, double t_a, const Vec& x_a,
                                         double S, const Observation& obs, double t_b,
                                         const Vec& x_b, std::size_t n_samples, RandomStream& rng,
                                         int steps = 2000);

struct InverseGamma {
  double shape;
  double scale;
  double mean() const { return scale / (shape - 1.0); }
  double variance() const {
    return scale * scale / ((shape - 1.0) * (shape - 1.0) * (shape - 2.0));
  }
};

/// Posterior of eps for residuals r_i ~ N(0, eps I) under an inverse-gamma prior.
InverseGamma noise_variance_posterior(const InverseGamma& prior, const std::vector<Vec>& residuals);

}  // namespace fbridge::oracle
