#pragma once

#include "fbridge/kernel.hpp"
#include "fbridge/model.hpp"
#include "fbridge/random.hpp"

namespace fbridge {

// Driving noise of a guided proposal: one increment per grid cell, distributed
// N(0, ds I) under the reference (Wiener) measure.
struct InnovationSegment {
  TimeGrid grid;
  std::vector<Vec> increments;
};

struct WeightedPath {
  PathSegment path;
  double log_psi = 0.0;
  double log_obs_ratio = 0.0;
};

InnovationSegment draw_innovations(const TimeGrid& grid, int dim_noise, RandomStream& rng);

/// Z' = sqrt(rho) Z + sqrt(1 - rho) W with W a fresh Wiener increment sequence.
InnovationSegment pcn_refresh(const InnovationSegment& z, double rho, RandomStream& rng);

/// Euler scheme for dX = [b + a r~] dt + sigma dZ started at the kernel's left
/// anchor. Interior and start segments end exactly at the right anchor; when
/// the observation is noiseless the node at its time is projected onto
/// {L x = v}. Throws ProposalFailure on non-finite states.
PathSegment forward_guided(const DiffusionModel& model, const Vec& theta, const GuidedKernel& kernel,
                           const InnovationSegment& z);

/// Recovers the innovations of a path: dZ_k = sigma^{-1}(X_{k+1} - X_k - [b + a r~] ds).
/// Requires a square invertible dispersion.
InnovationSegment inverse_innovation(const DiffusionModel& model, const Vec& theta,
                                     const GuidedKernel& kernel, const PathSegment& path);

/// G(s, x) = (b - b~)' r~ - 1/2 tr([a - a~][H~ - r~ r~']).
double psi_integrand(const DiffusionModel& model, const Vec& theta, const GuidedKernel& kernel,
                     std::size_t k, const Vec& x);

/// Left-point Riemann sum of G over the grid cells (the singular right end
/// is never evaluated).
double log_psi(const DiffusionModel& model, const Vec& theta, const GuidedKernel& kernel,
               const PathSegment& path);

// Log-density terms entering the Metropolis-Hastings ratios for one segment.
struct AcceptanceFactors {
  double log_ptilde = 0.0;  // log p~ of the conditioning data at the left anchor
  double log_q = 0.0;       // log q(v - L X_S), observation noise density
  double log_qtilde = 0.0;  // log q~(v - L X_S), density used by the guiding term

  double log_obs_ratio() const { return log_q - log_qtilde; }
};

/// `obs` carries the observation's own noise covariance; the kernel carries
/// the covariance of q~. Identical densities give a zero observation ratio
/// even when singular.
AcceptanceFactors acceptance_factors(const GuidedKernel& kernel, const PathSegment& path,
                                     const Observation& obs);

/// Forward-simulates and weighs a proposal. Non-finite weights raise ProposalFailure.
WeightedPath weighted_proposal(const DiffusionModel& model, const Vec& theta,
                               const GuidedKernel& kernel, const InnovationSegment& z,
                               const Observation& obs);

}  // namespace fbridge
