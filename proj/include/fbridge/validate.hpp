#pragma once

// Oracle-backed self checks. Slow, desk-scale problems only.

#include "fbridge/kernel.hpp"
#include "fbridge/model.hpp"
#include "fbridge/random.hpp"

#include <cstdint>
#include <ostream>
#include <string>

namespace fbridge {

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct ValidationOptions {
  std::uint64_t seed = 20240611;
  int configs = 200;
  KernelOptions kernel;  // debug_r_bias here perturbs r~ as a negative control
};

struct ValidationReport {
  std::vector<CheckResult> checks;
  bool all_passed() const;
};

// A randomly drawn guided-kernel problem with an evaluation point.
struct KernelCase {
  LinearAuxiliary aux;
  SegmentSpec spec;
  TimeGrid grid;
  double t = 0.0;
  Vec x;
};

/// Random d <= 4, m <= d, PD Sigma, random auxiliary structure. `after_obs`
/// places t in [S, T) for interior cases.
KernelCase random_kernel_case(RandomStream& rng, SegmentKind kind, bool after_obs);

/// r~ against finite differences of the oracle log p~ (relative, 1e-6) and
/// H~ against the negative finite-difference Hessian (absolute, 1e-5).
/// Returns {gradient, hessian}.
std::pair<CheckResult, CheckResult> check_gradient_consistency(int configs, std::uint64_t seed,
                                                               const KernelOptions& options,
                                                               bool end_segments);

/// Closed forms for constant coefficients with B == 0 against the Cholesky route.
CheckResult check_closed_form(int points, std::uint64_t seed);

/// 2d Brownian example: N(t) = (S-t)(T-S) / ((S-t)(T-S) + Sigma (T-t)).
CheckResult check_brownian_example(int points);

/// Kalman recursion against the stacked joint Gaussian.
CheckResult check_kalman_joint(std::uint64_t seed);

/// forward_guided after inverse_innovation reproduces guided paths.
CheckResult check_round_trip(std::uint64_t seed, int segments_per_kind);

/// log Psi vanishes when the model equals its auxiliary.
CheckResult check_linear_exactness(std::uint64_t seed, int segments);

/// Two short chains with the same seed give identical traces.
CheckResult check_determinism(std::uint64_t seed);

ValidationReport run_validation(const ValidationOptions& options);

/// One line per check: PASS/FAIL, name, max error, tolerance.
void print_report(std::ostream& os, const ValidationReport& report);

}  // namespace fbridge
