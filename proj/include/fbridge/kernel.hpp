#pragma once

#include "fbridge/model.hpp"
#include "fbridge/types.hpp"

#include <memory>
#include <optional>

namespace fbridge {

enum class SegmentKind {
  Interior,  // full state at t_left and t_right, noisy linear observation at s_mid
  End,       // full state at t_left, noisy linear observation at t_right
  Start,     // noisy observation of X at t_left (prior on X), full state at t_right
};

struct SegmentSpec {
  SegmentKind kind = SegmentKind::Interior;
  double t_left = 0.0;
  double t_right = 1.0;
  double s_mid = 0.5;  // interior only
  Vec left_anchor;     // state at t_left; for start segments the current draw of X at t_left
  Vec right_anchor;    // state at t_right (interior, start)
  Observation obs;     // at s_mid (interior), t_right (end) or t_left (start)
  std::optional<StartPrior> start_prior;

  // Time of the noisy observation that the guiding term accounts for.
  double obs_time() const;
};

struct KernelOptions {
  // Largest RK4 substep for time-varying auxiliaries.
  double rk4_max_step = 1e-3;
  // Closed-form Schur-complement precision for auxiliaries with B == 0 and
  // constant coefficients. Disable to force the Cholesky route.
  bool closed_form_fast_path = true;
  // Added to every component of r~. Used as a negative control by validation.
  double debug_r_bias = 0.0;
};

// Phi(h, t), g_h(t) and K_h(t) of the auxiliary process for a horizon h.
struct TransitionMoments {
  Mat phi;
  Vec g;
  Mat K;
};

/// Moments of the auxiliary transition from time s to time t > s.
TransitionMoments transition_moments(const LinearAuxiliary& aux, double s, double t,
                                     const KernelOptions& options = {});

/// Phi(grid[k], grid[0]) for every node.
std::vector<Mat> fundamental_matrix(const LinearAuxiliary& aux, const TimeGrid& grid,
                                    const KernelOptions& options = {});

struct GainCovariance {
  std::vector<Vec> g;
  std::vector<Mat> K;
};

/// g_h(t) and K_h(t) at every grid node t <= horizon.
GainCovariance gain_and_covariance(const LinearAuxiliary& aux, double horizon, const TimeGrid& grid,
                                   const KernelOptions& options = {});

/// Posterior of X at t_left given V = L X + eta under a Gaussian prior.
StartPrior start_posterior(const StartPrior& prior, const Mat& L, const Mat& Sigma, const Vec& v);

enum class Branch {
  Stacked,      // t < S for interior segments: conditions on (V_S, X_T)
  Terminal,     // S <= t < T: conditions on X_T only
  Observation,  // end segments: conditions on V_S only
};

// Gaussian surrogate for the conditioning data given X_t = x:
// y ~ N(c + A x, cov), U = cov^{-1}.
struct NodeGeometry {
  Branch branch = Branch::Terminal;
  Mat A;
  Vec c;
  Mat cov;
  Mat U;
  double logdet_cov = 0.0;
  Mat P;  // A' U
  Mat H;  // A' U A
};

// Closed forms for auxiliaries with constant beta, constant a~ and B == 0.
class ConstantCoefficientPull {
 public:
  ConstantCoefficientPull(Vec beta, Mat atilde, Mat L, Mat Sigma, double S, double T, Vec v_S,
                          Vec x_T);

  Mat N(double t) const;
  Mat Q(double t) const;
  Vec h_S(double t, const Vec& x) const;
  Vec h_T(double t, const Vec& x) const;
  Vec r(double t, const Vec& x) const;
  Mat H(double t) const;
  // Inverse of the stacked covariance via the partitioned-matrix formula.
  Mat U(double t) const;
  double logdet_cov(double t) const;
  // Limit of r(t, x) as t increases to S. Requires Sigma positive definite.
  Vec limit_at_S(const Vec& x) const;
  const Vec& u_S() const { return u_S_; }

 private:
  Vec beta_;
  Mat atilde_, atilde_inv_, L_, Sigma_;
  Mat LaLt_;
  double logdet_a_ = 0.0;
  double S_, T_;
  Vec v_S_, x_T_, u_S_;
};

class KernelGeometry;

// Per-segment guiding term r~(t, x) = D log p~(t, x) and curvature
// H~(t) = -D^2 log p~(t, x), built from an auxiliary linear process.
class GuidedKernel {
 public:
  static GuidedKernel build(const SegmentSpec& spec, const LinearAuxiliary& aux,
                            const TimeGrid& grid, const KernelOptions& options = {});

  /// Same auxiliary geometry with different anchors.
  GuidedKernel rebind(const Vec& left_anchor, const Vec& right_anchor) const;

  const SegmentSpec& spec() const { return spec_; }
  const TimeGrid& grid() const;
  const LinearAuxiliary& auxiliary() const;
  std::size_t cells() const { return grid().size() - 1; }
  /// Index of the observation node (S) in the grid.
  std::size_t obs_index() const;

  Vec guiding_r(double t, const Vec& x) const;
  Mat guiding_H(double t) const;
  Vec guiding_r_node(std::size_t k, const Vec& x) const;
  const Mat& guiding_H_node(std::size_t k) const;

  /// log p~(t, x) including normalising constants.
  double log_ptilde(double t, const Vec& x) const;
  /// log p~(t_left, x_left): p~(t_a, x_a; S, v; T, x_T) for interior segments,
  /// p~(t_a, x_a; T, x_T) for start segments, p~_end(t_a, x_a) for end segments.
  double log_ptilde_at_left() const;

  /// Stacked precision U(t) (interior segments, t < S).
  Mat precision_U(double t) const;
  /// Limit of r~(t, x) as t increases to S (constant-coefficient interior kernels, Sigma PD).
  Vec limit_r_at_S(const Vec& x) const;

  // Per-node quantities.
  const NodeGeometry& node(std::size_t k) const;
  const TransitionMoments& to_obs(std::size_t k) const;       // toward S (k <= obs_index)
  const TransitionMoments& to_terminal(std::size_t k) const;  // toward T
  const Mat& phi_T_S() const;
  const Vec& aux_beta(std::size_t k) const;
  const Mat& aux_bmat(std::size_t k) const;
  const Mat& aux_diffusion(std::size_t k) const;

  /// True when the node at the observation time is projected onto {L x = v}.
  bool projects_observation() const;

 private:
  NodeGeometry geometry_at(double t) const;
  Vec conditioning_value(Branch b) const;
  Vec r_from(const NodeGeometry& g, const Vec& fk, const Vec& x) const;
  void bind_values();

  std::shared_ptr<const KernelGeometry> geo_;
  SegmentSpec spec_;
  std::vector<Vec> offsets_;  // P_k (y - c_k)
};

/// Interior, end and start specs with the common fields filled in.
SegmentSpec interior_spec(double t_left, double s_mid, double t_right, const Vec& x_left,
                          const Observation& obs, const Vec& x_right);
SegmentSpec end_spec(double t_left, double t_right, const Vec& x_left, const Observation& obs);
SegmentSpec start_spec(double t_left, double t_right, const StartPrior& prior,
                       const Observation& obs, const Vec& x_left, const Vec& x_right);

/// Grid for a segment: uniform with `steps` cells per sub-interval, so the
/// observation time of interior segments is a node.
TimeGrid segment_grid(const SegmentSpec& spec, int steps);

}  // namespace fbridge
