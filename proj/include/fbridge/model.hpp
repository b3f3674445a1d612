#pragma once

#include "fbridge/random.hpp"
#include "fbridge/types.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>

namespace fbridge {

// dX = b(theta; t, X) dt + sigma(theta; t, X) dW with W of dimension dim_noise.
struct DiffusionModel {
  using DriftFn = std::function<Vec(const Vec& theta, double t, const Vec& x)>;
  using DispersionFn = std::function<Mat(const Vec& theta, double t, const Vec& x)>;

  int dim_state = 1;
  int dim_noise = 1;
  int parameter_dim = 0;
  DriftFn drift;
  DispersionFn dispersion;

  Mat diffusion(const Vec& theta, double t, const Vec& x) const {
    const Mat s = dispersion(theta, t, x);
    return s * s.transpose();
  }
};

enum class AuxStructure {
  Brownian,     // beta, sigma constant and B == 0
  Constant,     // beta, B, sigma constant
  TimeVarying,  // general continuous coefficients
};

// dX~ = (beta(t) + B(t) X~) dt + sigma(t) dW, the process whose Gaussian
// transition densities define the guiding term.
struct LinearAuxiliary {
  std::function<Vec(double)> beta;
  std::function<Mat(double)> bmat;
  std::function<Mat(double)> sigma;
  AuxStructure structure = AuxStructure::TimeVarying;

  bool is_constant() const { return structure == AuxStructure::Brownian; }
  int dim() const { return static_cast<int>(beta(0.0).size()); }
  Mat diffusion(double t) const {
    const Mat s = sigma(t);
    return s * s.transpose();
  }
  Vec drift(double t, const Vec& x) const { return beta(t) + bmat(t) * x; }

  static LinearAuxiliary brownian(const Vec& beta, const Mat& sigma);
  static LinearAuxiliary constant(const Vec& beta, const Mat& bmat, const Mat& sigma);
  static LinearAuxiliary time_varying(std::function<Vec(double)> beta,
                                      std::function<Mat(double)> bmat,
                                      std::function<Mat(double)> sigma);
};

// One observation V = L X + eta, eta ~ N(0, cov).
struct Observation {
  Mat L;
  Mat cov;
  Vec value;

  int rows() const { return static_cast<int>(L.rows()); }
  bool exact() const { return cov.isZero(0.0); }
};

struct ObservationScheme {
  std::vector<double> times;
  std::vector<Mat> projections;
  std::vector<Mat> noise_covs;
  std::vector<Vec> values;

  std::size_t size() const { return times.size(); }
  Observation at(std::size_t i) const { return {projections[i], noise_covs[i], values[i]}; }
  void push_back(double t, const Mat& L, const Mat& cov, const Vec& v);

  /// Throws ConfigError on ordering, shape or rank violations.
  void validate(int dim_state) const;
};

struct PathSegment {
  TimeGrid grid;
  std::vector<Vec> values;

  std::size_t cells() const { return grid.empty() ? 0 : grid.size() - 1; }
  const Vec& front() const { return values.front(); }
  const Vec& back() const { return values.back(); }
};

struct StartPrior {
  Vec mean;
  Mat cov;
};

/// Euler-Maruyama with caller-supplied Wiener increments (one dim_noise vector
/// per cell, already scaled by sqrt(ds)).
PathSegment simulate_euler(const DiffusionModel& model, const Vec& theta, const Vec& x0,
                           const TimeGrid& grid, const std::vector<Vec>& noise);

/// Euler-Maruyama drawing N(0, ds I) increments from the stream.
PathSegment simulate_euler(const DiffusionModel& model, const Vec& theta, const Vec& x0,
                           const TimeGrid& grid, RandomStream& rng);

/// Draws V_i = L_i X(t_i) + eta_i for each observation in the scheme. `states`
/// holds the latent state at each observation time.
std::vector<Vec> sample_observations(const std::vector<Vec>& states, const ObservationScheme& scheme,
                                     RandomStream& rng);

/// Draws one N(mean, cov) vector; cov may be singular (symmetric PSD).
Vec sample_gaussian(const Vec& mean, const Mat& cov, RandomStream& rng);

/// Symmetric PSD square root, clamping tiny negative eigenvalues.
Mat psd_sqrt(const Mat& cov);

// Builds the auxiliary process for a bridge segment given theta and the state
// the segment is conditioned to hit (absent for end segments).
struct AuxiliaryBuilder {
  std::function<LinearAuxiliary(const Vec& theta, double t_right, const Vec* x_right)> build;
  // True when the auxiliary depends on the right anchor (endpoint matching of
  // the diffusion coefficient for non-linear models).
  bool anchor_dependent = false;
  // Optional: values that determine the auxiliary for one segment. Kernels
  // are reused while these stay equal. Unset means theta, plus the anchor
  // when anchor_dependent.
  std::function<Vec(const Vec& theta, double t_right, const Vec* x_right)> key;
};

/// Constant auxiliary with beta = 0, B = 0 and sigma matched to the model's
/// dispersion at (t_right, x_right) (or at x = 0 for end segments).
AuxiliaryBuilder endpoint_matched_auxiliary(const DiffusionModel& model);

struct ModelEntry {
  std::function<DiffusionModel(int dim)> make;
  // Present for models that are themselves linear: the exact auxiliary.
  std::function<LinearAuxiliary(const Vec& theta, int dim)> linear;
  std::string description;
};

class ModelRegistry {
 public:
  static ModelRegistry& global();

  void add(const std::string& name, ModelEntry entry);
  bool contains(const std::string& name) const;
  const ModelEntry& get(const std::string& name) const;
  std::vector<std::string> names() const;

  DiffusionModel make(const std::string& name, int dim = 0) const;
  /// Exact linear auxiliary when the model is linear, endpoint-matched
  /// Brownian auxiliary otherwise.
  AuxiliaryBuilder auxiliary(const std::string& name, int dim = 0) const;

 private:
  ModelRegistry();
  std::map<std::string, ModelEntry> entries_;
};

}  // namespace fbridge
