#include "fbridge/model.hpp"

#include <cmath>
#include <sstream>

namespace fbridge {

LinearAuxiliary LinearAuxiliary::brownian(const Vec& beta, const Mat& sigma) {
  const Eigen::Index d = beta.size();
  return {[beta](double) { return beta; }, [d](double) -> Mat { return Mat::Zero(d, d); },
          [sigma](double) { return sigma; }, AuxStructure::Brownian};
}

LinearAuxiliary LinearAuxiliary::constant(const Vec& beta, const Mat& bmat, const Mat& sigma) {
  return {[beta](double) { return beta; }, [bmat](double) { return bmat; },
          [sigma](double) { return sigma; }, AuxStructure::Constant};
}

LinearAuxiliary LinearAuxiliary::time_varying(std::function<Vec(double)> beta,
                                              std::function<Mat(double)> bmat,
                                              std::function<Mat(double)> sigma) {
  return {std::move(beta), std::move(bmat), std::move(sigma), AuxStructure::TimeVarying};
}

void ObservationScheme::push_back(double t, const Mat& L, const Mat& cov, const Vec& v) {
  times.push_back(t);
  projections.push_back(L);
  noise_covs.push_back(cov);
  values.push_back(v);
}

void ObservationScheme::validate(int dim_state) const {
  const std::size_t n = times.size();
  if (projections.size() != n || noise_covs.size() != n || values.size() != n)
    throw ConfigError("observation scheme: inconsistent number of entries");
  for (std::size_t i = 0; i < n; ++i) {
    std::ostringstream where;
    where << "observation " << i << " (t=" << times[i] << ")";
    if (i > 0 && !(times[i] > times[i - 1]))
      throw ConfigError(where.str() + ": times must be strictly increasing");
    const Mat& L = projections[i];
    if (L.cols() != dim_state)
      throw ConfigError(where.str() + ": L has " + std::to_string(L.cols()) +
                        " columns, state dimension is " + std::to_string(dim_state));
    if (L.rows() < 1 || L.rows() > dim_state)
      throw ConfigError(where.str() + ": L must have between 1 and d rows");
    Eigen::FullPivLU<Mat> lu(L);
    if (lu.rank() != L.rows()) throw ConfigError(where.str() + ": L must have full row rank");
    const Mat& S = noise_covs[i];
    if (S.rows() != L.rows() || S.cols() != L.rows())
      throw ConfigError(where.str() + ": noise covariance has the wrong shape");
    if (!S.isApprox(S.transpose(), 1e-12) && !S.isZero(0.0))
      throw ConfigError(where.str() + ": noise covariance must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(S);
    if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, S.norm()))
      throw ConfigError(where.str() + ": noise covariance must be positive semidefinite");
    if (values[i].size() != L.rows())
      throw ConfigError(where.str() + ": value length does not match L");
  }
}

namespace {

void check_finite(const Vec& drift, const Mat& disp, double t) {
  if (!drift.allFinite() || !disp.allFinite()) {
    std::ostringstream os;
    os << "non-finite drift or dispersion at t=" << t;
    throw NumericError(os.str());
  }
}

}  // namespace

PathSegment simulate_euler(const DiffusionModel& model, const Vec& theta, const Vec& x0,
                           const TimeGrid& grid, const std::vector<Vec>& noise) {
  if (grid.size() < 2 || !is_strictly_increasing(grid))
    throw ConfigError("simulate_euler: grid must be strictly increasing with at least two nodes");
  if (noise.size() != grid.size() - 1)
    throw ConfigError("simulate_euler: need one noise increment per grid cell");
  if (x0.size() != model.dim_state) throw ConfigError("simulate_euler: x0 has the wrong dimension");

  PathSegment path;
  path.grid = grid;
  path.values.reserve(grid.size());
  path.values.push_back(x0);
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    const double t = grid[k];
    const double dt = grid[k + 1] - t;
    const Vec& x = path.values.back();
    const Vec b = model.drift(theta, t, x);
    const Mat s = model.dispersion(theta, t, x);
    check_finite(b, s, t);
    path.values.push_back(x + b * dt + s * noise[k]);
  }
  return path;
}

PathSegment simulate_euler(const DiffusionModel& model, const Vec& theta, const Vec& x0,
                           const TimeGrid& grid, RandomStream& rng) {
  std::vector<Vec> noise;
  noise.reserve(grid.size());
  for (std::size_t k = 0; k + 1 < grid.size(); ++k)
    noise.push_back(std::sqrt(grid[k + 1] - grid[k]) * rng.normal_vector(model.dim_noise));
  return simulate_euler(model, theta, x0, grid, noise);
}

Mat psd_sqrt(const Mat& cov) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (cov + cov.transpose()));
  const Vec root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

Vec sample_gaussian(const Vec& mean, const Mat& cov, RandomStream& rng) {
  if (cov.isZero(0.0)) return mean;
  Eigen::LLT<Mat> llt(cov);
  const Vec z = rng.normal_vector(mean.size());
  if (llt.info() == Eigen::Success) return mean + llt.matrixL() * z;
  return mean + psd_sqrt(cov) * z;
}

std::vector<Vec> sample_observations(const std::vector<Vec>& states, const ObservationScheme& scheme,
                                     RandomStream& rng) {
  if (states.size() != scheme.size())
    throw ConfigError("sample_observations: need one state per observation time");
  std::vector<Vec> out;
  out.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    const Mat& L = scheme.projections[i];
    if (L.cols() != states[i].size())
      throw ConfigError("sample_observations: L_" + std::to_string(i) +
                        " does not match the state dimension");
    out.push_back(sample_gaussian(L * states[i], scheme.noise_covs[i], rng));
  }
  return out;
}

AuxiliaryBuilder endpoint_matched_auxiliary(const DiffusionModel& model) {
  AuxiliaryBuilder out;
  out.anchor_dependent = true;
  out.build = [model](const Vec& theta, double t_right, const Vec* x_right) {
    const Vec x = x_right ? *x_right : Vec::Zero(model.dim_state);
    return LinearAuxiliary::brownian(Vec::Zero(model.dim_state),
                                     model.dispersion(theta, t_right, x));
  };
  out.key = [model](const Vec& theta, double t_right, const Vec* x_right) {
    const Vec x = x_right ? *x_right : Vec::Zero(model.dim_state);
    const Mat s = model.dispersion(theta, t_right, x);
    return Vec(s.reshaped());
  };
  return out;
}

// Built-in models -----------------------------------------------------------

namespace {

void require_params(const Vec& theta, Eigen::Index n, const char* name) {
  if (theta.size() != n)
    throw ConfigError(std::string("model ") + name + " expects " + std::to_string(n) +
                      " parameters, got " + std::to_string(theta.size()));
}

ModelEntry brownian_with_drift() {
  ModelEntry e;
  e.description = "Brownian motion with drift vector theta: dX = theta dt + dW";
  e.make = [](int dim) {
    const int d = dim > 0 ? dim : 1;
    DiffusionModel m;
    m.dim_state = m.dim_noise = m.parameter_dim = d;
    m.drift = [d](const Vec& th, double, const Vec&) -> Vec {
      require_params(th, d, "bm");
      return th;
    };
    m.dispersion = [d](const Vec&, double, const Vec&) -> Mat { return Mat::Identity(d, d); };
    return m;
  };
  e.linear = [](const Vec& th, int dim) {
    const int d = dim > 0 ? dim : 1;
    return LinearAuxiliary::brownian(th, Mat::Identity(d, d));
  };
  return e;
}

ModelEntry ornstein_uhlenbeck() {
  ModelEntry e;
  e.description = "Ornstein-Uhlenbeck: dX = theta1 (theta2 - X) dt + theta3 dW";
  e.make = [](int) {
    DiffusionModel m;
    m.dim_state = m.dim_noise = 1;
    m.parameter_dim = 3;
    // Written as beta + B x so that it coincides bitwise with its linear auxiliary.
    m.drift = [](const Vec& th, double, const Vec& x) -> Vec {
      require_params(th, 3, "ou");
      return Vec::Constant(1, th[0] * th[1]) + Mat::Constant(1, 1, -th[0]) * x;
    };
    m.dispersion = [](const Vec& th, double, const Vec&) -> Mat {
      return Mat::Constant(1, 1, th[2]);
    };
    return m;
  };
  e.linear = [](const Vec& th, int) {
    require_params(th, 3, "ou");
    return LinearAuxiliary::constant(Vec::Constant(1, th[0] * th[1]), Mat::Constant(1, 1, -th[0]),
                                     Mat::Constant(1, 1, th[2]));
  };
  return e;
}

ModelEntry two_dim_brownian() {
  ModelEntry e;
  e.description = "two-dimensional Brownian motion with dispersion diag(theta1, theta2)";
  e.make = [](int) {
    DiffusionModel m;
    m.dim_state = m.dim_noise = m.parameter_dim = 2;
    m.drift = [](const Vec& th, double, const Vec&) -> Vec {
      require_params(th, 2, "2d-bm");
      return Vec::Zero(2);
    };
    m.dispersion = [](const Vec& th, double, const Vec&) -> Mat {
      return th.head(2).asDiagonal();
    };
    return m;
  };
  e.linear = [](const Vec& th, int) {
    require_params(th, 2, "2d-bm");
    return LinearAuxiliary::brownian(Vec::Zero(2), th.head(2).asDiagonal());
  };
  return e;
}

ModelEntry sine_drift() {
  ModelEntry e;
  e.description = "periodic drift: dX = theta1 sin(X - theta2) dt + theta3 dW";
  e.make = [](int) {
    DiffusionModel m;
    m.dim_state = m.dim_noise = 1;
    m.parameter_dim = 3;
    m.drift = [](const Vec& th, double, const Vec& x) -> Vec {
      require_params(th, 3, "sine");
      return Vec::Constant(1, th[0] * std::sin(x[0] - th[1]));
    };
    m.dispersion = [](const Vec& th, double, const Vec&) -> Mat {
      return Mat::Constant(1, 1, th[2]);
    };
    return m;
  };
  return e;
}

Mat oscillator_matrix(const Vec& th) {
  Mat B(2, 2);
  B << 0.0, 1.0, -th[0], -th[1];
  return B;
}

ModelEntry damped_oscillator() {
  ModelEntry e;
  e.description =
      "damped stochastic oscillator: dX1 = X2 dt + theta3 dW1, dX2 = (-theta1 X1 - theta2 X2) dt + "
      "theta4 dW2";
  e.make = [](int) {
    DiffusionModel m;
    m.dim_state = m.dim_noise = 2;
    m.parameter_dim = 4;
    m.drift = [](const Vec& th, double, const Vec& x) -> Vec {
      require_params(th, 4, "oscillator");
      return oscillator_matrix(th) * x;
    };
    m.dispersion = [](const Vec& th, double, const Vec&) -> Mat {
      return th.segment(2, 2).asDiagonal();
    };
    return m;
  };
  e.linear = [](const Vec& th, int) {
    require_params(th, 4, "oscillator");
    return LinearAuxiliary::constant(Vec::Zero(2), oscillator_matrix(th),
                                     th.segment(2, 2).asDiagonal());
  };
  return e;
}

}  // namespace

ModelRegistry::ModelRegistry() {
  entries_["bm"] = brownian_with_drift();
  entries_["ou"] = ornstein_uhlenbeck();
  entries_["2d-bm"] = two_dim_brownian();
  entries_["oscillator"] = damped_oscillator();
  entries_["sine"] = sine_drift();
}

ModelRegistry& ModelRegistry::global() {
  static ModelRegistry registry;
  return registry;
}

void ModelRegistry::add(const std::string& name, ModelEntry entry) {
  if (!entry.make) throw ConfigError("model " + name + ": missing factory");
  entries_[name] = std::move(entry);
}

bool ModelRegistry::contains(const std::string& name) const { return entries_.count(name) > 0; }

const ModelEntry& ModelRegistry::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown model '" + name + "'");
  return it->second;
}

std::vector<std::string> ModelRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

DiffusionModel ModelRegistry::make(const std::string& name, int dim) const {
  return get(name).make(dim);
}

AuxiliaryBuilder ModelRegistry::auxiliary(const std::string& name, int dim) const {
  const ModelEntry& e = get(name);
  if (!e.linear) return endpoint_matched_auxiliary(e.make(dim));
  AuxiliaryBuilder out;
  out.build = [lin = e.linear, dim](const Vec& theta, double, const Vec*) { return lin(theta, dim); };
  return out;
}

}  // namespace fbridge
