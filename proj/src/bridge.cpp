#include "fbridge/bridge.hpp"

#include <cmath>
#include <sstream>

namespace fbridge {

namespace {

void require_matching_grid(const TimeGrid& a, const TimeGrid& b, const char* what) {
  if (a.size() != b.size())
    throw ConfigError(std::string(what) + ": grid does not match the kernel grid");
  for (std::size_t k = 0; k < a.size(); ++k)
    if (a[k] != b[k]) throw ConfigError(std::string(what) + ": grid does not match the kernel grid");
}

std::string node_context(std::size_t k, double t) {
  std::ostringstream os;
  os << "node " << k << " (t=" << t << ")";
  return os.str();
}

}  // namespace

InnovationSegment draw_innovations(const TimeGrid& grid, int dim_noise, RandomStream& rng) {
  InnovationSegment z;
  z.grid = grid;
  z.increments.reserve(grid.size());
  for (std::size_t k = 0; k + 1 < grid.size(); ++k)
    z.increments.push_back(std::sqrt(grid[k + 1] - grid[k]) * rng.normal_vector(dim_noise));
  return z;
}

InnovationSegment pcn_refresh(const InnovationSegment& z, double rho, RandomStream& rng) {
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("pCN memory rho must lie in [0, 1)");
  InnovationSegment out;
  out.grid = z.grid;
  out.increments.reserve(z.increments.size());
  const double keep = std::sqrt(rho);
  const double fresh = std::sqrt(1.0 - rho);
  for (std::size_t k = 0; k < z.increments.size(); ++k) {
    const double ds = z.grid[k + 1] - z.grid[k];
    const Vec w = std::sqrt(ds) * rng.normal_vector(z.increments[k].size());
    out.increments.push_back(keep * z.increments[k] + fresh * w);
  }
  return out;
}

PathSegment forward_guided(const DiffusionModel& model, const Vec& theta, const GuidedKernel& kernel,
                           const InnovationSegment& z) {
  const TimeGrid& grid = kernel.grid();
  require_matching_grid(z.grid, grid, "forward_guided");
  const SegmentSpec& spec = kernel.spec();
  const std::size_t K = grid.size() - 1;
  const std::size_t k_obs = kernel.obs_index();
  const bool project = kernel.projects_observation();
  Mat projector;
  Vec obs_point;
  if (project) {
    const Mat& L = spec.obs.L;
    projector = L.transpose() * (L * L.transpose()).llt().solve(Mat::Identity(L.rows(), L.rows()));
  }

  PathSegment path;
  path.grid = grid;
  path.values.reserve(K + 1);
  path.values.push_back(spec.left_anchor);
  for (std::size_t k = 0; k < K; ++k) {
    const double t = grid[k];
    const double dt = grid[k + 1] - t;
    const Vec& x = path.values.back();
    const Mat s = model.dispersion(theta, t, x);
    const Vec drift = model.drift(theta, t, x) + s * (s.transpose() * kernel.guiding_r_node(k, x));
    Vec next = x + drift * dt + s * z.increments[k];
    if (project && k + 1 == k_obs) next += projector * (spec.obs.value - spec.obs.L * next);
    if (k + 1 == K && spec.kind != SegmentKind::End) next = spec.right_anchor;
    if (!next.allFinite())
      throw ProposalFailure("guided proposal diverged at " + node_context(k + 1, grid[k + 1]));
    path.values.push_back(std::move(next));
  }
  return path;
}

InnovationSegment inverse_innovation(const DiffusionModel& model, const Vec& theta,
                                     const GuidedKernel& kernel, const PathSegment& path) {
  const TimeGrid& grid = kernel.grid();
  require_matching_grid(path.grid, grid, "inverse_innovation");
  if (model.dim_noise != model.dim_state)
    throw DomainError("inverse_innovation needs a square dispersion matrix");
  InnovationSegment z;
  z.grid = grid;
  z.increments.reserve(grid.size());
  Mat s_prev;
  Eigen::PartialPivLU<Mat> lu;
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    const double t = grid[k];
    const double dt = grid[k + 1] - t;
    const Vec& x = path.values[k];
    const Mat s = model.dispersion(theta, t, x);
    if (k == 0 || s != s_prev) {
      lu.compute(s);
      if (!(std::abs(lu.determinant()) > 0.0) || lu.rcond() < 1e-14)
        throw DomainError("dispersion is singular at " + node_context(k, t));
      s_prev = s;
    }
    const Vec drift = model.drift(theta, t, x) + s * (s.transpose() * kernel.guiding_r_node(k, x));
    z.increments.push_back(lu.solve(path.values[k + 1] - x - drift * dt));
  }
  return z;
}

double psi_integrand(const DiffusionModel& model, const Vec& theta, const GuidedKernel& kernel,
                     std::size_t k, const Vec& x) {
  const double t = kernel.grid()[k];
  const Vec r = kernel.guiding_r_node(k, x);
  Vec db = model.drift(theta, t, x);
  db -= kernel.aux_beta(k);
  db.noalias() -= kernel.aux_bmat(k) * x;
  Mat da = model.diffusion(theta, t, x);
  da -= kernel.aux_diffusion(k);
  const double trace_term =
      da.cwiseProduct(kernel.guiding_H_node(k).transpose()).sum() - r.dot(da * r);
  return db.dot(r) - 0.5 * trace_term;
}

double log_psi(const DiffusionModel& model, const Vec& theta, const GuidedKernel& kernel,
               const PathSegment& path) {
  const TimeGrid& grid = kernel.grid();
  require_matching_grid(path.grid, grid, "log_psi");
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    const double g = psi_integrand(model, theta, kernel, k, path.values[k]);
    if (!std::isfinite(g))
      throw NumericError("non-finite log-weight integrand at " + node_context(k, grid[k]));
    total += g * (grid[k + 1] - grid[k]);
  }
  return total;
}

AcceptanceFactors acceptance_factors(const GuidedKernel& kernel, const PathSegment& path,
                                     const Observation& obs) {
  AcceptanceFactors f;
  f.log_ptilde = kernel.log_ptilde(kernel.spec().t_left, path.front());
  if (kernel.spec().kind == SegmentKind::Start) return f;
  const Mat& cov_tilde = kernel.spec().obs.cov;
  if (obs.cov == cov_tilde && obs.exact()) return f;
  const Vec x_s = path.values.at(kernel.obs_index());
  const Vec residual = obs.value - obs.L * x_s;
  const Vec zero = Vec::Zero(residual.size());
  f.log_q = gaussian_logpdf(residual, zero, obs.cov);
  f.log_qtilde = obs.cov == cov_tilde ? f.log_q : gaussian_logpdf(residual, zero, cov_tilde);
  return f;
}

WeightedPath weighted_proposal(const DiffusionModel& model, const Vec& theta,
                               const GuidedKernel& kernel, const InnovationSegment& z,
                               const Observation& obs) {
  WeightedPath w;
  w.path = forward_guided(model, theta, kernel, z);
  try {
    w.log_psi = log_psi(model, theta, kernel, w.path);
  } catch (const ProposalFailure&) {
    throw;
  } catch (const NumericError& e) {
    throw ProposalFailure(e.what());
  }
  w.log_obs_ratio = acceptance_factors(kernel, w.path, obs).log_obs_ratio();
  return w;
}

}  // namespace fbridge
