#include "fbridge/kernel.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

namespace fbridge {

namespace {

std::string at_time(double t) {
  std::ostringstream os;
  os.precision(17);
  os << "t=" << t;
  return os.str();
}

TransitionMoments identity_moments(Eigen::Index d) {
  return {Mat::Identity(d, d), Vec::Zero(d), Mat::Zero(d, d)};
}

// Moments from s to h given moments of the cell [s, u] and of [u, h].
TransitionMoments compose(const TransitionMoments& cell, const TransitionMoments& rest) {
  TransitionMoments out;
  out.phi = rest.phi * cell.phi;
  out.g = rest.g + rest.phi * cell.g;
  out.K = rest.K + rest.phi * cell.K * rest.phi.transpose();
  out.K = (0.5 * (out.K + out.K.transpose())).eval();
  return out;
}

TransitionMoments van_loan(const Vec& beta, const Mat& B, const Mat& atilde, double h) {
  const Eigen::Index d = B.rows();
  Mat C = Mat::Zero(2 * d, 2 * d);
  C.topLeftCorner(d, d) = -B * h;
  C.topRightCorner(d, d) = atilde * h;
  C.bottomRightCorner(d, d) = B.transpose() * h;
  const Mat E = C.exp();
  TransitionMoments out;
  out.phi = E.bottomRightCorner(d, d).transpose();
  out.K = out.phi * E.topRightCorner(d, d);
  out.K = (0.5 * (out.K + out.K.transpose())).eval();

  Mat D = Mat::Zero(d + 1, d + 1);
  D.topLeftCorner(d, d) = B * h;
  D.topRightCorner(d, 1) = beta * h;
  out.g = D.exp().topRightCorner(d, 1);
  return out;
}

struct MomentState {
  Mat Y;
  Vec y;
  Mat P;
};

MomentState moment_rhs(const LinearAuxiliary& aux, double t, const MomentState& s) {
  const Mat B = aux.bmat(t);
  return {B * s.Y, B * s.y + aux.beta(t), B * s.P + s.P * B.transpose() + aux.diffusion(t)};
}

MomentState axpy(const MomentState& s, double h, const MomentState& k) {
  return {s.Y + h * k.Y, s.y + h * k.y, s.P + h * k.P};
}

// Classical RK4 on the forward moment equations of the linear SDE.
TransitionMoments rk4_moments(const LinearAuxiliary& aux, double s, double t, double max_step) {
  const Eigen::Index d = aux.dim();
  const int n = std::max(1, static_cast<int>(std::ceil((t - s) / max_step - 1e-9)));
  const double h = (t - s) / n;
  MomentState st{Mat::Identity(d, d), Vec::Zero(d), Mat::Zero(d, d)};
  for (int i = 0; i < n; ++i) {
    const double tau = s + i * h;
    const MomentState k1 = moment_rhs(aux, tau, st);
    const MomentState k2 = moment_rhs(aux, tau + 0.5 * h, axpy(st, 0.5 * h, k1));
    const MomentState k3 = moment_rhs(aux, tau + 0.5 * h, axpy(st, 0.5 * h, k2));
    const MomentState k4 = moment_rhs(aux, tau + h, axpy(st, h, k3));
    st.Y += h / 6.0 * (k1.Y + 2.0 * k2.Y + 2.0 * k3.Y + k4.Y);
    st.y += h / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y);
    st.P += h / 6.0 * (k1.P + 2.0 * k2.P + 2.0 * k3.P + k4.P);
  }
  return {st.Y, st.y, 0.5 * (st.P + st.P.transpose())};
}

// Per-cell moments with a cache for constant coefficients on repeated widths.
class CellMoments {
 public:
  CellMoments(const LinearAuxiliary& aux, const KernelOptions& options)
      : aux_(aux), options_(options) {
    if (aux.structure != AuxStructure::TimeVarying) {
      beta_ = aux.beta(0.0);
      bmat_ = aux.bmat(0.0);
      atilde_ = aux.diffusion(0.0);
    }
  }

  bool brownian() const { return aux_.structure == AuxStructure::Brownian; }
  const Vec& beta() const { return beta_; }
  const Mat& atilde() const { return atilde_; }

  TransitionMoments operator()(double s, double t) {
    const double h = t - s;
    switch (aux_.structure) {
      case AuxStructure::Brownian:
        return {Mat::Identity(beta_.size(), beta_.size()), h * beta_, h * atilde_};
      case AuxStructure::Constant: {
        auto it = cache_.find(h);
        if (it != cache_.end()) return it->second;
        return cache_.emplace(h, van_loan(beta_, bmat_, atilde_, h)).first->second;
      }
      case AuxStructure::TimeVarying:
        break;
    }
    return rk4_moments(aux_, s, t, options_.rk4_max_step);
  }

 private:
  const LinearAuxiliary& aux_;
  const KernelOptions& options_;
  Vec beta_;
  Mat bmat_, atilde_;
  std::map<double, TransitionMoments> cache_;
};

bool same_time(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)); }

}  // namespace

TransitionMoments transition_moments(const LinearAuxiliary& aux, double s, double t,
                                     const KernelOptions& options) {
  if (!(t >= s)) throw DomainError("transition_moments: need s <= t");
  if (t == s) return identity_moments(aux.dim());
  CellMoments cells(aux, options);
  return cells(s, t);
}

std::vector<Mat> fundamental_matrix(const LinearAuxiliary& aux, const TimeGrid& grid,
                                    const KernelOptions& options) {
  if (grid.empty() || !is_strictly_increasing(grid))
    throw ConfigError("fundamental_matrix: grid must be strictly increasing");
  CellMoments cells(aux, options);
  std::vector<Mat> out;
  out.reserve(grid.size());
  out.push_back(Mat::Identity(aux.dim(), aux.dim()));
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    out.push_back(cells(grid[k], grid[k + 1]).phi * out.back());
    if (!out.back().allFinite())
      throw NumericError("fundamental_matrix: non-finite value at " + at_time(grid[k + 1]));
  }
  return out;
}

namespace {

// Moments toward grid.back() at every node, by backward composition.
std::vector<TransitionMoments> moments_to_end(CellMoments& cells, const TimeGrid& grid,
                                              std::size_t last, Eigen::Index d) {
  std::vector<TransitionMoments> out(last + 1);
  out[last] = identity_moments(d);
  if (cells.brownian()) {
    for (std::size_t k = 0; k < last; ++k) {
      const double h = grid[last] - grid[k];
      out[k] = {out[last].phi, h * cells.beta(), h * cells.atilde()};
    }
    return out;
  }
  for (std::size_t k = last; k-- > 0;) out[k] = compose(cells(grid[k], grid[k + 1]), out[k + 1]);
  return out;
}

}  // namespace

GainCovariance gain_and_covariance(const LinearAuxiliary& aux, double horizon, const TimeGrid& grid,
                                   const KernelOptions& options) {
  if (grid.empty() || !is_strictly_increasing(grid))
    throw ConfigError("gain_and_covariance: grid must be strictly increasing");
  if (horizon < grid.back() && !same_time(horizon, grid.back()))
    throw ConfigError("gain_and_covariance: grid extends beyond the horizon");
  TimeGrid g = grid;
  if (!same_time(horizon, grid.back())) g.push_back(horizon);
  CellMoments cells(aux, options);
  auto m = moments_to_end(cells, g, g.size() - 1, aux.dim());
  GainCovariance out;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    out.g.push_back(m[k].g);
    out.K.push_back(m[k].K);
  }
  return out;
}

StartPrior start_posterior(const StartPrior& prior, const Mat& L, const Mat& Sigma, const Vec& v) {
  if (L.cols() != prior.mean.size() || L.rows() != v.size() || Sigma.rows() != v.size())
    throw ConfigError("start_posterior: dimension mismatch");
  const Mat CLt = prior.cov * L.transpose();
  const Mat S = L * CLt + Sigma;
  Eigen::LLT<Mat> llt(S);
  if (llt.info() != Eigen::Success)
    throw DomainError("start_posterior: L C L' + Sigma is not positive definite");
  StartPrior post;
  post.mean = prior.mean + CLt * llt.solve(v - L * prior.mean);
  post.cov = prior.cov - CLt * llt.solve(CLt.transpose());
  post.cov = (0.5 * (post.cov + post.cov.transpose())).eval();
  return post;
}

// ---------------------------------------------------------------------------
// Constant-coefficient closed forms

ConstantCoefficientPull::ConstantCoefficientPull(Vec beta, Mat atilde, Mat L, Mat Sigma, double S,
                                                 double T, Vec v_S, Vec x_T)
    : beta_(std::move(beta)),
      atilde_(std::move(atilde)),
      L_(std::move(L)),
      Sigma_(std::move(Sigma)),
      S_(S),
      T_(T),
      v_S_(std::move(v_S)),
      x_T_(std::move(x_T)) {
  Eigen::LLT<Mat> llt(atilde_);
  if (llt.info() != Eigen::Success)
    throw KernelBuildError("constant-coefficient pull: a~ is not positive definite");
  atilde_inv_ = llt.solve(Mat::Identity(atilde_.rows(), atilde_.cols()));
  logdet_a_ = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  LaLt_ = L_ * atilde_ * L_.transpose();
  u_S_ = v_S_.size() ? min_norm_solution(L_, v_S_) : Vec::Zero(atilde_.rows());
}

Mat ConstantCoefficientPull::N(double t) const {
  const Mat inner = LaLt_ + (T_ - t) / ((S_ - t) * (T_ - S_)) * Sigma_;
  return inner.llt().solve(Mat::Identity(inner.rows(), inner.cols()));
}

Mat ConstantCoefficientPull::Q(double t) const { return L_.transpose() * N(t) * L_; }

Vec ConstantCoefficientPull::h_S(double t, const Vec& x) const {
  return u_S_ - (S_ - t) * beta_ - x;
}

Vec ConstantCoefficientPull::h_T(double t, const Vec& x) const {
  return x_T_ - (T_ - t) * beta_ - x;
}

Vec ConstantCoefficientPull::r(double t, const Vec& x) const {
  if (t >= S_) return atilde_inv_ * h_T(t, x) / (T_ - t);
  const Mat q = Q(t);
  return q * h_S(t, x) / (S_ - t) + (atilde_inv_ - q) * h_T(t, x) / (T_ - t);
}

Mat ConstantCoefficientPull::H(double t) const {
  if (t >= S_) return atilde_inv_ / (T_ - t);
  return (atilde_inv_ + (T_ - S_) / (S_ - t) * Q(t)) / (T_ - t);
}

Mat ConstantCoefficientPull::U(double t) const {
  const Eigen::Index m = L_.rows();
  const Eigen::Index d = L_.cols();
  const Mat n = N(t);
  Mat u(m + d, m + d);
  u.topLeftCorner(m, m) = (T_ - t) / ((S_ - t) * (T_ - S_)) * n;
  u.topRightCorner(m, d) = -n * L_ / (T_ - S_);
  u.bottomLeftCorner(d, m) = -L_.transpose() * n / (T_ - S_);
  u.bottomRightCorner(d, d) =
      atilde_inv_ / (T_ - t) + (S_ - t) / ((T_ - t) * (T_ - S_)) * L_.transpose() * n * L_;
  return u;
}

double ConstantCoefficientPull::logdet_cov(double t) const {
  const auto m = static_cast<double>(L_.rows());
  const auto d = static_cast<double>(L_.cols());
  const Mat ninv = LaLt_ + (T_ - t) / ((S_ - t) * (T_ - S_)) * Sigma_;
  const double logdet_ninv = 2.0 * ninv.llt().matrixLLT().diagonal().array().log().sum();
  return d * std::log(T_ - t) + logdet_a_ + m * std::log((S_ - t) * (T_ - S_) / (T_ - t)) +
         logdet_ninv;
}

Vec ConstantCoefficientPull::limit_at_S(const Vec& x) const {
  Eigen::LLT<Mat> llt(Sigma_);
  if (llt.info() != Eigen::Success)
    throw DomainError("limit of r~ at S requires a positive definite Sigma");
  return L_.transpose() * llt.solve(L_ * (u_S_ - x)) + atilde_inv_ * h_T(S_, x) / (T_ - S_);
}

// ---------------------------------------------------------------------------
// Kernel geometry

class KernelGeometry {
 public:
  SegmentKind kind;
  LinearAuxiliary aux;
  TimeGrid grid;
  KernelOptions options;
  std::size_t k_obs = 0;
  double S = 0.0;
  double T = 0.0;
  Mat L;
  Mat Sigma;
  std::vector<TransitionMoments> to_obs;
  std::vector<TransitionMoments> to_terminal;
  TransitionMoments obs_to_terminal;
  std::vector<NodeGeometry> nodes;
  std::vector<Vec> beta;
  std::vector<Mat> bmat;
  std::vector<Mat> atilde;
  std::optional<ConstantCoefficientPull> closed_form;

  Branch branch_at(double t, std::size_t k) const {
    switch (kind) {
      case SegmentKind::Interior:
        return (k < k_obs && t < S) ? Branch::Stacked : Branch::Terminal;
      case SegmentKind::End:
        return Branch::Observation;
      case SegmentKind::Start:
        return Branch::Terminal;
    }
    return Branch::Terminal;
  }

  NodeGeometry make_node(Branch branch, double t, const TransitionMoments* toS,
                         const TransitionMoments* toT) const {
    NodeGeometry g;
    g.branch = branch;
    const Eigen::Index d = aux.dim();
    switch (branch) {
      case Branch::Stacked: {
        const Eigen::Index m = L.rows();
        g.A.resize(m + d, d);
        g.A.topRows(m) = L * toS->phi;
        g.A.bottomRows(d) = toT->phi;
        g.c.resize(m + d);
        g.c.head(m) = L * toS->g;
        g.c.tail(d) = toT->g;
        const Mat LK = L * toS->K;
        g.cov.resize(m + d, m + d);
        g.cov.topLeftCorner(m, m) = LK * L.transpose() + Sigma;
        g.cov.topRightCorner(m, d) = LK * obs_to_terminal.phi.transpose();
        g.cov.bottomLeftCorner(d, m) = g.cov.topRightCorner(m, d).transpose();
        g.cov.bottomRightCorner(d, d) = toT->K;
        break;
      }
      case Branch::Terminal:
        g.A = toT->phi;
        g.c = toT->g;
        g.cov = toT->K;
        break;
      case Branch::Observation:
        g.A = L * toS->phi;
        g.c = L * toS->g;
        g.cov = L * toS->K * L.transpose() + Sigma;
        break;
    }
    g.cov = (0.5 * (g.cov + g.cov.transpose())).eval();
    if (branch == Branch::Stacked && closed_form) {
      g.U = closed_form->U(t);
      g.logdet_cov = closed_form->logdet_cov(t);
      if (!g.U.allFinite() || !std::isfinite(g.logdet_cov))
        throw KernelBuildError("stacked covariance is not positive definite at " + at_time(t));
    } else {
      Eigen::LLT<Mat> llt(g.cov);
      if (llt.info() != Eigen::Success || !g.cov.allFinite())
        throw KernelBuildError("conditioning covariance is not positive definite at " +
                               at_time(t) +
                               (branch == Branch::Terminal
                                    ? std::string()
                                    : std::string(" (check L K L' + Sigma)")));
      g.U = llt.solve(Mat::Identity(g.cov.rows(), g.cov.cols()));
      g.logdet_cov = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    }
    g.U = (0.5 * (g.U + g.U.transpose())).eval();
    g.P = g.A.transpose() * g.U;
    g.H = g.P * g.A;
    g.H = (0.5 * (g.H + g.H.transpose())).eval();
    return g;
  }
};

double SegmentSpec::obs_time() const {
  switch (kind) {
    case SegmentKind::Interior:
      return s_mid;
    case SegmentKind::End:
      return t_right;
    case SegmentKind::Start:
      return t_left;
  }
  return s_mid;
}

SegmentSpec interior_spec(double t_left, double s_mid, double t_right, const Vec& x_left,
                          const Observation& obs, const Vec& x_right) {
  SegmentSpec s;
  s.kind = SegmentKind::Interior;
  s.t_left = t_left;
  s.s_mid = s_mid;
  s.t_right = t_right;
  s.left_anchor = x_left;
  s.right_anchor = x_right;
  s.obs = obs;
  return s;
}

SegmentSpec end_spec(double t_left, double t_right, const Vec& x_left, const Observation& obs) {
  SegmentSpec s;
  s.kind = SegmentKind::End;
  s.t_left = t_left;
  s.t_right = t_right;
  s.s_mid = t_right;
  s.left_anchor = x_left;
  s.obs = obs;
  return s;
}

SegmentSpec start_spec(double t_left, double t_right, const StartPrior& prior,
                       const Observation& obs, const Vec& x_left, const Vec& x_right) {
  SegmentSpec s;
  s.kind = SegmentKind::Start;
  s.t_left = t_left;
  s.t_right = t_right;
  s.s_mid = t_left;
  s.left_anchor = x_left;
  s.right_anchor = x_right;
  s.obs = obs;
  s.start_prior = prior;
  return s;
}

TimeGrid segment_grid(const SegmentSpec& spec, int steps) {
  if (spec.kind != SegmentKind::Interior) return uniform_grid(spec.t_left, spec.t_right, steps);
  TimeGrid g = uniform_grid(spec.t_left, spec.s_mid, steps);
  TimeGrid right = uniform_grid(spec.s_mid, spec.t_right, steps);
  g.insert(g.end(), right.begin() + 1, right.end());
  return g;
}

GuidedKernel GuidedKernel::build(const SegmentSpec& spec, const LinearAuxiliary& aux,
                                 const TimeGrid& grid, const KernelOptions& options) {
  if (grid.size() < 2 || !is_strictly_increasing(grid))
    throw ConfigError("kernel: grid must be strictly increasing with at least two nodes");
  if (!same_time(grid.front(), spec.t_left) || !same_time(grid.back(), spec.t_right))
    throw ConfigError("kernel: grid must span [t_left, t_right]");
  const Eigen::Index d = aux.dim();

  auto geo = std::make_shared<KernelGeometry>();
  geo->kind = spec.kind;
  geo->aux = aux;
  geo->grid = grid;
  geo->options = options;
  geo->T = spec.t_right;
  geo->L = spec.obs.L;
  geo->Sigma = spec.obs.cov;
  const std::size_t K = grid.size() - 1;

  switch (spec.kind) {
    case SegmentKind::Interior: {
      if (!(spec.t_left < spec.s_mid && spec.s_mid < spec.t_right))
        throw ConfigError("interior kernel: need t_left < s_mid < t_right");
      auto it = std::find_if(grid.begin(), grid.end(),
                             [&](double t) { return same_time(t, spec.s_mid); });
      if (it == grid.end()) throw ConfigError("interior kernel: s_mid must be a grid node");
      geo->k_obs = static_cast<std::size_t>(it - grid.begin());
      geo->S = spec.s_mid;
      break;
    }
    case SegmentKind::End:
      geo->k_obs = K;
      geo->S = spec.t_right;
      break;
    case SegmentKind::Start:
      geo->k_obs = 0;
      geo->S = spec.t_left;
      break;
  }
  if (spec.kind != SegmentKind::Start) {
    if (geo->L.cols() != d || geo->Sigma.rows() != geo->L.rows() ||
        spec.obs.value.size() != geo->L.rows())
      throw ConfigError("kernel: observation dimensions do not match the state");
  }

  CellMoments cells(geo->aux, geo->options);
  if (spec.kind != SegmentKind::End) geo->to_terminal = moments_to_end(cells, grid, K, d);
  if (spec.kind != SegmentKind::Start) {
    TimeGrid left(grid.begin(), grid.begin() + static_cast<std::ptrdiff_t>(geo->k_obs) + 1);
    geo->to_obs = moments_to_end(cells, left, geo->k_obs, d);
  } else {
    geo->to_obs = {identity_moments(d)};
  }
  if (spec.kind == SegmentKind::Interior) geo->obs_to_terminal = geo->to_terminal[geo->k_obs];

  if (spec.kind == SegmentKind::Interior && aux.is_constant() && options.closed_form_fast_path) {
    geo->closed_form.emplace(aux.beta(0.0), aux.diffusion(0.0), geo->L, geo->Sigma, geo->S,
                             geo->T, Vec::Zero(geo->L.rows()), Vec::Zero(d));
  }

  geo->nodes.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    const double t = grid[k];
    const Branch b = geo->branch_at(t, k);
    const TransitionMoments* toS = k <= geo->k_obs && k < geo->to_obs.size() ? &geo->to_obs[k] : nullptr;
    const TransitionMoments* toT = geo->to_terminal.empty() ? nullptr : &geo->to_terminal[k];
    geo->nodes.push_back(geo->make_node(b, t, toS, toT));
    // One entry suffices for constant coefficients.
    if (aux.structure != AuxStructure::TimeVarying && k > 0) continue;
    geo->beta.push_back(aux.beta(t));
    geo->bmat.push_back(aux.bmat(t));
    geo->atilde.push_back(aux.diffusion(t));
  }

  GuidedKernel kernel;
  kernel.geo_ = std::move(geo);
  kernel.spec_ = spec;
  kernel.bind_values();
  return kernel;
}

GuidedKernel GuidedKernel::rebind(const Vec& left_anchor, const Vec& right_anchor) const {
  GuidedKernel out;
  out.geo_ = geo_;
  out.spec_ = spec_;
  out.spec_.left_anchor = left_anchor;
  out.spec_.right_anchor = right_anchor;
  out.bind_values();
  return out;
}

Vec GuidedKernel::conditioning_value(Branch b) const {
  switch (b) {
    case Branch::Stacked: {
      Vec y(spec_.obs.value.size() + spec_.right_anchor.size());
      y << spec_.obs.value, spec_.right_anchor;
      return y;
    }
    case Branch::Terminal:
      return spec_.right_anchor;
    case Branch::Observation:
      return spec_.obs.value;
  }
  return {};
}

void GuidedKernel::bind_values() {
  const Eigen::Index d = geo_->aux.dim();
  if (spec_.kind != SegmentKind::End && spec_.right_anchor.size() != d)
    throw ConfigError("kernel: right anchor has the wrong dimension");
  offsets_.clear();
  offsets_.reserve(geo_->nodes.size());
  const Vec y_stacked = spec_.kind == SegmentKind::Interior ? conditioning_value(Branch::Stacked) : Vec();
  for (const auto& g : geo_->nodes) {
    const Vec& y = g.branch == Branch::Stacked    ? y_stacked
                   : g.branch == Branch::Terminal ? spec_.right_anchor
                                                  : spec_.obs.value;
    offsets_.push_back(g.P * (y - g.c));
  }
}

const TimeGrid& GuidedKernel::grid() const { return geo_->grid; }
const LinearAuxiliary& GuidedKernel::auxiliary() const { return geo_->aux; }
std::size_t GuidedKernel::obs_index() const { return geo_->k_obs; }
const NodeGeometry& GuidedKernel::node(std::size_t k) const { return geo_->nodes.at(k); }
const TransitionMoments& GuidedKernel::to_obs(std::size_t k) const { return geo_->to_obs.at(k); }
const TransitionMoments& GuidedKernel::to_terminal(std::size_t k) const {
  return geo_->to_terminal.at(k);
}
const Mat& GuidedKernel::phi_T_S() const { return geo_->obs_to_terminal.phi; }
const Vec& GuidedKernel::aux_beta(std::size_t k) const {
  return geo_->beta[geo_->beta.size() == 1 ? 0 : k];
}
const Mat& GuidedKernel::aux_bmat(std::size_t k) const {
  return geo_->bmat[geo_->bmat.size() == 1 ? 0 : k];
}
const Mat& GuidedKernel::aux_diffusion(std::size_t k) const {
  return geo_->atilde[geo_->atilde.size() == 1 ? 0 : k];
}

bool GuidedKernel::projects_observation() const {
  return spec_.kind != SegmentKind::Start && geo_->Sigma.isZero(0.0);
}

NodeGeometry GuidedKernel::geometry_at(double t) const {
  const TimeGrid& grid = geo_->grid;
  if (!(t >= grid.front() - 1e-12 * std::max(1.0, std::abs(t))) || !(t < grid.back()) ||
      same_time(t, grid.back()))
    throw DomainError("guiding term evaluated outside [t_left, t_right) at " + at_time(t));
  auto it = std::upper_bound(grid.begin(), grid.end(), t);
  if (it == grid.begin()) return geo_->nodes.front();
  std::size_t k = static_cast<std::size_t>(it - grid.begin()) - 1;
  if (it != grid.end() && same_time(*it, t)) ++k;
  if (same_time(grid[k], t)) return geo_->nodes[k];

  const TransitionMoments cell = transition_moments(geo_->aux, t, grid[k + 1], geo_->options);
  const Branch b = geo_->branch_at(t, k);
  std::optional<TransitionMoments> toS, toT;
  if (b == Branch::Stacked || b == Branch::Observation) toS = compose(cell, geo_->to_obs[k + 1]);
  if (b == Branch::Stacked || b == Branch::Terminal) toT = compose(cell, geo_->to_terminal[k + 1]);
  return geo_->make_node(b, t, toS ? &*toS : nullptr, toT ? &*toT : nullptr);
}

Vec GuidedKernel::r_from(const NodeGeometry& g, const Vec& fk, const Vec& x) const {
  Vec r = fk - g.H * x;
  if (geo_->options.debug_r_bias != 0.0) r.array() += geo_->options.debug_r_bias;
  return r;
}

Vec GuidedKernel::guiding_r_node(std::size_t k, const Vec& x) const {
  return r_from(geo_->nodes[k], offsets_[k], x);
}

const Mat& GuidedKernel::guiding_H_node(std::size_t k) const { return geo_->nodes[k].H; }

Vec GuidedKernel::guiding_r(double t, const Vec& x) const {
  const NodeGeometry g = geometry_at(t);
  const Vec y = conditioning_value(g.branch);
  return r_from(g, g.P * (y - g.c), x);
}

Mat GuidedKernel::guiding_H(double t) const { return geometry_at(t).H; }

double GuidedKernel::log_ptilde(double t, const Vec& x) const {
  const NodeGeometry g = geometry_at(t);
  const Vec res = conditioning_value(g.branch) - g.c - g.A * x;
  const auto n = static_cast<double>(res.size());
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + g.logdet_cov + res.dot(g.U * res));
}

double GuidedKernel::log_ptilde_at_left() const {
  return log_ptilde(spec_.t_left, spec_.left_anchor);
}

Mat GuidedKernel::precision_U(double t) const {
  if (spec_.kind != SegmentKind::Interior || !(t < geo_->S))
    throw DomainError("precision_U is defined for interior segments at t < S, got " + at_time(t));
  return geometry_at(t).U;
}

Vec GuidedKernel::limit_r_at_S(const Vec& x) const {
  if (spec_.kind != SegmentKind::Interior || !geo_->aux.is_constant())
    throw DomainError("limit_r_at_S needs an interior kernel with constant coefficients and B = 0");
  ConstantCoefficientPull pull(geo_->aux.beta(0.0), geo_->aux.diffusion(0.0), geo_->L, geo_->Sigma,
                               geo_->S, geo_->T, spec_.obs.value, spec_.right_anchor);
  return pull.limit_at_S(x);
}

}  // namespace fbridge
