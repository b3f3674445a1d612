#include "fbridge/oracle.hpp"

#include <cmath>
#include <numbers>

namespace fbridge::oracle {

namespace {

Mat symmetric(const Mat& m) { return 0.5 * (m + m.transpose()); }

Mat spd_inverse(const Mat& m, const char* what) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) throw NumericError(std::string(what) + " is not positive definite");
  return llt.solve(Mat::Identity(m.rows(), m.cols()));
}

double logpdf(const Vec& x, const Vec& mean, const Mat& cov, const char* what) {
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericError(std::string(what) + " is not positive definite");
  const Vec z = llt.matrixL().solve(x - mean);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + logdet +
                 z.squaredNorm());
}

}  // namespace

GaussianTransition gaussian_transition(const LinearAuxiliary& lin, double s, double t, int steps) {
  const Eigen::Index d = lin.dim();
  GaussianTransition out{Mat::Identity(d, d), Vec::Zero(d), Mat::Zero(d, d)};
  if (t == s) return out;
  const double h = (t - s) / steps;
  // y = (Phi, g, K) with Phi' = B Phi, g' = B g + beta, K' = B K + K B' + a.
  auto rhs = [&](double tau, const GaussianTransition& y) {
    const Mat B = lin.bmat(tau);
    const Mat sg = lin.sigma(tau);
    return GaussianTransition{B * y.phi, B * y.g + lin.beta(tau),
                              B * y.K + y.K * B.transpose() + sg * sg.transpose()};
  };
  auto step = [](const GaussianTransition& y, double c, const GaussianTransition& k) {
    return GaussianTransition{y.phi + c * k.phi, y.g + c * k.g, y.K + c * k.K};
  };
  for (int i = 0; i < steps; ++i) {
    const double tau = s + i * h;
    const auto k1 = rhs(tau, out);
    const auto k2 = rhs(tau + h / 2, step(out, h / 2, k1));
    const auto k3 = rhs(tau + h / 2, step(out, h / 2, k2));
    const auto k4 = rhs(tau + h, step(out, h, k3));
    out.phi += h / 6 * (k1.phi + 2 * k2.phi + 2 * k3.phi + k4.phi);
    out.g += h / 6 * (k1.g + 2 * k2.g + 2 * k3.g + k4.g);
    out.K += h / 6 * (k1.K + 2 * k2.K + 2 * k3.K + k4.K);
  }
  out.K = symmetric(out.K);
  return out;
}

LinearStateSpace make_state_space(const LinearAuxiliary& lin, const ObservationScheme& scheme,
                                  int steps) {
  LinearStateSpace ssm;
  for (std::size_t i = 0; i + 1 < scheme.size(); ++i)
    ssm.transitions.push_back(gaussian_transition(lin, scheme.times[i], scheme.times[i + 1], steps));
  ssm.projections = scheme.projections;
  ssm.noise_covs = scheme.noise_covs;
  return ssm;
}

double kalman_loglik(const LinearStateSpace& ssm, const std::vector<Vec>& observations,
                     const StartPrior& x0_prior) {
  if (observations.empty()) return 0.0;
  Vec m = x0_prior.mean;
  Mat P = x0_prior.cov;
  double loglik = 0.0;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    if (i > 0) {
      const auto& tr = ssm.transitions[i - 1];
      m = tr.phi * m + tr.g;
      P = symmetric(tr.phi * P * tr.phi.transpose() + tr.K);
    }
    const Mat& L = ssm.projections[i];
    const Mat S = symmetric(L * P * L.transpose() + ssm.noise_covs[i]);
    loglik += logpdf(observations[i], L * m, S, "innovation covariance");
    const Mat gain = P * L.transpose() * spd_inverse(S, "innovation covariance");
    m += gain * (observations[i] - L * m);
    // Joseph form keeps P symmetric PSD.
    const Mat IKL = Mat::Identity(P.rows(), P.cols()) - gain * L;
    P = symmetric(IKL * P * IKL.transpose() + gain * ssm.noise_covs[i] * gain.transpose());
  }
  return loglik;
}

StackedGaussian joint_state_law(const LinearStateSpace& ssm, const StartPrior& x0_prior) {
  const Eigen::Index d = x0_prior.mean.size();
  const std::size_t n = ssm.transitions.size() + 1;
  StackedGaussian out{Vec::Zero(d * n), Mat::Zero(d * n, d * n)};
  out.mean.head(d) = x0_prior.mean;
  out.cov.topLeftCorner(d, d) = x0_prior.cov;
  for (std::size_t i = 1; i < n; ++i) {
    const auto& tr = ssm.transitions[i - 1];
    const Eigen::Index a = d * (i - 1), b = d * i;
    out.mean.segment(b, d) = tr.phi * out.mean.segment(a, d) + tr.g;
    // Cov(X_i, X_j) = phi Cov(X_{i-1}, X_j) for j < i.
    for (std::size_t j = 0; j < i; ++j) {
      const Eigen::Index c = d * j;
      out.cov.block(b, c, d, d) = tr.phi * out.cov.block(a, c, d, d);
      out.cov.block(c, b, d, d) = out.cov.block(b, c, d, d).transpose();
    }
    out.cov.block(b, b, d, d) =
        symmetric(tr.phi * out.cov.block(a, a, d, d) * tr.phi.transpose() + tr.K);
  }
  return out;
}

namespace {

struct StackedObservation {
  Mat H;
  Mat R;
  Vec v;
};

StackedObservation stack_observations(const LinearStateSpace& ssm, const std::vector<Vec>& obs,
                                      Eigen::Index d) {
  Eigen::Index rows = 0;
  for (const auto& v : obs) rows += v.size();
  const auto n = static_cast<Eigen::Index>(obs.size());
  StackedObservation out{Mat::Zero(rows, d * n), Mat::Zero(rows, rows), Vec(rows)};
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Eigen::Index m = obs[i].size();
    out.H.block(r, d * static_cast<Eigen::Index>(i), m, d) = ssm.projections[i];
    out.R.block(r, r, m, m) = ssm.noise_covs[i];
    out.v.segment(r, m) = obs[i];
    r += m;
  }
  return out;
}

}  // namespace

double joint_gaussian_loglik(const LinearStateSpace& ssm, const std::vector<Vec>& observations,
                             const StartPrior& x0_prior) {
  if (observations.empty()) return 0.0;
  const auto law = joint_state_law(ssm, x0_prior);
  const auto so = stack_observations(ssm, observations, x0_prior.mean.size());
  return logpdf(so.v, so.H * law.mean, symmetric(so.H * law.cov * so.H.transpose() + so.R),
                "stacked observation covariance");
}

StackedGaussian joint_state_posterior(const LinearStateSpace& ssm,
                                      const std::vector<Vec>& observations,
                                      const StartPrior& x0_prior) {
  const auto law = joint_state_law(ssm, x0_prior);
  const auto so = stack_observations(ssm, observations, x0_prior.mean.size());
  const Mat CHt = law.cov * so.H.transpose();
  const Mat S = symmetric(so.H * CHt + so.R);
  Eigen::LDLT<Mat> ldlt(S);
  StackedGaussian post;
  post.mean = law.mean + CHt * ldlt.solve(so.v - so.H * law.mean);
  post.cov = symmetric(law.cov - CHt * ldlt.solve(CHt.transpose()));
  return post;
}

Vec finite_diff_grad(const ScalarField& f, const Vec& x, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_grad: step must be positive");
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

Mat finite_diff_hess(const ScalarField& f, const Vec& x, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_hess: step must be positive");
  const Eigen::Index d = x.size();
  Mat H(d, d);
  const double f0 = f(x);
  for (Eigen::Index i = 0; i < d; ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    H(i, i) = (f(xp) - 2.0 * f0 + f(xm)) / (h * h);
    for (Eigen::Index j = 0; j < i; ++j) {
      Vec pp = x, pm = x, mp = x, mm = x;
      pp[i] += h, pp[j] += h;
      pm[i] += h, pm[j] -= h;
      mp[i] -= h, mp[j] += h;
      mm[i] -= h, mm[j] -= h;
      H(i, j) = H(j, i) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h * h);
    }
  }
  return H;
}

double reference_log_ptilde(const LinearAuxiliary& lin, const SegmentSpec& spec, double t,
                            const Vec& x, int steps) {
  const double S = spec.obs_time();
  const double T = spec.t_right;
  const Mat& L = spec.obs.L;
  const Mat& Sigma = spec.obs.cov;
  if (spec.kind == SegmentKind::End) {
    const auto tr = gaussian_transition(lin, t, S, steps);
    return logpdf(spec.obs.value, L * (tr.phi * x + tr.g),
                  symmetric(L * tr.K * L.transpose() + Sigma), "end covariance");
  }
  if (spec.kind == SegmentKind::Start || t >= S) {
    const auto tr = gaussian_transition(lin, t, T, steps);
    return logpdf(spec.right_anchor, tr.phi * x + tr.g, tr.K, "terminal covariance");
  }
  // (X_S, X_T) | X_t = x: X_S ~ N(mu1, Ks), X_T = phiTS X_S + gTS + N(0, KTS).
  const auto toS = gaussian_transition(lin, t, S, steps);
  const auto StoT = gaussian_transition(lin, S, T, steps);
  const Eigen::Index m = L.rows(), d = x.size();
  const Vec mu1 = toS.phi * x + toS.g;
  const Vec mu2 = StoT.phi * mu1 + StoT.g;
  const Mat U11 = toS.K;
  const Mat U12 = toS.K * StoT.phi.transpose();
  const Mat U22 = StoT.K + StoT.phi * toS.K * StoT.phi.transpose();
  Mat cov(m + d, m + d);
  cov.topLeftCorner(m, m) = L * U11 * L.transpose() + Sigma;
  cov.topRightCorner(m, d) = L * U12;
  cov.bottomLeftCorner(d, m) = (L * U12).transpose();
  cov.bottomRightCorner(d, d) = U22;
  Vec y(m + d), mean(m + d);
  y << spec.obs.value, spec.right_anchor;
  mean << L * mu1, mu2;
  return logpdf(y, mean, symmetric(cov), "stacked covariance");
}

GaussianMoments bridge_conditional(const LinearAuxiliary& lin, double t_a, const Vec& x_a, double S,
                                   const Observation& obs, double t_b, const Vec& x_b, int steps) {
  const auto toS = gaussian_transition(lin, t_a, S, steps);
  const auto StoT = gaussian_transition(lin, S, t_b, steps);
  const Mat& L = obs.L;
  const Eigen::Index m = L.rows(), d = x_a.size();
  const Vec mu = toS.phi * x_a + toS.g;
  Mat Cxy(d, m + d);
  Cxy << toS.K * L.transpose(), toS.K * StoT.phi.transpose();
  Mat Cyy(m + d, m + d);
  Cyy.topLeftCorner(m, m) = L * toS.K * L.transpose() + obs.cov;
  Cyy.topRightCorner(m, d) = L * toS.K * StoT.phi.transpose();
  Cyy.bottomLeftCorner(d, m) = Cyy.topRightCorner(m, d).transpose();
  Cyy.bottomRightCorner(d, d) = StoT.K + StoT.phi * toS.K * StoT.phi.transpose();
  Vec y(m + d), my(m + d);
  y << obs.value, x_b;
  my << L * mu, StoT.phi * mu + StoT.g;
  const Mat Cinv = spd_inverse(symmetric(Cyy), "bridge conditioning covariance");
  return {mu + Cxy * Cinv * (y - my), symmetric(toS.K - Cxy * Cinv * Cxy.transpose())};
}

RejectionResult rejection_bridge_sampler(const LinearAuxiliary& lin, double t_a, const Vec& x_a,
                                         double S, const Observation& obs, double t_b,
                                         const Vec& x_b, std::size_t n_samples, RandomStream& rng,
                                         int steps) {
  const auto toS = gaussian_transition(lin, t_a, S, steps);
  const auto StoT = gaussian_transition(lin, S, t_b, steps);
  const Mat sigma_inv = spd_inverse(obs.cov, "observation covariance");
  const Mat kt_inv = spd_inverse(StoT.K, "transition covariance");
  Eigen::LLT<Mat> chol(toS.K);
  if (chol.info() != Eigen::Success) throw NumericError("forward covariance is not positive definite");
  const Mat root = chol.matrixL();
  const Vec mu = toS.phi * x_a + toS.g;
  const Eigen::Index d = x_a.size();

  RejectionResult out;
  Vec sum = Vec::Zero(d);
  Mat sum2 = Mat::Zero(d, d);
  while (out.accepted < n_samples) {
    const Vec xi = mu + root * rng.normal_vector(d);
    ++out.proposed;
    const Vec rv = obs.value - obs.L * xi;
    const Vec rt = x_b - StoT.phi * xi - StoT.g;
    const double log_acc = -0.5 * rv.dot(sigma_inv * rv) - 0.5 * rt.dot(kt_inv * rt);
    if (std::log(rng.uniform()) < log_acc) {
      ++out.accepted;
      sum += xi;
      sum2 += xi * xi.transpose();
    }
    if (out.proposed >= 1000000 && static_cast<double>(out.accepted) < 1e-6 * out.proposed)
      throw NumericError("rejection bridge sampler: acceptance rate below 1e-6");
  }
  const double n = static_cast<double>(out.accepted);
  out.mean = sum / n;
  out.cov = (sum2 - n * out.mean * out.mean.transpose()) / (n - 1.0);
  out.mean_se = (out.cov.diagonal() / n).cwiseSqrt();
  return out;
}

InverseGamma noise_variance_posterior(const InverseGamma& prior, const std::vector<Vec>& residuals) {
  double count = 0.0, ss = 0.0;
  for (const auto& r : residuals) {
    count += static_cast<double>(r.size());
    ss += r.squaredNorm();
  }
  return {prior.shape + 0.5 * count, prior.scale + 0.5 * ss};
}

}  // namespace fbridge::oracle
