#include "fbridge/types.hpp"

#include <cmath>
#include <numbers>

namespace fbridge {

TimeGrid uniform_grid(double a, double b, int steps) {
  if (steps < 1) throw ConfigError("uniform_grid: need at least one step");
  if (!(b > a)) throw ConfigError("uniform_grid: empty interval");
  TimeGrid grid(static_cast<std::size_t>(steps) + 1);
  const double h = (b - a) / steps;
  for (int k = 0; k < steps; ++k) grid[k] = a + k * h;
  grid[steps] = b;
  return grid;
}

bool is_strictly_increasing(const TimeGrid& grid) {
  for (std::size_t k = 1; k < grid.size(); ++k)
    if (!(grid[k] > grid[k - 1])) return false;
  return true;
}

bool all_finite(const Vec& v) { return v.allFinite(); }
bool all_finite(const Mat& m) { return m.allFinite(); }

double gaussian_logpdf(const Vec& x, const Vec& mean, const Mat& cov) {
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success)
    throw DomainError("gaussian_logpdf: covariance is not positive definite");
  const Vec z = llt.matrixL().solve(x - mean);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double k = static_cast<double>(x.size());
  return -0.5 * (k * std::log(2.0 * std::numbers::pi) + logdet + z.squaredNorm());
}

Vec min_norm_solution(const Mat& L, const Vec& v) {
  Eigen::LLT<Mat> llt(L * L.transpose());
  if (llt.info() != Eigen::Success)
    throw DomainError("min_norm_solution: L must have full row rank");
  return L.transpose() * llt.solve(v);
}

}  // namespace fbridge
