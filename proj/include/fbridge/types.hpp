#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace fbridge {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using TimeGrid = std::vector<double>;

// Error hierarchy. The CLI maps ConfigError to exit code 2 and NumericError
// (and its subclasses) to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class KernelBuildError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Raised when a guided proposal leaves the finite range. Samplers treat it as
// a rejected move.
class ProposalFailure : public NumericError {
 public:
  using NumericError::NumericError;
};

/// M+1 equally spaced nodes on [a, b] with both endpoints exact.
TimeGrid uniform_grid(double a, double b, int steps);

bool is_strictly_increasing(const TimeGrid& grid);

bool all_finite(const Vec& v);
bool all_finite(const Mat& m);

/// Log-density of N(mean, cov) at x via Cholesky. Throws DomainError when cov
/// is not positive definite.
double gaussian_logpdf(const Vec& x, const Vec& mean, const Mat& cov);

/// Minimum-norm solution of L u = v for full-row-rank L.
Vec min_norm_solution(const Mat& L, const Vec& v);

}  // namespace fbridge
