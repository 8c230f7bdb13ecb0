#pragma once

#include "smoothhess/core.hpp"
#include "smoothhess/net.hpp"
#include "smoothhess/sampling.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace smoothhess {

double normal_pdf(double t);
double normal_cdf(double t);

/// f(x) = 1/2 x^T A x + b^T x.
struct Quadratic {
  Matrix a;
  Vector b;

  double value(const Vector& x) const;
  Vector gradient(const Vector& x) const;
  ScalarFunction as_function() const;
};

/// SmoothHess of a quadratic: (A + A^T) / 2 for every covariance and point.
Matrix quadratic_smooth_hess(const Matrix& a, const Vector& b);

struct SmoothedNeuron {
  double value = 0.0;
  Vector grad;
  Matrix hess;
};

/// Closed-form Gaussian smoothing of max(0, w^T x + b) at x0:
/// z = w^T x0 + b, s = sqrt(w^T Sigma w),
/// value = z Phi(z/s) + s phi(z/s), grad = w Phi(z/s), hess = w w^T phi(z/s) / s.
SmoothedNeuron relu_neuron_smooth(const Vector& w, double b, const Vector& x0, const CovarianceModel& cov);

/// Single ReLU neuron as a one-layer network.
Network relu_neuron_network(const Vector& w, double b);

struct MonteCarloValue {
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// (1/n) sum f(x0 + delta_i), delta_i ~ N(0, Sigma). Zeroth-order estimate of
/// the smoothed function.
MonteCarloValue smoothed_value_mc(const ScalarFunction& f, const Vector& x0, const CovarianceModel& cov,
                                  std::size_t n, std::uint64_t seed);
MonteCarloValue smoothed_value_mc(const Network& net, const Vector& x0, const CovarianceModel& cov, std::size_t n,
                                  std::uint64_t seed);

/// Hessian of the smoothed function by central second differences of
/// smoothed_value_mc with common random numbers. Intended for d <= 3.
Matrix smoothed_hessian_fd(const ScalarFunction& f, const Vector& x0, const CovarianceModel& cov, std::size_t n,
                           std::uint64_t seed, double step);

struct Rank1Eigs {
  double plus = 0.0;
  double minus = 0.0;
};

/// Nonzero eigenvalues of x y^T + y x^T: x^T y +- |x| |y|.
Rank1Eigs rank1_symmetrized_eigs(const Vector& x, const Vector& y);

struct OracleSuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Cross-checks the estimator and eigen utilities against the closed-form
/// oracles above: quadratics, single ReLU neurons, zeroth-order finite
/// differences and the rank-1 eigenvalue identity.
std::vector<OracleSuiteResult> run_oracle_suites(std::uint64_t seed);

}  // namespace smoothhess
