#include "smoothhess/estimator.hpp"
#include "smoothhess/eval.hpp"
#include "smoothhess/oracles.hpp"
#include "smoothhess/rng.hpp"

#include <cstdio>

namespace smoothhess {

namespace {

Vector random_vector(RandomStream& rng, Eigen::Index d) {
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = rng.normal();
  return v;
}

Matrix random_matrix(RandomStream& rng, Eigen::Index d) {
  Matrix m(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rng.normal();
  return m;
}

std::string fmt(const char* pattern, double a, double b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, pattern, a, b);
  return buf;
}

// |H_hat - H| and |G_hat - G| against 5 standard errors (Frobenius of the
// elementwise stderr), plus a rounding floor.
bool within_stderr(const InteractionEstimate& est, const Matrix& h, const Vector& g, double& worst) {
  const double eh = (est.hessian - h).norm() / (5.0 * est.hessian_stderr.norm() + 1e-9);
  const double eg = (est.grad - g).norm() / (5.0 * est.grad_stderr.norm() + 1e-9);
  worst = std::max({worst, eh, eg});
  return eh <= 1.0 && eg <= 1.0;
}

OracleSuiteResult quadratic_suite(std::uint64_t seed) {
  RandomStream rng(derive_seed(seed, 1), 0);
  double worst = 0.0;
  bool ok = true;
  for (int t = 0; t < 5; ++t) {
    const Eigen::Index d = 2 + t;
    const Quadratic q{random_matrix(rng, d), random_vector(rng, d)};
    const Vector x0 = random_vector(rng, d);
    const auto cov = CovarianceModel::isotropic(static_cast<std::size_t>(d), 0.1 + 0.2 * t);
    const auto est = estimate(q.as_function(), x0, cov, {2000, 10, false, derive_seed(seed, 100 + t)});
    const Vector g = 0.5 * (q.a + q.a.transpose()) * x0 + q.b;
    ok = within_stderr(est, quadratic_smooth_hess(q.a, q.b), g, worst) && ok;
  }
  return {"quadratic closed form", ok, fmt("worst error / 5 stderr = %.3f", worst, 0.0)};
}

OracleSuiteResult relu_suite(std::uint64_t seed) {
  RandomStream rng(derive_seed(seed, 2), 0);
  double worst = 0.0;
  bool ok = true;
  for (int t = 0; t < 5; ++t) {
    const Eigen::Index d = 2 + t;
    const Vector w = random_vector(rng, d);
    const double b = 0.5 * rng.normal();
    const Vector x0 = 0.3 * random_vector(rng, d);
    const auto cov = CovarianceModel::isotropic(static_cast<std::size_t>(d), 0.25);
    const auto oracle = relu_neuron_smooth(w, b, x0, cov);
    const auto est = estimate(relu_neuron_network(w, b), x0, cov, {2000, 10, false, derive_seed(seed, 200 + t)});
    ok = within_stderr(est, oracle.hess, oracle.grad, worst) && ok;
  }
  return {"relu neuron closed form", ok, fmt("worst error / 5 stderr = %.3f", worst, 0.0)};
}

OracleSuiteResult finite_difference_suite(std::uint64_t seed) {
  const Vector w = (Vector(2) << 1.0, -0.5).finished();
  const double b = 0.2;
  const Vector x0 = (Vector(2) << 0.1, 0.3).finished();
  const auto cov = CovarianceModel::isotropic(2, 0.25);
  const Network net = relu_neuron_network(w, b);
  const Matrix fd = smoothed_hessian_fd(as_function(net), x0, cov, 200000, derive_seed(seed, 3), 0.15);
  const Matrix exact = relu_neuron_smooth(w, b, x0, cov).hess;
  const double err = (fd - exact).norm() / exact.norm();
  return {"zeroth-order finite differences", err < 0.05, fmt("relative error %.4f (tol %.2f)", err, 0.05)};
}

OracleSuiteResult rank1_suite(std::uint64_t seed) {
  RandomStream rng(derive_seed(seed, 4), 0);
  double worst = 0.0;
  bool ok = true;
  for (int t = 0; t < 200; ++t) {
    const Eigen::Index d = 2 + t % 15;
    const Vector x = random_vector(rng, d), y = random_vector(rng, d);
    const Rank1Eigs r = rank1_symmetrized_eigs(x, y);
    const Matrix m = x * y.transpose() + y * x.transpose();
    const Vector values = eigendecompose_symmetric(m).values;
    const double hi = values.maxCoeff(), lo = values.minCoeff();
    const double scale = std::max(1.0, m.norm());
    worst = std::max({worst, std::abs(hi - r.plus) / scale, std::abs(lo - r.minus) / scale});
    ok = ok && r.plus >= 0.0 && r.minus <= 0.0;
  }
  ok = ok && worst <= 1e-10;
  return {"rank-1 symmetrized eigenvalues", ok, fmt("worst relative gap %.3g (tol %.0e)", worst, 1e-10)};
}

}  // namespace

std::vector<OracleSuiteResult> run_oracle_suites(std::uint64_t seed) {
  return {quadratic_suite(seed), relu_suite(seed), finite_difference_suite(seed), rank1_suite(seed)};
}

}  // namespace smoothhess
