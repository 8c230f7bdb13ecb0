#include "smoothhess/oracles.hpp"

#include "smoothhess/parallel.hpp"
#include "smoothhess/rng.hpp"

#include <cmath>
#include <numbers>

namespace smoothhess {

double normal_pdf(double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi); }

double normal_cdf(double t) { return 0.5 * std::erfc(-t / std::numbers::sqrt2); }

double Quadratic::value(const Vector& x) const { return 0.5 * x.dot(a * x) + b.dot(x); }

Vector Quadratic::gradient(const Vector& x) const { return 0.5 * (a + a.transpose()) * x + b; }

ScalarFunction Quadratic::as_function() const {
  const Matrix sym = 0.5 * (a + a.transpose());
  const Matrix full = a;
  const Vector lin = b;
  return {static_cast<std::size_t>(b.size()),
          [full, lin](const Matrix& xs) {
            Vector out(xs.rows());
            for (Eigen::Index i = 0; i < xs.rows(); ++i) {
              const Vector x = xs.row(i).transpose();
              out(i) = 0.5 * x.dot(full * x) + lin.dot(x);
            }
            return out;
          },
          [sym, lin](const Matrix& xs) {
            Matrix out(xs.rows(), xs.cols());
            for (Eigen::Index i = 0; i < xs.rows(); ++i) out.row(i) = (sym * xs.row(i).transpose() + lin).transpose();
            return out;
          }};
}

Matrix quadratic_smooth_hess(const Matrix& a, const Vector& b) {
  if (a.rows() != a.cols() || (b.size() != 0 && b.size() != a.rows()))
    throw DimensionError("quadratic: A must be square and match b");
  return 0.5 * (a + a.transpose());
}

SmoothedNeuron relu_neuron_smooth(const Vector& w, double b, const Vector& x0, const CovarianceModel& cov) {
  if (w.size() != x0.size() || static_cast<std::size_t>(w.size()) != cov.dim())
    throw DimensionError("neuron weight, point and covariance dimensions disagree");
  const double s2 = w.dot(cov.matrix() * w);
  if (!(s2 >= 1e-14)) throw DegenerateCovariance("w^T Sigma w underflows; smoothing is degenerate along w");
  const double s = std::sqrt(s2);
  const double z = w.dot(x0) + b;
  const double t = z / s;
  SmoothedNeuron out;
  out.value = z * normal_cdf(t) + s * normal_pdf(t);
  out.grad = w * normal_cdf(t);
  out.hess = w * w.transpose() * (normal_pdf(t) / s);
  return out;
}

Network relu_neuron_network(const Vector& w, double b) {
  Layer layer;
  layer.weight = w.transpose();
  layer.bias = Vector::Constant(1, b);
  layer.activation = Activation::relu;
  return Network(static_cast<std::size_t>(w.size()), {layer});
}

MonteCarloValue smoothed_value_mc(const ScalarFunction& f, const Vector& x0, const CovarianceModel& cov,
                                  std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("smoothed_value_mc needs n >= 1");
  if (static_cast<std::size_t>(x0.size()) != cov.dim() || f.dim != cov.dim())
    throw DimensionError("point, function and covariance dimensions disagree");
  constexpr std::size_t kBatch = 4096;
  const std::size_t batches = (n + kBatch - 1) / kBatch;
  std::vector<double> sums(batches), sqs(batches);
  parallel_for(batches, [&](std::size_t b) {
    const std::size_t rows = std::min(kBatch, n - b * kBatch);
    const Matrix z = standard_normal_rows(derive_seed(seed, 0x0C1E), b, rows, cov.dim(), false);
    const Matrix xs = cov.apply_factor(z).rowwise() + x0.transpose();
    const Vector v = f.values(xs);
    double s = 0.0, q = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      s += v(i);
      q += v(i) * v(i);
    }
    sums[b] = s;
    sqs[b] = q;
  });
  double s = 0.0, q = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    s += sums[b];
    q += sqs[b];
  }
  const double dn = static_cast<double>(n);
  MonteCarloValue out;
  out.mean = s / dn;
  out.stderr_ = n > 1 ? std::sqrt(std::max(0.0, (q - dn * out.mean * out.mean) / (dn - 1.0)) / dn) : 0.0;
  return out;
}

MonteCarloValue smoothed_value_mc(const Network& net, const Vector& x0, const CovarianceModel& cov, std::size_t n,
                                  std::uint64_t seed) {
  return smoothed_value_mc(as_function(net), x0, cov, n, seed);
}

Matrix smoothed_hessian_fd(const ScalarFunction& f, const Vector& x0, const CovarianceModel& cov, std::size_t n,
                           std::uint64_t seed, double step) {
  const Eigen::Index d = x0.size();
  auto h = [&](const Vector& x) { return smoothed_value_mc(f, x, cov, n, seed).mean; };
  Matrix out(d, d);
  const double f0 = h(x0);
  for (Eigen::Index i = 0; i < d; ++i) {
    const Vector ei = Vector::Unit(d, i) * step;
    out(i, i) = (h(x0 + ei) - 2.0 * f0 + h(x0 - ei)) / (step * step);
    for (Eigen::Index j = 0; j < i; ++j) {
      const Vector ej = Vector::Unit(d, j) * step;
      const double v = (h(x0 + ei + ej) - h(x0 + ei - ej) - h(x0 - ei + ej) + h(x0 - ei - ej)) / (4.0 * step * step);
      out(i, j) = out(j, i) = v;
    }
  }
  return out;
}

Rank1Eigs rank1_symmetrized_eigs(const Vector& x, const Vector& y) {
  if (x.size() != y.size()) throw DimensionError("rank1_symmetrized_eigs: length mismatch");
  const double dot = x.dot(y);
  const double prod = x.norm() * y.norm();
  // Cauchy-Schwarz guarantees |dot| <= prod; clamp rounding so the signs hold.
  return {std::max(0.0, dot + prod), std::min(0.0, dot - prod)};
}

}  // namespace smoothhess
