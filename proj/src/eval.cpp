#include "smoothhess/eval.hpp"

#include "smoothhess/parallel.hpp"
#include "smoothhess/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>

namespace smoothhess {

TaylorSurrogate TaylorSurrogate::first_order(Vector x0, double f_x0, Vector grad) {
  const auto d = x0.size();
  return second_order(std::move(x0), f_x0, std::move(grad), Matrix::Zero(d, d));
}

TaylorSurrogate TaylorSurrogate::second_order(Vector x0, double f_x0, Vector grad, Matrix hess) {
  if (grad.size() != x0.size() || hess.rows() != x0.size() || hess.cols() != x0.size())
    throw DimensionError("surrogate: gradient/Hessian sizes do not match the point");
  if (!std::isfinite(f_x0)) throw InvalidArgument("surrogate: f(x0) must be finite");
  TaylorSurrogate s;
  s.x0 = std::move(x0);
  s.f_x0 = f_x0;
  s.grad = std::move(grad);
  s.hess = 0.5 * (hess + hess.transpose());
  return s;
}

double surrogate_eval(const TaylorSurrogate& s, const Vector& x) {
  if (x.size() != s.x0.size()) throw DimensionError("surrogate_eval: point has the wrong dimension");
  const Vector dx = x - s.x0;
  return s.f_x0 + s.grad.dot(dx) + 0.5 * dx.dot(s.hess * dx);
}

Matrix uniform_ball(const Vector& x0, double epsilon, std::size_t n, std::uint64_t seed, std::uint64_t stream) {
  const Eigen::Index d = x0.size();
  RandomStream rng(derive_seed(seed, 0xBA11), stream);
  Matrix out(static_cast<Eigen::Index>(n), d);
  Vector dir(d);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    double norm = 0.0;
    do {
      for (Eigen::Index j = 0; j < d; ++j) dir(j) = rng.normal();
      norm = dir.norm();
    } while (norm == 0.0);
    const double radius = epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
    out.row(i) = (x0 + dir * (radius / norm)).transpose();
  }
  return out;
}

PmseResult pmse(const ScalarFunction& f, const TaylorSurrogate& s, double epsilon, std::size_t n, std::uint64_t seed) {
  if (!(epsilon > 0.0)) throw InvalidArgument("pmse: epsilon must be positive");
  if (n < 2) throw InvalidArgument("pmse: n must be at least 2");
  if (f.dim != static_cast<std::size_t>(s.x0.size())) throw DimensionError("pmse: surrogate and function dimensions differ");
  constexpr std::size_t kBatch = 4096;
  const std::size_t batches = (n + kBatch - 1) / kBatch;
  std::vector<double> sums(batches), sqs(batches);
  parallel_for(batches, [&](std::size_t b) {
    const std::size_t rows = std::min(kBatch, n - b * kBatch);
    const Matrix xs = uniform_ball(s.x0, epsilon, rows, seed, b);
    const Vector truth = f.values(xs);
    double sum = 0.0, sq = 0.0;
    for (Eigen::Index i = 0; i < xs.rows(); ++i) {
      const double e = surrogate_eval(s, xs.row(i).transpose()) - truth(i);
      sum += e * e;
      sq += e * e * e * e;
    }
    sums[b] = sum;
    sqs[b] = sq;
  });
  double sum = 0.0, sq = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    sum += sums[b];
    sq += sqs[b];
  }
  const double dn = static_cast<double>(n);
  PmseResult r;
  r.mean = sum / dn;
  r.stderr_ = std::sqrt(std::max(0.0, (sq - dn * r.mean * r.mean) / (dn - 1.0)) / dn);
  return r;
}

PmseResult pmse(const Network& net, const TaylorSurrogate& s, double epsilon, std::size_t n, std::uint64_t seed) {
  return pmse(as_function(net), s, epsilon, n, seed);
}

Eigensystem eigendecompose_symmetric(const Matrix& h) {
  if (h.rows() != h.cols()) throw DimensionError("eigendecompose_symmetric: matrix must be square");
  const Eigen::Index d = h.rows();
  const double scale = d > 0 ? std::max(1.0, h.cwiseAbs().maxCoeff()) : 1.0;
  if (d > 0 && (h - h.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw InvalidArgument("eigendecompose_symmetric: matrix is not symmetric");

  Matrix a = 0.5 * (h + h.transpose());
  Matrix v = Matrix::Identity(d, d);
  const double target = 1e-12 * a.norm();
  auto off_norm = [&] {
    double s = 0.0;
    for (Eigen::Index q = 0; q < d; ++q)
      for (Eigen::Index p = 0; p < q; ++p) s += 2.0 * a(p, q) * a(p, q);
    return std::sqrt(s);
  };
  for (int sweep = 0; sweep < 100 && off_norm() > target; ++sweep) {
    for (Eigen::Index p = 0; p < d - 1; ++p) {
      for (Eigen::Index q = p + 1; q < d; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        // A <- J^T A J with J the (p, q) rotation.
        for (Eigen::Index k = 0; k < d; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < d; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (Eigen::Index k = 0; k < d; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
    const double ai = std::abs(a(i, i)), aj = std::abs(a(j, j));
    if (ai != aj) return ai > aj;
    return a(i, i) > a(j, j);
  });
  Eigensystem out;
  out.values.resize(d);
  out.vectors.resize(d, d);
  for (Eigen::Index k = 0; k < d; ++k) {
    out.values(k) = a(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(k)]);
    out.vectors.col(k) = v.col(order[static_cast<std::size_t>(k)]);
  }
  return out;
}

RankTruncation truncate_rank(const Vector& values, const Matrix& vectors, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw InvalidArgument("truncate_rank: threshold must lie in (0, 1]");
  if (vectors.cols() != values.size()) throw DimensionError("truncate_rank: values and vectors disagree");
  const double total = values.cwiseAbs().sum();
  RankTruncation out;
  if (total > 0.0) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      acc += std::abs(values(i));
      ++out.k;
      if (acc >= threshold * total) break;
    }
  }
  const auto k = static_cast<Eigen::Index>(out.k);
  out.values = values.head(k);
  out.vectors = vectors.leftCols(k);
  return out;
}

namespace {

// min g^T x + 1/2 sum lambda_i x_i^2 s.t. |x| <= eps, diagonal curvature.
Vector solve_diagonal_trust_region(const Vector& g, const Vector& lambda, double eps) {
  const Eigen::Index m = g.size();
  const double gnorm = g.norm();
  const double lmin = lambda.minCoeff();
  const double lscale = std::max(lambda.cwiseAbs().maxCoeff(), 1e-300);
  auto step = [&](double mu, const std::vector<char>* skip) {
    Vector x(m);
    for (Eigen::Index i = 0; i < m; ++i)
      x(i) = (skip && (*skip)[static_cast<std::size_t>(i)]) ? 0.0 : -g(i) / (lambda(i) + mu);
    return x;
  };

  if (lmin > 0.0) {
    const Vector x = step(0.0, nullptr);
    if (x.norm() <= eps) return x;
  }

  const double lo0 = std::max(0.0, -lmin);
  std::vector<char> minimal(static_cast<std::size_t>(m), 0);
  bool hard = true;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (lambda(i) <= lmin + 1e-12 * lscale) {
      minimal[static_cast<std::size_t>(i)] = 1;
      if (!(std::abs(g(i)) < 1e-12 * gnorm) && gnorm > 0.0) hard = false;
    }
  }
  if (lmin <= 0.0 && hard) {
    Vector x = step(lo0, &minimal);
    const double xn = x.norm();
    if (xn <= eps) {
      if (lo0 == 0.0) return x;  // singular PSD: stationary point inside the ball
      Eigen::Index e = 0;
      while (!minimal[static_cast<std::size_t>(e)]) ++e;
      x(e) = std::sqrt(std::max(0.0, eps * eps - xn * xn));
      return x;
    }
  }

  // Secular equation |x(mu)| = eps on (lo, hi); Newton on 1/|x| - 1/eps with bisection safeguard.
  double lo = lo0;
  double hi = std::max(lo0, gnorm / eps - lmin);
  if (step(hi, nullptr).norm() > eps) hi = hi * 2.0 + 1.0;
  double mu = hi;
  for (int iter = 0; iter < 500; ++iter) {
    const Vector x = step(mu, nullptr);
    const double xn = x.norm();
    if (std::abs(xn - eps) <= 1e-10 * eps) break;
    if (xn > eps)
      lo = mu;
    else
      hi = mu;
    double dsum = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double den = lambda(i) + mu;
      dsum += g(i) * g(i) / (den * den * den);
    }
    // psi(mu) = 1/|x| - 1/eps, psi' = dsum / |x|^3.
    double next = mu - (1.0 / xn - 1.0 / eps) * xn * xn * xn / dsum;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (hi - lo <= 1e-15 * std::max(1.0, std::abs(hi))) {
      mu = hi;
      break;
    }
    mu = next;
  }
  return step(mu, nullptr);
}

}  // namespace

AttackResult first_order_attack(const Vector& grad, double epsilon) {
  if (!(epsilon > 0.0)) throw InvalidArgument("attack: epsilon must be positive");
  const double n = grad.norm();
  if (!(n > 0.0)) throw NoDescentDirection("attack: gradient is zero");
  AttackResult r;
  r.epsilon = epsilon;
  r.delta_star = -epsilon * grad / n;
  r.objective_value = grad.dot(r.delta_star);
  return r;
}

AttackResult trust_region_attack(const Vector& grad, const Matrix& hess, double epsilon, double threshold) {
  if (!(epsilon > 0.0)) throw InvalidArgument("attack: epsilon must be positive");
  const Eigen::Index d = grad.size();
  if (hess.rows() != d || hess.cols() != d) throw DimensionError("attack: Hessian does not match the gradient");
  if (grad.isZero(0.0) && hess.isZero(0.0)) throw NoDescentDirection("attack: gradient and Hessian are both zero");

  const Eigensystem eig = eigendecompose_symmetric(hess);
  const RankTruncation trunc = truncate_rank(eig.values, eig.vectors, threshold);
  if (trunc.k == 0) {
    AttackResult r = first_order_attack(grad, epsilon);
    return r;
  }

  // Reduced basis: the k leading eigenvectors plus, when G leaves their span,
  // the normalized residual of G (zero curvature under the rank-k model).
  Matrix basis = trunc.vectors;
  Vector curv = trunc.values;
  const Vector reduced_g = basis.transpose() * grad;
  const Vector residual = grad - basis * reduced_g;
  const double rnorm = residual.norm();
  if (trunc.k < static_cast<std::size_t>(d) && rnorm > 1e-12 * grad.norm()) {
    basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
    basis.col(basis.cols() - 1) = residual / rnorm;
    curv.conservativeResize(curv.size() + 1);
    curv(curv.size() - 1) = 0.0;
  }
  const Vector g = basis.transpose() * grad;
  const Vector x = solve_diagonal_trust_region(g, curv, epsilon);

  AttackResult r;
  r.epsilon = epsilon;
  r.k_used = trunc.k;
  r.delta_star = basis * x;
  const double norm = r.delta_star.norm();
  if (norm > epsilon) r.delta_star *= epsilon / norm;
  const Vector proj = trunc.vectors.transpose() * r.delta_star;
  r.objective_value = grad.dot(r.delta_star) + 0.5 * proj.dot(trunc.values.cwiseProduct(proj));
  return r;
}

AttackResult random_attack(std::size_t dim, double epsilon, std::uint64_t seed, std::uint64_t stream) {
  if (!(epsilon > 0.0)) throw InvalidArgument("attack: epsilon must be positive");
  RandomStream rng(derive_seed(seed, 0x4A7D), stream);
  Vector dir(static_cast<Eigen::Index>(dim));
  do {
    for (Eigen::Index j = 0; j < dir.size(); ++j) dir(j) = rng.normal();
  } while (dir.norm() == 0.0);
  AttackResult r;
  r.epsilon = epsilon;
  r.delta_star = dir * (epsilon / dir.norm());
  return r;
}

double post_hoc_accuracy(const Network& classifier, const std::vector<Vector>& points,
                         const std::vector<AttackResult>& attacks) {
  if (points.size() != attacks.size()) throw DimensionError("post_hoc_accuracy: points and attacks differ in length");
  if (points.empty()) throw InvalidArgument("post_hoc_accuracy: no points");
  std::size_t kept = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (classifier.predict_class(points[i]) == classifier.predict_class(points[i] + attacks[i].delta_star)) ++kept;
  }
  return static_cast<double>(kept) / static_cast<double>(points.size());
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  out << "point_id,method,epsilon,sigma2_or_beta,value,stderr,k_used,flipped\n";
  for (const ReportRow& r : rows) {
    out << r.point_id << ',' << r.method << ',' << format_double(r.epsilon) << ',' << format_double(r.sigma2_or_beta)
        << ',' << format_double(r.value) << ',' << format_double(r.stderr_) << ',' << r.k_used << ','
        << (r.flipped ? 1 : 0) << '\n';
  }
}

}  // namespace smoothhess
