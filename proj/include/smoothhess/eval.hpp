#pragma once

#include "smoothhess/core.hpp"
#include "smoothhess/net.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace smoothhess {

/// Local model f(x0) + G^T (x - x0) + 1/2 (x - x0)^T H (x - x0). The constant
/// term is always the true output at x0 so that only G and H are compared.
struct TaylorSurrogate {
  Vector x0;
  double f_x0 = 0.0;
  Vector grad;
  Matrix hess;  // zero for first-order surrogates

  static TaylorSurrogate first_order(Vector x0, double f_x0, Vector grad);
  static TaylorSurrogate second_order(Vector x0, double f_x0, Vector grad, Matrix hess);
};

double surrogate_eval(const TaylorSurrogate& s, const Vector& x);

struct PmseResult {
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// Ball-averaged squared error between the surrogate and f over B_eps(x0),
/// from n uniform samples (Gaussian direction, radius eps U^(1/d)).
PmseResult pmse(const ScalarFunction& f, const TaylorSurrogate& s, double epsilon, std::size_t n, std::uint64_t seed);
PmseResult pmse(const Network& net, const TaylorSurrogate& s, double epsilon, std::size_t n, std::uint64_t seed);

/// n points uniform in the radius-eps ball around x0, deterministic in (seed, stream).
Matrix uniform_ball(const Vector& x0, double epsilon, std::size_t n, std::uint64_t seed, std::uint64_t stream);

struct Eigensystem {
  Vector values;   // sorted by |lambda| descending
  Matrix vectors;  // orthonormal columns, matching order
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
Eigensystem eigendecompose_symmetric(const Matrix& h);

struct RankTruncation {
  std::size_t k = 0;
  Vector values;
  Matrix vectors;
};

/// Smallest k whose leading |lambda| mass reaches T of the total (k = 0 for a
/// zero spectrum). T must lie in (0, 1].
RankTruncation truncate_rank(const Vector& values, const Matrix& vectors, double threshold);

struct AttackResult {
  Vector delta_star;  // attack vector, |delta_star| <= epsilon
  double epsilon = 0.0;
  std::size_t k_used = 0;
  double objective_value = 0.0;  // G^T delta + 1/2 delta^T H_k delta under the rank-k model
  bool flipped = false;
};

/// Minimizes G^T delta + 1/2 delta^T H_k delta over |delta| <= eps, where H_k
/// is the rank-k truncation of H chosen by `threshold`. Solved exactly in the
/// eigenbasis (trust-region secular equation, hard case included).
AttackResult trust_region_attack(const Vector& grad, const Matrix& hess, double epsilon, double threshold);

/// -eps G / |G|.
AttackResult first_order_attack(const Vector& grad, double epsilon);

/// Uniform direction on the sphere scaled to eps.
AttackResult random_attack(std::size_t dim, double epsilon, std::uint64_t seed, std::uint64_t stream);

/// Fraction of points whose argmax class survives the attack.
double post_hoc_accuracy(const Network& classifier, const std::vector<Vector>& points,
                         const std::vector<AttackResult>& attacks);

/// One row of the attack / P_MSE report CSV.
struct ReportRow {
  std::string point_id;
  std::string method;
  double epsilon = 0.0;
  double sigma2_or_beta = 0.0;
  double value = 0.0;
  double stderr_ = 0.0;
  std::size_t k_used = 0;
  bool flipped = false;
};

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows);

/// Shortest round-trip decimal form, used for every CSV number.
std::string format_double(double v);

}  // namespace smoothhess
