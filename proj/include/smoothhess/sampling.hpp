#pragma once

#include "smoothhess/core.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace smoothhess {

/// Positive-definite Gaussian covariance with its Cholesky factor cached.
/// Sampling uses delta = L z; the inverse is applied as L^-T z for the same
/// standard normal z, so Sigma^-1 is never formed on the hot path.
class CovarianceModel {
 public:
  enum class Kind { isotropic, diagonal, full };

  struct Eigenbasis {
    Matrix vectors;  // orthonormal columns
    Vector values;
  };

  static CovarianceModel isotropic(std::size_t d, double sigma2);
  static CovarianceModel diagonal(const Vector& variances);
  static CovarianceModel full(const Matrix& sigma);

  Kind kind() const { return kind_; }
  std::size_t dim() const { return static_cast<std::size_t>(sigma_.rows()); }
  const Matrix& matrix() const { return sigma_; }
  /// Lower-triangular L with L L^T = Sigma.
  const Matrix& factor() const { return factor_; }
  Matrix inverse() const;
  double log_det() const { return log_det_; }
  double trace() const { return sigma_.trace(); }
  const std::optional<Eigenbasis>& eigenbasis() const { return eigenbasis_; }

  /// Rows of z (n x d) mapped to rows of delta = z L^T.
  Matrix apply_factor(const Matrix& z) const;
  /// Rows of z mapped to rows of Sigma^-1 (L z) = L^-T z.
  Matrix inverse_from_standard(const Matrix& z) const;
  Vector solve(const Vector& v) const;

  double mahalanobis(const Vector& delta) const;
  double density_from_mahalanobis(double m) const;
  double density(const Vector& delta) const { return density_from_mahalanobis(mahalanobis(delta)); }

  /// Config spec this model was built from (see covariance_from_json).
  const nlohmann::json& spec() const { return spec_; }

 private:
  friend CovarianceModel covariance_from_directions(const std::vector<Vector>&, const std::vector<double>&, double);
  CovarianceModel() = default;
  void factorize();

  Kind kind_ = Kind::isotropic;
  Matrix sigma_;
  Matrix factor_;
  Vector scale_;  // sqrt of variances for isotropic/diagonal
  double log_det_ = 0.0;
  std::optional<Eigenbasis> eigenbasis_;
  nlohmann::json spec_;
};

/// Orthonormalizes the directions (modified Gram-Schmidt), extends them to a
/// basis Q and returns Sigma = Q diag(variances, fill_variance...) Q^T.
CovarianceModel covariance_from_directions(const std::vector<Vector>& directions, const std::vector<double>& variances,
                                           double fill_variance);

/// {"kind": "isotropic", "sigma2"} | {"kind": "diagonal", "variances"} |
/// {"kind": "full", "matrix"} | {"kind": "directions", "directions", "variances", "fill_variance"}.
/// `dim` is required for isotropic specs.
CovarianceModel covariance_from_json(const nlohmann::json& spec, std::size_t dim);

/// sigma = epsilon / sqrt(d).
double sigma_for_radius(double epsilon, std::size_t d);

struct PerturbationStream {
  std::uint64_t seed = 0;
  std::size_t batch_size = 1;
  const CovarianceModel* covariance = nullptr;
  bool antithetic = false;
};

struct PerturbationBatch {
  Matrix standard;  // z, n x d
  Matrix delta;     // L z
};

/// Batch `batch_index` of the stream: a pure function of (seed, batch_index).
/// With antithetic sampling rows 2i and 2i+1 are z and -z.
PerturbationBatch sample_perturbations(const PerturbationStream& stream, std::uint64_t batch_index);
Matrix sample_batch(const PerturbationStream& stream, std::uint64_t batch_index);

/// Standard normal rows from substream `stream_id` of `seed`.
Matrix standard_normal_rows(std::uint64_t seed, std::uint64_t stream_id, std::size_t rows, std::size_t dim,
                            bool antithetic);

}  // namespace smoothhess
