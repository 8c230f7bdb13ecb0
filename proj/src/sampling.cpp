#include "smoothhess/sampling.hpp"

#include "smoothhess/model_io.hpp"
#include "smoothhess/rng.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <numbers>

namespace smoothhess {

namespace {

constexpr double kPivotTolerance = 1e-12;
constexpr double kDirectionPivot = 1e-10;

}  // namespace

CovarianceModel CovarianceModel::isotropic(std::size_t d, double sigma2) {
  if (d == 0) throw InvalidArgument("covariance dimension must be positive");
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw DegenerateCovariance("isotropic variance must be positive");
  CovarianceModel m;
  m.kind_ = Kind::isotropic;
  m.sigma_ = sigma2 * Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  m.scale_ = Vector::Constant(static_cast<Eigen::Index>(d), std::sqrt(sigma2));
  m.spec_ = {{"kind", "isotropic"}, {"sigma2", sigma2}};
  m.factorize();
  return m;
}

CovarianceModel CovarianceModel::diagonal(const Vector& variances) {
  if (variances.size() == 0) throw InvalidArgument("covariance dimension must be positive");
  for (Eigen::Index i = 0; i < variances.size(); ++i)
    if (!(variances(i) > 0.0) || !std::isfinite(variances(i)))
      throw DegenerateCovariance("diagonal variance " + std::to_string(i) + " must be positive");
  CovarianceModel m;
  m.kind_ = Kind::diagonal;
  m.sigma_ = variances.asDiagonal();
  m.scale_ = variances.cwiseSqrt();
  m.spec_ = {{"kind", "diagonal"}, {"variances", vector_to_json(variances)}};
  m.factorize();
  return m;
}

CovarianceModel CovarianceModel::full(const Matrix& sigma) {
  if (sigma.rows() == 0 || sigma.rows() != sigma.cols()) throw DimensionError("covariance must be square");
  if (!sigma.allFinite()) throw DegenerateCovariance("covariance has non-finite entries");
  const double scale = sigma.cwiseAbs().maxCoeff();
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw DegenerateCovariance("covariance is not symmetric");
  CovarianceModel m;
  m.kind_ = Kind::full;
  m.sigma_ = 0.5 * (sigma + sigma.transpose());
  m.spec_ = {{"kind", "full"}, {"matrix", matrix_to_json(m.sigma_)}};
  m.factorize();
  return m;
}

void CovarianceModel::factorize() {
  const auto d = sigma_.rows();
  const double floor = kPivotTolerance * sigma_.trace() / static_cast<double>(d);
  if (kind_ != Kind::full) {
    factor_ = scale_.asDiagonal();
    for (Eigen::Index i = 0; i < d; ++i)
      if (sigma_(i, i) <= floor) throw DegenerateCovariance("covariance pivot " + std::to_string(i) + " too small");
    log_det_ = sigma_.diagonal().array().log().sum();
    return;
  }
  Eigen::LLT<Matrix> llt(sigma_);
  if (llt.info() != Eigen::Success) throw DegenerateCovariance("covariance is not positive definite");
  factor_ = llt.matrixL();
  for (Eigen::Index i = 0; i < d; ++i) {
    const double pivot = factor_(i, i) * factor_(i, i);
    if (!(pivot > floor)) throw DegenerateCovariance("covariance pivot " + std::to_string(i) + " below tolerance");
  }
  log_det_ = 2.0 * factor_.diagonal().array().log().sum();
}

Matrix CovarianceModel::inverse() const {
  const auto d = sigma_.rows();
  if (kind_ != Kind::full) return sigma_.diagonal().cwiseInverse().asDiagonal();
  const Matrix linv = factor_.triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d));
  return linv.transpose() * linv;
}

Matrix CovarianceModel::apply_factor(const Matrix& z) const {
  if (z.cols() != sigma_.rows()) throw DimensionError("perturbation width does not match covariance dimension");
  if (kind_ != Kind::full) return z * scale_.asDiagonal();
  return z * factor_.transpose();
}

Matrix CovarianceModel::inverse_from_standard(const Matrix& z) const {
  if (z.cols() != sigma_.rows()) throw DimensionError("perturbation width does not match covariance dimension");
  if (kind_ != Kind::full) return z * scale_.cwiseInverse().asDiagonal();
  // Row-wise u^T = z^T L^-1, i.e. L^T u = z.
  Matrix ut = factor_.transpose().triangularView<Eigen::Upper>().solve(z.transpose());
  return ut.transpose();
}

Vector CovarianceModel::solve(const Vector& v) const {
  if (v.size() != sigma_.rows()) throw DimensionError("vector length does not match covariance dimension");
  if (kind_ != Kind::full) return v.cwiseQuotient(sigma_.diagonal());
  const Vector w = factor_.triangularView<Eigen::Lower>().solve(v);
  return factor_.transpose().triangularView<Eigen::Upper>().solve(w);
}

double CovarianceModel::mahalanobis(const Vector& delta) const { return delta.dot(solve(delta)); }

double CovarianceModel::density_from_mahalanobis(double m) const {
  const double d = static_cast<double>(dim());
  return std::exp(-0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * log_det_ - 0.5 * m);
}

CovarianceModel covariance_from_directions(const std::vector<Vector>& directions, const std::vector<double>& variances,
                                           double fill_variance) {
  if (directions.empty()) throw InvalidArgument("at least one direction is required");
  if (directions.size() != variances.size()) throw DimensionError("directions and variances differ in length");
  const auto d = directions.front().size();
  if (d == 0) throw DimensionError("directions must be non-empty vectors");
  if (static_cast<Eigen::Index>(directions.size()) > d) throw DegenerateDirections("more directions than dimensions");
  if (!(fill_variance > 0.0)) throw DegenerateCovariance("fill_variance must be positive");
  for (double v : variances)
    if (!(v > 0.0)) throw DegenerateCovariance("direction variances must be positive");

  Matrix q(d, d);
  Eigen::Index k = 0;
  auto project_out = [&](Vector& v) {
    // Two MGS sweeps keep the basis orthonormal to working precision.
    for (int sweep = 0; sweep < 2; ++sweep)
      for (Eigen::Index c = 0; c < k; ++c) v -= q.col(c).dot(v) * q.col(c);
  };
  for (const Vector& dir : directions) {
    if (dir.size() != d) throw DimensionError("directions have different lengths");
    const double norm = dir.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) throw DegenerateDirections("zero or non-finite direction");
    Vector v = dir / norm;
    project_out(v);
    const double pivot = v.norm();
    if (pivot < kDirectionPivot)
      throw DegenerateDirections("direction " + std::to_string(k) + " is linearly dependent on the previous ones");
    q.col(k++) = v / pivot;
  }
  // Complete the basis greedily with the standard basis vector that keeps the
  // largest residual.
  while (k < d) {
    Vector best;
    double best_norm = -1.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      Vector v = Vector::Unit(d, i);
      project_out(v);
      const double n = v.norm();
      if (n > best_norm) {
        best_norm = n;
        best = v;
      }
    }
    q.col(k++) = best / best_norm;
  }

  Vector eig = Vector::Constant(d, fill_variance);
  for (std::size_t i = 0; i < variances.size(); ++i) eig(static_cast<Eigen::Index>(i)) = variances[i];
  Matrix sigma = q * eig.asDiagonal() * q.transpose();
  sigma = 0.5 * (sigma + sigma.transpose()).eval();

  CovarianceModel m = CovarianceModel::full(sigma);
  m.eigenbasis_ = CovarianceModel::Eigenbasis{q, eig};
  nlohmann::json dirs = nlohmann::json::array();
  for (const Vector& dir : directions) dirs.push_back(vector_to_json(dir));
  m.spec_ = {{"kind", "directions"}, {"directions", dirs}, {"variances", variances}, {"fill_variance", fill_variance}};
  return m;
}

CovarianceModel covariance_from_json(const nlohmann::json& spec, std::size_t dim) {
  if (!spec.is_object() || !spec.contains("kind")) throw ParseError("covariance: expected an object with \"kind\"");
  const std::string kind = spec["kind"].get<std::string>();
  if (kind == "isotropic") {
    if (!spec.contains("sigma2")) throw ParseError("covariance: isotropic needs sigma2");
    return CovarianceModel::isotropic(dim, json_finite(spec["sigma2"], "sigma2"));
  }
  CovarianceModel m = [&] {
    if (kind == "diagonal") return CovarianceModel::diagonal(json_vector(spec.at("variances"), "variances"));
    if (kind == "full") return CovarianceModel::full(json_matrix(spec.at("matrix"), "matrix"));
    if (kind == "directions") {
      const Matrix dirs = json_matrix(spec.at("directions"), "directions");
      std::vector<Vector> list;
      for (Eigen::Index r = 0; r < dirs.rows(); ++r) list.emplace_back(dirs.row(r).transpose());
      const Vector v = json_vector(spec.at("variances"), "variances");
      return covariance_from_directions(list, std::vector<double>(v.data(), v.data() + v.size()),
                                        json_finite(spec.at("fill_variance"), "fill_variance"));
    }
    throw ParseError("covariance: unknown kind '" + kind + "'");
  }();
  if (dim != 0 && m.dim() != dim)
    throw DimensionError("covariance dimension " + std::to_string(m.dim()) + " does not match " + std::to_string(dim));
  return m;
}

double sigma_for_radius(double epsilon, std::size_t d) { return epsilon / std::sqrt(static_cast<double>(d)); }

Matrix standard_normal_rows(std::uint64_t seed, std::uint64_t stream_id, std::size_t rows, std::size_t dim,
                            bool antithetic) {
  if (antithetic && rows % 2 != 0) throw InvalidArgument("antithetic sampling needs an even batch size");
  RandomStream rng(seed, stream_id);
  const auto n = static_cast<Eigen::Index>(rows);
  const auto d = static_cast<Eigen::Index>(dim);
  Matrix z(n, d);
  const Eigen::Index step = antithetic ? 2 : 1;
  for (Eigen::Index i = 0; i < n; i += step) {
    for (Eigen::Index j = 0; j < d; ++j) z(i, j) = rng.normal();
    if (antithetic) z.row(i + 1) = -z.row(i);
  }
  return z;
}

PerturbationBatch sample_perturbations(const PerturbationStream& stream, std::uint64_t batch_index) {
  if (stream.covariance == nullptr) throw InvalidArgument("perturbation stream has no covariance");
  if (stream.batch_size == 0) throw InvalidArgument("batch size must be positive");
  PerturbationBatch batch;
  batch.standard = standard_normal_rows(derive_seed(stream.seed, 0x5A3F), batch_index, stream.batch_size,
                                        stream.covariance->dim(), stream.antithetic);
  batch.delta = stream.covariance->apply_factor(batch.standard);
  return batch;
}

Matrix sample_batch(const PerturbationStream& stream, std::uint64_t batch_index) {
  return sample_perturbations(stream, batch_index).delta;
}

}  // namespace smoothhess
