#pragma once

#include "smoothhess/core.hpp"
#include "smoothhess/net.hpp"
#include "smoothhess/sampling.hpp"

#include "json.hpp"

#include <cstdint>
#include <vector>

namespace smoothhess {

struct EstimatorConfig {
  std::size_t batch_size = 1000;  // gradient oracle calls per batch
  std::size_t n_batches = 1;
  bool antithetic = false;
  std::uint64_t seed = 0;

  std::size_t total_samples() const { return batch_size * n_batches; }
  void validate() const;
};

/// Joint SmoothHess / SmoothGrad estimate at a point.
///
/// The standard errors come from the spread of the per-sample contributions
/// sym(Sigma^-1 delta_i grad_i^T) and grad_i (per antithetic pair when
/// antithetic sampling is on).
struct InteractionEstimate {
  Matrix hessian;  // symmetric, exactly
  Vector grad;
  Matrix hessian_stderr;
  Vector grad_stderr;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  Vector point;
  nlohmann::json covariance;

  double stderr_hessian_max() const { return hessian_stderr.maxCoeff(); }
};

InteractionEstimate estimate(const ScalarFunction& f, const Vector& x0, const CovarianceModel& cov,
                             const EstimatorConfig& cfg);
InteractionEstimate estimate(const Network& net, const Vector& x0, const CovarianceModel& cov,
                             const EstimatorConfig& cfg);

/// Estimates after the first c samples for every c in `checkpoints` (ascending,
/// each <= total samples, even under antithetic sampling), from one pass.
/// An estimate at c = total samples is bit-identical to estimate().
std::vector<InteractionEstimate> estimate_streaming(const ScalarFunction& f, const Vector& x0,
                                                    const CovarianceModel& cov, const EstimatorConfig& cfg,
                                                    const std::vector<std::size_t>& checkpoints);
std::vector<InteractionEstimate> estimate_streaming(const Network& net, const Vector& x0,
                                                    const CovarianceModel& cov, const EstimatorConfig& cfg,
                                                    const std::vector<std::size_t>& checkpoints);

/// SmoothGrad alone, on the same perturbation stream: equals estimate().grad.
Vector smoothgrad(const ScalarFunction& f, const Vector& x0, const CovarianceModel& cov, const EstimatorConfig& cfg);
Vector smoothgrad(const Network& net, const Vector& x0, const CovarianceModel& cov, const EstimatorConfig& cfg);

nlohmann::json estimate_to_json(const InteractionEstimate& est);

}  // namespace smoothhess
