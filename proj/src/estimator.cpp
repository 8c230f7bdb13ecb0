#include "smoothhess/estimator.hpp"

#include "smoothhess/model_io.hpp"
#include "smoothhess/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace smoothhess {

void EstimatorConfig::validate() const {
  if (batch_size == 0 || n_batches == 0) throw InvalidArgument("batch_size and n_batches must be positive");
  if (antithetic && batch_size % 2 != 0) throw InvalidArgument("antithetic sampling needs an even batch_size");
}

namespace {

// Running sums of one batch. Values are accumulated shifted by the batch's
// first unit so the second moment stays well conditioned.
struct Moments {
  std::size_t count = 0;
  Matrix h_shift, h_sum, h_dev, h_dev2;
  Vector g_shift, g_sum, g_dev, g_dev2;

  void reset(Eigen::Index d, bool with_hessian) {
    count = 0;
    if (with_hessian) {
      h_shift = h_sum = h_dev = h_dev2 = Matrix::Zero(d, d);
    }
    g_shift = g_sum = g_dev = g_dev2 = Vector::Zero(d);
  }
};

// Neumaier-compensated sum merged in batch order, plus Chan's pairwise
// variance update for the diagnostics.
struct Reduction {
  std::size_t count = 0;
  Matrix h_total, h_comp, h_mean, h_m2;
  Vector g_total, g_comp, g_mean, g_m2;
  bool with_hessian = true;

  void init(Eigen::Index d, bool hess) {
    with_hessian = hess;
    if (hess) h_total = h_comp = h_mean = h_m2 = Matrix::Zero(d, d);
    g_total = g_comp = g_mean = g_m2 = Vector::Zero(d);
  }

  template <typename M>
  static void neumaier(M& total, M& comp, const M& add) {
    for (Eigen::Index i = 0; i < total.size(); ++i) {
      double& t = total.data()[i];
      const double a = add.data()[i];
      const double s = t + a;
      comp.data()[i] += std::abs(t) >= std::abs(a) ? (t - s) + a : (a - s) + t;
      t = s;
    }
  }

  template <typename M>
  static void chan(M& mean, M& m2, std::size_t n, const M& shift, const M& dev, const M& dev2, std::size_t nb) {
    const double nn = static_cast<double>(n), bb = static_cast<double>(nb);
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
      const double bmean = shift.data()[i] + dev.data()[i] / bb;
      const double bm2 = std::max(0.0, dev2.data()[i] - dev.data()[i] * dev.data()[i] / bb);
      const double delta = bmean - mean.data()[i];
      mean.data()[i] += delta * bb / (nn + bb);
      m2.data()[i] += bm2 + delta * delta * nn * bb / (nn + bb);
    }
  }

  void merge(const Moments& b) {
    if (b.count == 0) return;
    if (with_hessian) {
      neumaier(h_total, h_comp, b.h_sum);
      chan(h_mean, h_m2, count, b.h_shift, b.h_dev, b.h_dev2, b.count);
    }
    neumaier(g_total, g_comp, b.g_sum);
    chan(g_mean, g_m2, count, b.g_shift, b.g_dev, b.g_dev2, b.count);
    count += b.count;
  }

  void finish(InteractionEstimate& est) const {
    const double n = static_cast<double>(count);
    auto se = [&](double m2) { return count > 1 ? std::sqrt(m2 / (n - 1.0) / n) : 0.0; };
    if (with_hessian) {
      est.hessian = (h_total + h_comp) / n;
      est.hessian_stderr = h_m2.unaryExpr(se);
    }
    est.grad = (g_total + g_comp) / n;
    est.grad_stderr = g_m2.unaryExpr(se);
  }
};

struct BatchResult {
  Moments full;
  std::vector<std::pair<std::size_t, Moments>> snapshots;  // (checkpoint slot, prefix moments)
};

struct Job {
  const ScalarFunction& f;
  const Vector& x0;
  const CovarianceModel& cov;
  const EstimatorConfig& cfg;
  bool with_hessian;
};

// One sampling unit: the Hessian term sym(u g_h^T) and the gradient term g.
void accumulate(Moments& m, const Vector& u, const Vector& g_h, const Vector& g, bool with_hessian) {
  const Eigen::Index d = g.size();
  const bool first = m.count == 0;
  if (with_hessian) {
    for (Eigen::Index b = 0; b < d; ++b) {
      for (Eigen::Index a = 0; a <= b; ++a) {
        const double v = 0.5 * (u(a) * g_h(b) + u(b) * g_h(a));
        if (first) m.h_shift(a, b) = v;
        const double dev = v - m.h_shift(a, b);
        m.h_sum(a, b) += v;
        m.h_dev(a, b) += dev;
        m.h_dev2(a, b) += dev * dev;
      }
    }
  }
  for (Eigen::Index a = 0; a < d; ++a) {
    if (first) m.g_shift(a) = g(a);
    const double dev = g(a) - m.g_shift(a);
    m.g_sum(a) += g(a);
    m.g_dev(a) += dev;
    m.g_dev2(a) += dev * dev;
  }
  ++m.count;
}

void mirror_upper(Moments& m) {
  auto fill = [](Matrix& x) { x.triangularView<Eigen::StrictlyLower>() = x.transpose(); };
  fill(m.h_shift);
  fill(m.h_sum);
  fill(m.h_dev);
  fill(m.h_dev2);
}

// `stops` are (unit offset within this batch, checkpoint slot), ascending.
BatchResult run_batch(const Job& job, std::uint64_t b, const std::vector<std::pair<std::size_t, std::size_t>>& stops) {
  const Eigen::Index d = job.x0.size();
  PerturbationStream stream{job.cfg.seed, job.cfg.batch_size, &job.cov, job.cfg.antithetic};
  const PerturbationBatch batch = sample_perturbations(stream, b);
  const Matrix xs = batch.delta.rowwise() + job.x0.transpose();
  const Matrix grads = job.f.gradients(xs);
  if (grads.rows() != xs.rows() || grads.cols() != d)
    throw DimensionError("gradient oracle returned the wrong shape in batch " + std::to_string(b));
  if (!grads.allFinite()) throw NonFiniteGradient("non-finite gradient encountered in batch " + std::to_string(b));
  const Matrix us = job.with_hessian ? job.cov.inverse_from_standard(batch.standard) : Matrix();

  BatchResult out;
  out.full.reset(d, job.with_hessian);
  const std::size_t step = job.cfg.antithetic ? 2 : 1;
  const std::size_t units = job.cfg.batch_size / step;
  std::size_t next_stop = 0;
  Vector u = Vector::Zero(d), g(d), g_h(d);
  for (std::size_t i = 0; i < units; ++i) {
    const auto r = static_cast<Eigen::Index>(i * step);
    if (job.cfg.antithetic) {
      // Pair (z, -z): mean of sym(u g+^T) and sym(-u g-^T) is sym(u (g+ - g-)^T / 2).
      g = 0.5 * (grads.row(r) + grads.row(r + 1)).transpose();
      g_h = 0.5 * (grads.row(r) - grads.row(r + 1)).transpose();
    } else {
      g = grads.row(r).transpose();
      g_h = g;
    }
    if (job.with_hessian) u = us.row(r).transpose();
    accumulate(out.full, u, g_h, g, job.with_hessian);
    while (next_stop < stops.size() && stops[next_stop].first == i + 1) {
      Moments snap = out.full;
      if (job.with_hessian) mirror_upper(snap);
      out.snapshots.emplace_back(stops[next_stop].second, std::move(snap));
      ++next_stop;
    }
  }
  if (job.with_hessian) mirror_upper(out.full);
  return out;
}

std::vector<InteractionEstimate> run(const Job& job, const std::vector<std::size_t>& checkpoints) {
  job.cfg.validate();
  const auto d = static_cast<Eigen::Index>(job.cov.dim());
  if (job.x0.size() != d || job.f.dim != job.cov.dim())
    throw DimensionError("point, function and covariance dimensions disagree");
  const std::size_t step = job.cfg.antithetic ? 2 : 1;
  const std::size_t units_per_batch = job.cfg.batch_size / step;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const std::size_t c = checkpoints[i];
    if (c == 0 || c > job.cfg.total_samples()) throw InvalidArgument("checkpoint out of range");
    if (i > 0 && c <= checkpoints[i - 1]) throw InvalidArgument("checkpoints must be strictly ascending");
    if (c % step != 0) throw InvalidArgument("antithetic checkpoints must be even");
  }

  // Checkpoint slots grouped by the batch they end in.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> stops(job.cfg.n_batches);
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const std::size_t units = checkpoints[i] / step;
    const std::size_t b = (units - 1) / units_per_batch;
    stops[b].emplace_back(units - b * units_per_batch, i);
  }
  const std::size_t last_batch = checkpoints.empty() ? 0 : (checkpoints.back() / step - 1) / units_per_batch;

  std::vector<InteractionEstimate> results(checkpoints.size());
  Reduction red;
  red.init(d, job.with_hessian);
  const std::size_t chunk = std::max<std::size_t>(4 * thread_count(), 1);
  std::vector<BatchResult> partial;
  for (std::size_t start = 0; start <= last_batch; start += chunk) {
    const std::size_t len = std::min(chunk, last_batch + 1 - start);
    partial.assign(len, BatchResult{});
    parallel_for(len, [&](std::size_t i) { partial[i] = run_batch(job, start + i, stops[start + i]); });
    for (std::size_t i = 0; i < len; ++i) {
      for (const auto& [slot, snap] : partial[i].snapshots) {
        Reduction probe = red;
        probe.merge(snap);
        probe.finish(results[slot]);
        results[slot].n_samples = checkpoints[slot];
      }
      red.merge(partial[i].full);
    }
  }
  for (auto& est : results) {
    est.seed = job.cfg.seed;
    est.point = job.x0;
    est.covariance = job.cov.spec();
  }
  return results;
}

}  // namespace

std::vector<InteractionEstimate> estimate_streaming(const ScalarFunction& f, const Vector& x0,
                                                    const CovarianceModel& cov, const EstimatorConfig& cfg,
                                                    const std::vector<std::size_t>& checkpoints) {
  return run(Job{f, x0, cov, cfg, true}, checkpoints);
}

std::vector<InteractionEstimate> estimate_streaming(const Network& net, const Vector& x0,
                                                    const CovarianceModel& cov, const EstimatorConfig& cfg,
                                                    const std::vector<std::size_t>& checkpoints) {
  return estimate_streaming(as_function(net), x0, cov, cfg, checkpoints);
}

InteractionEstimate estimate(const ScalarFunction& f, const Vector& x0, const CovarianceModel& cov,
                             const EstimatorConfig& cfg) {
  cfg.validate();
  return run(Job{f, x0, cov, cfg, true}, {cfg.total_samples()}).front();
}

InteractionEstimate estimate(const Network& net, const Vector& x0, const CovarianceModel& cov,
                             const EstimatorConfig& cfg) {
  return estimate(as_function(net), x0, cov, cfg);
}

Vector smoothgrad(const ScalarFunction& f, const Vector& x0, const CovarianceModel& cov, const EstimatorConfig& cfg) {
  cfg.validate();
  return run(Job{f, x0, cov, cfg, false}, {cfg.total_samples()}).front().grad;
}

Vector smoothgrad(const Network& net, const Vector& x0, const CovarianceModel& cov, const EstimatorConfig& cfg) {
  return smoothgrad(as_function(net), x0, cov, cfg);
}

nlohmann::json estimate_to_json(const InteractionEstimate& est) {
  return nlohmann::json{{"point", vector_to_json(est.point)},
                        {"hessian", matrix_to_json(est.hessian)},
                        {"grad", vector_to_json(est.grad)},
                        {"n", est.n_samples},
                        {"seed", est.seed},
                        {"covariance", est.covariance},
                        {"stderr_hessian_max", est.stderr_hessian_max()},
                        {"stderr_grad_max", est.grad_stderr.size() ? est.grad_stderr.maxCoeff() : 0.0}};
}

}  // namespace smoothhess
