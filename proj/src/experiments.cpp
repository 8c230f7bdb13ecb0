#include "smoothhess/experiments.hpp"

#include "smoothhess/rng.hpp"
#include "smoothhess/sampling.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numbers>
#include <ostream>

#ifndef SMOOTHHESS_VERSION
#define SMOOTHHESS_VERSION "unknown"
#endif

namespace smoothhess {

double four_quadrant_label(double x1, double x2) {
  double k = -10.0;
  if (x1 >= 0.0 && x2 >= 0.0)
    k = 5.0;
  else if (x1 <= 0.0 && x2 >= 0.0)
    k = 3.0;
  else if (x1 <= 0.0 && x2 <= 0.0)
    k = 12.0;
  return k * x1 * x2;
}

double nested_label(double x1, double x2) {
  const double r = std::hypot(x1, x2);
  if (r <= 0.6) return 0.5 * x1 * x1 + x1 * x2;
  if (r <= 1.2) return x1 * x2;
  return -5.0 * x1 * x2;
}

std::size_t grid_points_per_axis(double spacing) {
  if (!(spacing > 0.0 && spacing <= 1.0)) throw InvalidArgument("grid spacing must lie in (0, 1]");
  return static_cast<std::size_t>(std::floor(4.0 / spacing + 1e-9)) + 1;
}

namespace {

template <typename Label>
Dataset grid_dataset(double spacing, const char* name, Label label) {
  const std::size_t m = grid_points_per_axis(spacing);
  Dataset data;
  data.name = name;
  data.grid_spacing = spacing;
  data.inputs.resize(static_cast<Eigen::Index>(m * m), 2);
  data.targets.resize(static_cast<Eigen::Index>(m * m));
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double x1 = -2.0 + static_cast<double>(i) * spacing;
    for (std::size_t j = 0; j < m; ++j) {
      const double x2 = -2.0 + static_cast<double>(j) * spacing;
      data.inputs(row, 0) = x1;
      data.inputs(row, 1) = x2;
      data.targets(row) = label(x1, x2);
      ++row;
    }
  }
  return data;
}

}  // namespace

Dataset gen_four_quadrant(double spacing) { return grid_dataset(spacing, "four-quadrant", four_quadrant_label); }

Dataset gen_nested_interactions(double spacing) { return grid_dataset(spacing, "nested", nested_label); }

Dataset gen_blobs(std::size_t per_class, std::size_t classes, double radius, double spread, std::uint64_t seed) {
  if (classes < 2 || per_class == 0) throw InvalidArgument("blobs need at least two classes and one point each");
  Dataset data;
  data.name = "blobs";
  const auto n = static_cast<Eigen::Index>(per_class * classes);
  data.inputs.resize(n, 2);
  data.targets.resize(n);
  RandomStream rng(derive_seed(seed, 0xB10B), 0);
  Eigen::Index row = 0;
  for (std::size_t p = 0; p < per_class; ++p) {
    for (std::size_t c = 0; c < classes; ++c) {
      const double angle = std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
      data.inputs(row, 0) = radius * std::cos(angle) + spread * rng.normal();
      data.inputs(row, 1) = radius * std::sin(angle) + spread * rng.normal();
      data.targets(row) = static_cast<double>(c);
      ++row;
    }
  }
  return data;
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  for (Eigen::Index c = 0; c < data.inputs.cols(); ++c) out << 'x' << (c + 1) << ',';
  out << "y\n";
  for (Eigen::Index r = 0; r < data.inputs.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.inputs.cols(); ++c) out << format_double(data.inputs(r, c)) << ',';
    out << format_double(data.targets(r)) << '\n';
  }
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw InvalidArgument("learning rate must be non-negative");
  if (iters < 0 || batch == 0) throw InvalidArgument("iters must be >= 0 and batch positive");
  if (!std::is_sorted(lr_decay_iters.begin(), lr_decay_iters.end()))
    throw InvalidArgument("lr_decay_iters must be ascending");
}

double TrainConfig::lr_at(std::int64_t iter) const {
  double rate = lr;
  for (std::int64_t m : lr_decay_iters)
    if (iter >= m) rate *= lr_decay_factor;
  return rate;
}

namespace {

struct Params {
  std::vector<Matrix> w;
  std::vector<Vector> b;
};

double softmax_xent(const Matrix& logits, const Vector& labels, Matrix* dlogits) {
  double loss = 0.0;
  if (dlogits) dlogits->resize(logits.rows(), logits.cols());
  for (Eigen::Index s = 0; s < logits.rows(); ++s) {
    const double m = logits.row(s).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(s).array() - m).exp();
    const double z = e.sum();
    const auto c = static_cast<Eigen::Index>(labels(s));
    loss += -(logits(s, c) - m - std::log(z));
    if (dlogits) {
      dlogits->row(s) = e / z;
      (*dlogits)(s, c) -= 1.0;
    }
  }
  const double n = static_cast<double>(logits.rows());
  if (dlogits) *dlogits /= n;
  return loss / n;
}

}  // namespace

double dataset_mse(const Network& net, const Dataset& data) {
  const Vector pred = net.batch_forward(data.inputs);
  return (pred - data.targets).squaredNorm() / static_cast<double>(data.size());
}

double dataset_accuracy(const Network& net, const Dataset& data) {
  const Matrix out = net.batch_outputs(data.inputs);
  std::size_t hits = 0;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    Eigen::Index best = 0;
    out.row(r).maxCoeff(&best);
    if (best == static_cast<Eigen::Index>(data.targets(r))) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

TrainResult train(const Network& net, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (static_cast<std::size_t>(data.inputs.cols()) != net.input_dim())
    throw DimensionError("dataset width does not match the network input");
  if (data.size() == 0) throw InvalidArgument("empty dataset");
  std::vector<Layer> layers = net.layers();
  const std::size_t L = layers.size();

  std::vector<Matrix> vw(L);
  std::vector<Vector> vb(L);
  for (std::size_t l = 0; l < L; ++l) {
    vw[l] = Matrix::Zero(layers[l].weight.rows(), layers[l].weight.cols());
    vb[l] = Vector::Zero(layers[l].bias.size());
  }

  const auto B = static_cast<Eigen::Index>(cfg.batch);
  const auto head_index = static_cast<Eigen::Index>(net.head().index);
  std::vector<Matrix> z(L), a(L + 1);
  Matrix x(B, data.inputs.cols());
  Vector y(B);
  const std::uint64_t stream_seed = derive_seed(cfg.seed, 0x7EA1);

  for (std::int64_t it = 0; it < cfg.iters; ++it) {
    RandomStream rng(stream_seed, static_cast<std::uint64_t>(it));
    for (Eigen::Index s = 0; s < B; ++s) {
      const auto r = static_cast<Eigen::Index>(rng.below(data.size()));
      x.row(s) = data.inputs.row(r);
      y(s) = data.targets(r);
    }

    a[0] = x;
    for (std::size_t l = 0; l < L; ++l) {
      z[l] = (a[l] * layers[l].weight.transpose()).rowwise() + layers[l].bias.transpose();
      const Layer& layer = layers[l];
      a[l + 1] = z[l].unaryExpr([&](double t) { return activate(layer.activation, layer.beta, t); });
    }

    Matrix grad_out;
    double loss = 0.0;
    if (cfg.loss == Loss::mse) {
      const Vector err = a[L].col(head_index) - y;
      loss = err.squaredNorm() / static_cast<double>(B);
      grad_out = Matrix::Zero(B, a[L].cols());
      grad_out.col(head_index) = 2.0 * err / static_cast<double>(B);
    } else {
      loss = softmax_xent(a[L], y, &grad_out);
    }
    if (!std::isfinite(loss))
      throw TrainingDiverged("training diverged at iteration " + std::to_string(it), it);

    const double rate = cfg.lr_at(it);
    Matrix da = std::move(grad_out);
    for (std::size_t l = L; l-- > 0;) {
      Layer& layer = layers[l];
      const Matrix dz =
          da.cwiseProduct(z[l].unaryExpr([&](double t) { return activate_d1(layer.activation, layer.beta, t); }));
      const Matrix gw = dz.transpose() * a[l];
      const Vector gb = dz.colwise().sum().transpose();
      if (l > 0) da = dz * layer.weight;
      if (cfg.optimizer == Optimizer::rmsprop) {
        constexpr double rho = TrainConfig::kRmspropDecay;
        vw[l] = rho * vw[l] + (1.0 - rho) * gw.cwiseProduct(gw);
        vb[l] = rho * vb[l] + (1.0 - rho) * gb.cwiseProduct(gb);
        layer.weight.array() -= rate * gw.array() / (vw[l].array().sqrt() + TrainConfig::kRmspropEps);
        layer.bias.array() -= rate * gb.array() / (vb[l].array().sqrt() + TrainConfig::kRmspropEps);
      } else {
        layer.weight -= rate * gw;
        layer.bias -= rate * gb;
      }
    }
  }

  TrainResult result;
  result.net = Network(net.input_dim(), std::move(layers), net.head());
  if (cfg.loss == Loss::mse) {
    result.final_loss = dataset_mse(result.net, data);
  } else {
    result.final_loss = softmax_xent(result.net.batch_outputs(data.inputs), data.targets, nullptr);
    result.final_accuracy = dataset_accuracy(result.net, data);
  }
  if (!std::isfinite(result.final_loss)) throw TrainingDiverged("training diverged (final loss)", cfg.iters);
  return result;
}

std::vector<double> log_grid(double lo_exp, double hi_exp, std::size_t count) {
  if (count == 0) throw InvalidArgument("grid must be non-empty");
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double t = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
    out[i] = std::pow(10.0, lo_exp + t * (hi_exp - lo_exp));
  }
  return out;
}

std::vector<SigmaSweepRow> sweep_sigma(const Network& net, const Vector& x0, const std::vector<double>& sigma2_grid,
                                       const EstimatorConfig& cfg, const std::vector<Entry>& entries) {
  if (sigma2_grid.empty()) throw InvalidArgument("sigma^2 grid is empty");
  std::vector<SigmaSweepRow> rows;
  for (std::size_t g = 0; g < sigma2_grid.size(); ++g) {
    EstimatorConfig point_cfg = cfg;
    point_cfg.seed = derive_seed(cfg.seed, g);
    const auto cov = CovarianceModel::isotropic(net.input_dim(), sigma2_grid[g]);
    const InteractionEstimate est = estimate(net, x0, cov, point_cfg);
    for (const auto& [i, j] : entries) {
      const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
      if (ii >= est.hessian.rows() || jj >= est.hessian.cols()) throw DimensionError("sweep entry out of range");
      rows.push_back({g, sigma2_grid[g], i, j, est.hessian(ii, jj), est.hessian_stderr(ii, jj)});
    }
  }
  return rows;
}

std::vector<BetaSweepRow> sweep_beta(const Network& net, const Vector& x0, const std::vector<double>& beta_grid,
                                     const std::vector<Entry>& entries) {
  if (beta_grid.empty()) throw InvalidArgument("beta grid is empty");
  std::vector<BetaSweepRow> rows;
  for (std::size_t g = 0; g < beta_grid.size(); ++g) {
    const Matrix h = softplus_clone(net, beta_grid[g]).hessian_smooth(x0);
    for (const auto& [i, j] : entries) {
      const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
      if (ii >= h.rows() || jj >= h.cols()) throw DimensionError("sweep entry out of range");
      rows.push_back({g, beta_grid[g], i, j, h(ii, jj)});
    }
  }
  return rows;
}

void write_sigma_sweep_csv(std::ostream& out, const std::vector<SigmaSweepRow>& rows) {
  out << "grid_index,sigma2,i,j,value,stderr\n";
  for (const auto& r : rows)
    out << r.grid_index << ',' << format_double(r.sigma2) << ',' << r.i << ',' << r.j << ',' << format_double(r.value)
        << ',' << format_double(r.stderr_) << '\n';
}

void write_beta_sweep_csv(std::ostream& out, const std::vector<BetaSweepRow>& rows) {
  out << "grid_index,beta,i,j,value\n";
  for (const auto& r : rows)
    out << r.grid_index << ',' << format_double(r.beta) << ',' << r.i << ',' << r.j << ',' << format_double(r.value)
        << '\n';
}

PmseBenchmarkConfig PmseBenchmarkConfig::from_json(const nlohmann::json& j) {
  PmseBenchmarkConfig c;
  if (j.contains("epsilons")) c.epsilons = j["epsilons"].get<std::vector<double>>();
  if (j.contains("methods")) c.methods = j["methods"].get<std::vector<std::string>>();
  if (j.contains("sigma_factors")) c.sigma_factors = j["sigma_factors"].get<std::vector<double>>();
  if (j.contains("beta_grid")) {
    const auto& g = j["beta_grid"];
    if (g.is_array())
      c.beta_grid = g.get<std::vector<double>>();
    else
      c.beta_grid = log_grid(g.at("lo_exp").get<double>(), g.at("hi_exp").get<double>(), g.at("count").get<std::size_t>());
  }
  if (j.contains("test_points")) c.test_points = j["test_points"].get<std::size_t>();
  if (j.contains("validation_points")) c.validation_points = j["validation_points"].get<std::size_t>();
  if (j.contains("region")) c.region = j["region"].get<double>();
  if (j.contains("pmse_samples")) c.pmse_samples = j["pmse_samples"].get<std::size_t>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("estimator")) {
    const auto& e = j["estimator"];
    if (e.contains("batch_size")) c.estimator.batch_size = e["batch_size"].get<std::size_t>();
    if (e.contains("n_batches")) c.estimator.n_batches = e["n_batches"].get<std::size_t>();
    if (e.contains("antithetic")) c.estimator.antithetic = e["antithetic"].get<bool>();
  }
  if (c.epsilons.empty() || c.methods.empty() || c.sigma_factors.empty() || c.beta_grid.empty())
    throw ParseError("pmse benchmark: epsilons, methods, sigma_factors and beta_grid must be non-empty");
  if (c.test_points == 0 || c.validation_points == 0) throw ParseError("pmse benchmark: need test and validation points");
  return c;
}

nlohmann::json PmseBenchmarkConfig::to_json() const {
  return {{"epsilons", epsilons},
          {"methods", methods},
          {"sigma_factors", sigma_factors},
          {"beta_grid", beta_grid},
          {"test_points", test_points},
          {"validation_points", validation_points},
          {"region", region},
          {"pmse_samples", pmse_samples},
          {"seed", seed},
          {"estimator",
           {{"batch_size", estimator.batch_size},
            {"n_batches", estimator.n_batches},
            {"antithetic", estimator.antithetic}}}};
}

namespace {

std::vector<Vector> region_points(std::size_t n, std::size_t d, double region, std::uint64_t seed, std::uint64_t stream) {
  RandomStream rng(seed, stream);
  std::vector<Vector> pts;
  for (std::size_t i = 0; i < n; ++i) {
    Vector p(static_cast<Eigen::Index>(d));
    for (Eigen::Index j = 0; j < p.size(); ++j) p(j) = region * (2.0 * rng.uniform() - 1.0);
    pts.push_back(std::move(p));
  }
  return pts;
}

enum class Family { smooth_hess, smooth_grad, softplus2, softplus1, swish2, swish1, gradient, random };

Family family_of(const std::string& m) {
  if (m == kMethodSmoothHess) return Family::smooth_hess;
  if (m == kMethodSmoothGrad) return Family::smooth_grad;
  if (m == kMethodSoftplusSecond) return Family::softplus2;
  if (m == kMethodSoftplusFirst) return Family::softplus1;
  if (m == kMethodSwishSecond) return Family::swish2;
  if (m == kMethodSwishFirst) return Family::swish1;
  if (m == kMethodGradient) return Family::gradient;
  if (m == kMethodRandom) return Family::random;
  throw InvalidArgument("unknown method '" + m + "'");
}

bool uses_sigma(Family f) { return f == Family::smooth_hess || f == Family::smooth_grad; }
bool uses_beta(Family f) {
  return f == Family::softplus2 || f == Family::softplus1 || f == Family::swish2 || f == Family::swish1;
}

// Gradient / Hessian pair of a method at x0 for one parameter value.
struct LocalModel {
  Vector grad;
  Matrix hess;
  bool second_order = false;
};

LocalModel internal_smoothing(const Network& net, Family fam, double beta, const Vector& x0) {
  const bool softplus = fam == Family::softplus1 || fam == Family::softplus2;
  const Network smooth = softplus ? softplus_clone(net, beta) : swish_clone(net, beta);
  LocalModel m;
  m.grad = smooth.gradient(x0);
  m.second_order = fam == Family::softplus2 || fam == Family::swish2;
  m.hess = m.second_order ? smooth.hessian_smooth(x0) : Matrix::Zero(x0.size(), x0.size());
  return m;
}

double sigma2_for(double eps, double factor, std::size_t d) {
  const double s = factor * sigma_for_radius(eps, d);
  return s * s;
}

// Per (point, parameter) P_MSE of one method. Estimates are cached per
// (point, sigma) so SH+SG and SG share their perturbations.
class PmseEvaluator {
 public:
  PmseEvaluator(const Network& net, const PmseBenchmarkConfig& cfg) : net_(net), f_(as_function(net)), cfg_(cfg) {}

  PmseResult eval(Family fam, double param, double eps, const Vector& x0, std::uint64_t point_seed) {
    LocalModel m;
    if (uses_sigma(fam)) {
      const InteractionEstimate& est = cached_estimate(param, x0, point_seed);
      m.grad = est.grad;
      m.second_order = fam == Family::smooth_hess;
      m.hess = m.second_order ? est.hessian : Matrix::Zero(x0.size(), x0.size());
    } else if (uses_beta(fam)) {
      m = internal_smoothing(net_, fam, param, x0);
    } else {
      m.grad = net_.gradient(x0);
      m.hess = Matrix::Zero(x0.size(), x0.size());
    }
    const TaylorSurrogate s = TaylorSurrogate::second_order(x0, net_.forward(x0), m.grad, m.hess);
    return pmse(f_, s, eps, cfg_.pmse_samples, derive_seed(point_seed, 0xB0B));
  }

 private:
  const InteractionEstimate& cached_estimate(double sigma2, const Vector& x0, std::uint64_t point_seed) {
    const auto key = std::make_pair(point_seed, std::bit_cast<std::uint64_t>(sigma2));
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      EstimatorConfig ec = cfg_.estimator;
      ec.seed = derive_seed(point_seed, key.second);
      it = cache_.emplace(key, estimate(f_, x0, CovarianceModel::isotropic(net_.input_dim(), sigma2), ec)).first;
    }
    return it->second;
  }

  const Network& net_;
  ScalarFunction f_;
  const PmseBenchmarkConfig& cfg_;
  std::map<std::pair<std::uint64_t, std::uint64_t>, InteractionEstimate> cache_;
};

std::vector<double> candidates(Family fam, double eps, std::size_t d, const std::vector<double>& factors,
                               const std::vector<double>& betas) {
  if (uses_sigma(fam)) {
    std::vector<double> out;
    for (double f : factors) out.push_back(sigma2_for(eps, f, d));
    return out;
  }
  if (uses_beta(fam)) return betas;
  return {0.0};
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stderr_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double q = 0.0;
  for (double x : v) q += (x - m) * (x - m);
  return std::sqrt(q / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

PmseBenchmarkResult run_pmse_benchmark(const Network& net, const PmseBenchmarkConfig& cfg) {
  const std::size_t d = net.input_dim();
  const auto test = region_points(cfg.test_points, d, cfg.region, derive_seed(cfg.seed, 0x7E57), 0);
  const auto valid = region_points(cfg.validation_points, d, cfg.region, derive_seed(cfg.seed, 0x7A1D), 0);
  PmseEvaluator evaluator(net, cfg);
  PmseBenchmarkResult result;
  for (double eps : cfg.epsilons) {
    for (const std::string& method : cfg.methods) {
      const Family fam = family_of(method);
      if (fam == Family::random) throw InvalidArgument("random is an attack baseline, not a P_MSE method");
      const auto params = candidates(fam, eps, d, cfg.sigma_factors, cfg.beta_grid);
      double best = params.front();
      if (params.size() > 1) {
        double best_score = INFINITY;
        for (double p : params) {
          std::vector<double> scores;
          for (std::size_t v = 0; v < valid.size(); ++v)
            scores.push_back(evaluator.eval(fam, p, eps, valid[v], derive_seed(cfg.seed, 0x10000 + v)).mean);
          const double score = mean_of(scores);
          if (score < best_score) {
            best_score = score;
            best = p;
          }
        }
      }
      std::vector<double> values;
      for (std::size_t t = 0; t < test.size(); ++t) {
        const PmseResult r = evaluator.eval(fam, best, eps, test[t], derive_seed(cfg.seed, 0x20000 + t));
        values.push_back(r.mean);
        result.points.push_back({std::to_string(t), method, eps, best, r.mean, r.stderr_, 0, false});
      }
      result.summary.push_back({method, eps, best, mean_of(values), stderr_of(values)});
    }
  }
  return result;
}

void write_pmse_summary_csv(std::ostream& out, const std::vector<PmseSummaryRow>& rows) {
  out << "method,epsilon,sigma2_or_beta,mean_pmse,stderr\n";
  for (const auto& r : rows)
    out << r.method << ',' << format_double(r.epsilon) << ',' << format_double(r.parameter) << ','
        << format_double(r.mean) << ',' << format_double(r.stderr_) << '\n';
}

namespace {

struct AttackOutcome {
  AttackResult attack;
  bool flipped = false;
};

class AttackEvaluator {
 public:
  AttackEvaluator(const Network& classifier, const AttackBenchmarkConfig& cfg) : classifier_(classifier), cfg_(cfg) {}

  AttackOutcome run(Family fam, double param, double eps, const Vector& x, std::uint64_t point_seed) {
    const std::size_t cls = classifier_.predict_class(x);
    const Network f = classifier_.with_head(Head::softmax_probability(cls));
    AttackOutcome out;
    try {
      switch (fam) {
        case Family::smooth_hess:
        case Family::smooth_grad: {
          const InteractionEstimate& est = cached_estimate(f, param, x, point_seed);
          out.attack = fam == Family::smooth_hess ? trust_region_attack(est.grad, est.hessian, eps, cfg_.threshold)
                                                  : first_order_attack(est.grad, eps);
          break;
        }
        case Family::softplus2:
        case Family::softplus1:
        case Family::swish2:
        case Family::swish1: {
          const LocalModel m = internal_smoothing(f, fam, param, x);
          out.attack = m.second_order ? trust_region_attack(m.grad, m.hess, eps, cfg_.threshold)
                                      : first_order_attack(m.grad, eps);
          break;
        }
        case Family::gradient:
          out.attack = first_order_attack(f.gradient(x), eps);
          break;
        case Family::random:
          out.attack = random_attack(static_cast<std::size_t>(x.size()), eps, point_seed, 0);
          break;
      }
    } catch (const NoDescentDirection&) {
      // Flat for this method: no perturbation.
      out.attack.delta_star = Vector::Zero(x.size());
      out.attack.epsilon = eps;
    }
    out.flipped = classifier_.predict_class(x + out.attack.delta_star) != cls;
    out.attack.flipped = out.flipped;
    return out;
  }

 private:
  const InteractionEstimate& cached_estimate(const Network& f, double sigma2, const Vector& x, std::uint64_t point_seed) {
    const auto key = std::make_pair(point_seed, std::bit_cast<std::uint64_t>(sigma2));
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      EstimatorConfig ec = cfg_.estimator;
      ec.seed = derive_seed(point_seed, key.second);
      it = cache_.emplace(key, estimate(f, x, CovarianceModel::isotropic(f.input_dim(), sigma2), ec)).first;
    }
    return it->second;
  }

  const Network& classifier_;
  const AttackBenchmarkConfig& cfg_;
  std::map<std::pair<std::uint64_t, std::uint64_t>, InteractionEstimate> cache_;
};

}  // namespace

AttackBenchmarkResult run_attack_benchmark(const Network& classifier, const std::vector<Vector>& test_points,
                                           const std::vector<Vector>& validation_points,
                                           const AttackBenchmarkConfig& cfg) {
  if (test_points.empty()) throw InvalidArgument("attack benchmark: no test points");
  AttackEvaluator evaluator(classifier, cfg);
  AttackBenchmarkResult result;
  for (double eps : cfg.epsilons) {
    for (const std::string& method : cfg.methods) {
      const Family fam = family_of(method);
      std::vector<double> params{0.0};
      if (uses_sigma(fam)) params = cfg.sigma2_grid;
      if (uses_beta(fam)) params = log_grid(-1.0, 4.0, 20);
      double best = params.front();
      if (params.size() > 1 && !validation_points.empty()) {
        std::size_t best_kept = SIZE_MAX;
        for (double p : params) {
          std::size_t kept = 0;
          for (std::size_t v = 0; v < validation_points.size(); ++v)
            if (!evaluator.run(fam, p, eps, validation_points[v], derive_seed(cfg.seed, 0x10000 + v)).flipped)
              ++kept;
          if (kept < best_kept) {
            best_kept = kept;
            best = p;
          }
        }
      }
      std::size_t kept = 0;
      for (std::size_t t = 0; t < test_points.size(); ++t) {
        const AttackOutcome o = evaluator.run(fam, best, eps, test_points[t], derive_seed(cfg.seed, 0x20000 + t));
        if (!o.flipped) ++kept;
        result.points.push_back(
            {std::to_string(t), method, eps, best, o.attack.objective_value, 0.0, o.attack.k_used, o.flipped});
      }
      result.summary.push_back({method, eps, best, static_cast<double>(kept) / static_cast<double>(test_points.size())});
    }
  }
  return result;
}

void write_attack_summary_csv(std::ostream& out, const std::vector<AttackSummaryRow>& rows) {
  out << "method,epsilon,sigma2_or_beta,post_hoc_accuracy\n";
  for (const auto& r : rows)
    out << r.method << ',' << format_double(r.epsilon) << ',' << format_double(r.parameter) << ','
        << format_double(r.accuracy) << '\n';
}

std::string version_string() { return SMOOTHHESS_VERSION; }

nlohmann::json run_metadata(const nlohmann::json& config) {
  return {{"version", version_string()},
          {"config", config},
          {"rmsprop", {{"decay", TrainConfig::kRmspropDecay}, {"eps", TrainConfig::kRmspropEps}}}};
}

}  // namespace smoothhess
