#pragma once

#include "smoothhess/core.hpp"
#include "smoothhess/estimator.hpp"
#include "smoothhess/eval.hpp"
#include "smoothhess/net.hpp"

#include "json.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace smoothhess {

struct Dataset {
  Matrix inputs;   // N x d
  Vector targets;  // regression value or class index
  std::string name;
  double grid_spacing = 0.0;

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
};

/// K x1 x2 with K = 5, 3, 12, -10 in quadrants 1..4 (axes take the first
/// quadrant whose closure contains them; the value is 0 there anyway).
double four_quadrant_label(double x1, double x2);
/// 1/2 x1^2 + x1 x2 on the closed 0.6-ball, x1 x2 on the closed 1.2-ball
/// shell, -5 x1 x2 outside.
double nested_label(double x1, double x2);

/// Points per axis of a [-2, 2] grid with the given spacing (endpoints inclusive).
std::size_t grid_points_per_axis(double spacing);

Dataset gen_four_quadrant(double spacing);
Dataset gen_nested_interactions(double spacing);
/// Gaussian blobs for classification: `classes` centers evenly spaced on a
/// circle of `radius`, isotropic spread `spread`.
Dataset gen_blobs(std::size_t per_class, std::size_t classes, double radius, double spread, std::uint64_t seed);

void write_dataset_csv(std::ostream& out, const Dataset& data);

enum class Optimizer { rmsprop, sgd };
enum class Loss { mse, cross_entropy };

struct TrainConfig {
  Optimizer optimizer = Optimizer::rmsprop;
  Loss loss = Loss::mse;
  double lr = 1e-3;
  std::vector<std::int64_t> lr_decay_iters{5000, 10000, 20000};
  double lr_decay_factor = 0.1;
  std::int64_t iters = 40000;
  std::size_t batch = 128;
  std::uint64_t seed = 0;

  static constexpr double kRmspropDecay = 0.99;
  static constexpr double kRmspropEps = 1e-8;

  void validate() const;
  double lr_at(std::int64_t iter) const;
};

struct TrainResult {
  Network net;
  double final_loss = 0.0;  // MSE for regression, mean cross-entropy otherwise
  double final_accuracy = 0.0;  // classification only
};

TrainResult train(const Network& net, const Dataset& data, const TrainConfig& cfg);

/// Mean squared error of the network head over the dataset.
double dataset_mse(const Network& net, const Dataset& data);
/// Fraction of rows whose argmax output equals the class target.
double dataset_accuracy(const Network& net, const Dataset& data);

/// count values 10^lo ... 10^hi, log-spaced.
std::vector<double> log_grid(double lo_exp, double hi_exp, std::size_t count);

using Entry = std::pair<std::size_t, std::size_t>;

struct SigmaSweepRow {
  std::size_t grid_index = 0;
  double sigma2 = 0.0;
  std::size_t i = 0, j = 0;
  double value = 0.0;
  double stderr_ = 0.0;
};

/// SmoothHess entries at x0 for every isotropic sigma^2. Grid point g uses
/// seed derive_seed(cfg.seed, g).
std::vector<SigmaSweepRow> sweep_sigma(const Network& net, const Vector& x0, const std::vector<double>& sigma2_grid,
                                       const EstimatorConfig& cfg, const std::vector<Entry>& entries);

struct BetaSweepRow {
  std::size_t grid_index = 0;
  double beta = 0.0;
  std::size_t i = 0, j = 0;
  double value = 0.0;
};

/// SoftPlus-surrogate Hessian entries at x0 for every beta.
std::vector<BetaSweepRow> sweep_beta(const Network& net, const Vector& x0, const std::vector<double>& beta_grid,
                                     const std::vector<Entry>& entries);

void write_sigma_sweep_csv(std::ostream& out, const std::vector<SigmaSweepRow>& rows);
void write_beta_sweep_csv(std::ostream& out, const std::vector<BetaSweepRow>& rows);

/// Local explanation methods compared by the benchmarks.
inline constexpr const char* kMethodSmoothHess = "SH+SG";
inline constexpr const char* kMethodSmoothGrad = "SG";
inline constexpr const char* kMethodSoftplusSecond = "SP(H+G)";
inline constexpr const char* kMethodSoftplusFirst = "SPG";
inline constexpr const char* kMethodSwishSecond = "SW(H+G)";
inline constexpr const char* kMethodSwishFirst = "SWG";
inline constexpr const char* kMethodGradient = "G";
inline constexpr const char* kMethodRandom = "random";

struct PmseBenchmarkConfig {
  std::vector<double> epsilons{0.25, 0.5, 1.0};
  std::vector<std::string> methods{kMethodSmoothHess, kMethodSmoothGrad, kMethodSoftplusSecond, kMethodSoftplusFirst,
                                   kMethodGradient};
  std::vector<double> sigma_factors{0.5, 0.75, 1.0};  // sigma = factor * eps / sqrt(d)
  std::vector<double> beta_grid = log_grid(-1.0, 4.0, 20);
  std::size_t test_points = 20;
  std::size_t validation_points = 10;
  double region = 1.5;  // points uniform in [-region, region]^d
  EstimatorConfig estimator{1000, 20, false, 0};
  std::size_t pmse_samples = 2000;
  std::uint64_t seed = 0;

  static PmseBenchmarkConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct PmseSummaryRow {
  std::string method;
  double epsilon = 0.0;
  double parameter = 0.0;  // sigma^2 or beta selected on validation points; 0 for G
  double mean = 0.0;
  double stderr_ = 0.0;  // across test points
};

struct PmseBenchmarkResult {
  std::vector<PmseSummaryRow> summary;
  std::vector<ReportRow> points;
};

PmseBenchmarkResult run_pmse_benchmark(const Network& net, const PmseBenchmarkConfig& cfg);
void write_pmse_summary_csv(std::ostream& out, const std::vector<PmseSummaryRow>& rows);

struct AttackBenchmarkConfig {
  std::vector<double> epsilons{0.25, 0.5, 1.0};
  std::vector<std::string> methods{kMethodSmoothHess, kMethodSmoothGrad, kMethodRandom};
  std::vector<double> sigma2_grid = log_grid(-3.0, 0.0, 10);
  double threshold = 0.98;
  EstimatorConfig estimator{1000, 10, false, 0};
  std::uint64_t seed = 0;
};

struct AttackSummaryRow {
  std::string method;
  double epsilon = 0.0;
  double parameter = 0.0;
  double accuracy = 0.0;
};

struct AttackBenchmarkResult {
  std::vector<AttackSummaryRow> summary;
  std::vector<ReportRow> points;
};

/// Attacks the predicted-class softmax probability of `classifier` at every
/// test point; parameters are chosen by post-hoc accuracy on the validation
/// points.
AttackBenchmarkResult run_attack_benchmark(const Network& classifier, const std::vector<Vector>& test_points,
                                           const std::vector<Vector>& validation_points,
                                           const AttackBenchmarkConfig& cfg);
void write_attack_summary_csv(std::ostream& out, const std::vector<AttackSummaryRow>& rows);

/// Build identification recorded in every metadata sidecar.
std::string version_string();

/// Metadata sidecar: the full config plus version and fixed optimizer constants.
nlohmann::json run_metadata(const nlohmann::json& config);

}  // namespace smoothhess
