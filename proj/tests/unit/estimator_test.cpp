#include "helpers.hpp"
#include "smoothhess/estimator.hpp"
#include "smoothhess/oracles.hpp"
#include "smoothhess/parallel.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

namespace smoothhess {
namespace {

using testing::affine_net;
using testing::random_net;
using testing::randm;
using testing::randn;
using testing::vec;

TEST(EstimatorConfig, Validation) {
  EXPECT_THROW((EstimatorConfig{0, 1, false, 0}.validate()), InvalidArgument);
  EXPECT_THROW((EstimatorConfig{3, 1, true, 0}.validate()), InvalidArgument);
  EXPECT_NO_THROW((EstimatorConfig{4, 1, true, 0}.validate()));
}

TEST(Estimate, AffineNet) {
  const Vector w = vec({0.5, -1.5, 2.0});
  const auto cov = CovarianceModel::isotropic(3, 0.2);
  const auto est = estimate(affine_net(w, 0.3), vec({0.1, 0.2, 0.3}), cov, {1000, 10, false, 3});
  // Gradients are constant, so the SmoothGrad spread is exactly zero.
  EXPECT_LT((est.grad - w).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(est.hessian.norm(), 5.0 * est.hessian_stderr.norm());
  EXPECT_EQ(est.hessian, est.hessian.transpose());
  EXPECT_EQ(est.n_samples, 10000u);
}

TEST(Estimate, QuadraticAnyCovariance) {
  RandomStream rng(2, 0);
  const Quadratic q{randm(rng, 3, 3), randn(rng, 3)};
  const Matrix target = quadratic_smooth_hess(q.a, q.b);
  Matrix s(3, 3);
  s << 1.0, 0.3, 0.1, 0.3, 0.5, 0.0, 0.1, 0.0, 0.8;
  for (const auto& cov : {CovarianceModel::isotropic(3, 0.1), CovarianceModel::full(s)}) {
    const auto est = estimate(q.as_function(), vec({1, 0, -1}), cov, {1000, 100, false, 5});
    EXPECT_LE((est.hessian - target).norm(), 5.0 * est.hessian_stderr.norm());
  }
}

TEST(Estimate, AntitheticQuadraticIsExact) {
  // Gradients of a quadratic are affine in delta, so each antithetic pair
  // averages to the exact gradient at x0.
  RandomStream rng(3, 0);
  const Quadratic q{randm(rng, 2, 2), randn(rng, 2)};
  const auto cov = CovarianceModel::isotropic(2, 0.3);
  const auto est = estimate(q.as_function(), vec({0.2, 0.4}), cov, {1000, 100, true, 6});
  EXPECT_LE((est.hessian - quadratic_smooth_hess(q.a, q.b)).norm(), 5.0 * est.hessian_stderr.norm() + 1e-12);
  const Vector g = 0.5 * (q.a + q.a.transpose()) * vec({0.2, 0.4}) + q.b;
  EXPECT_LT((est.grad - g).norm(), 1e-12);
}

TEST(Estimate, ReluNeuronAgainstClosedForm) {
  const Vector w = vec({1.0, -0.5});
  const auto cov = CovarianceModel::isotropic(2, 0.5);
  const Vector x0 = vec({0.2, 0.1});
  const auto oracle = relu_neuron_smooth(w, 0.1, x0, cov);
  const auto est = estimate(relu_neuron_network(w, 0.1), x0, cov, {1000, 100, false, 7});
  EXPECT_LE((est.hessian - oracle.hess).norm(), 5.0 * est.hessian_stderr.norm());
  EXPECT_LE((est.grad - oracle.grad).norm(), 5.0 * est.grad_stderr.norm());
}

TEST(Estimate, AntitheticAndPlainAgree) {
  RandomStream rng(4, 0);
  const Network net = random_net(rng, 3, {16, 16}, Activation::relu);
  const auto cov = CovarianceModel::isotropic(3, 0.3);
  const Vector x0 = vec({0.1, -0.2, 0.3});
  const auto a = estimate(net, x0, cov, {1000, 100, false, 1});
  const auto b = estimate(net, x0, cov, {1000, 100, true, 2});
  const Matrix se = (a.hessian_stderr.array().square() + b.hessian_stderr.array().square()).sqrt();
  EXPECT_TRUE(((a.hessian - b.hessian).cwiseAbs().array() <= 3.0 * se.array() + 1e-12).all());
}

TEST(Estimate, ThreadCountInvariant) {
  RandomStream rng(5, 0);
  const Network net = random_net(rng, 4, {16}, Activation::relu);
  const auto cov = CovarianceModel::isotropic(4, 0.2);
  const Vector x0 = randn(rng, 4);
  const EstimatorConfig cfg{250, 37, false, 99};
  set_thread_count(1);
  const auto one = estimate(net, x0, cov, cfg);
  set_thread_count(4);
  const auto four = estimate(net, x0, cov, cfg);
  set_thread_count(1);
  EXPECT_EQ(one.hessian, four.hessian);
  EXPECT_EQ(one.grad, four.grad);
  EXPECT_EQ(one.hessian_stderr, four.hessian_stderr);
}

TEST(Estimate, DiagonalScalingEquivariance) {
  RandomStream rng(6, 0);
  const Quadratic q{randm(rng, 2, 2), randn(rng, 2)};
  const Vector sdiag = vec({2.0, 0.5});
  const Matrix s = sdiag.asDiagonal(), sinv = sdiag.cwiseInverse().asDiagonal();
  // f'(x) = f(Sx) is the quadratic with A' = S A S, b' = S b.
  const Quadratic scaled{s * q.a * s, s * q.b};
  const Matrix sigma = (Matrix(2, 2) << 0.4, 0.1, 0.1, 0.3).finished();
  const Vector x0 = vec({0.3, -0.7});
  const auto h = estimate(q.as_function(), x0, CovarianceModel::full(sigma), {1000, 20, true, 3});
  const auto hp = estimate(scaled.as_function(), sinv * x0, CovarianceModel::full(sinv * sigma * sinv), {1000, 20, true, 3});
  EXPECT_LE((sinv * hp.hessian * sinv - h.hessian).norm(), 5.0 * (h.hessian_stderr.norm() + (sinv * hp.hessian_stderr * sinv).norm()));
}

TEST(Estimate, NonFiniteGradientNamesBatch) {
  ScalarFunction f{2, [](const Matrix& x) { return Vector(Vector::Zero(x.rows())); },
                   [](const Matrix& x) {
                     Matrix g = Matrix::Zero(x.rows(), x.cols());
                     if (x(0, 0) > 0.5) g(0, 0) = std::numeric_limits<double>::quiet_NaN();
                     return g;
                   }};
  try {
    estimate(f, vec({0, 0}), CovarianceModel::isotropic(2, 1.0), {10, 50, false, 1});
    FAIL();
  } catch (const NonFiniteGradient& e) {
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
}

TEST(Estimate, DimensionMismatch) {
  EXPECT_THROW(estimate(affine_net(vec({1, 2}), 0), vec({1, 2, 3}), CovarianceModel::isotropic(3, 1.0), {}),
               DimensionError);
  EXPECT_THROW(estimate(affine_net(vec({1, 2}), 0), vec({1, 2}), CovarianceModel::isotropic(3, 1.0), {}),
               DimensionError);
}

TEST(Streaming, FinalEqualsEstimate) {
  RandomStream rng(7, 0);
  const Network net = random_net(rng, 3, {8}, Activation::relu);
  const auto cov = CovarianceModel::isotropic(3, 0.3);
  const Vector x0 = randn(rng, 3);
  const EstimatorConfig cfg{100, 16, false, 4};
  const auto full = estimate(net, x0, cov, cfg);
  const auto single = estimate_streaming(net, x0, cov, cfg, {1600});
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].hessian, full.hessian);
  const auto many = estimate_streaming(net, x0, cov, cfg, {50, 100, 350, 1600});
  ASSERT_EQ(many.size(), 4u);
  EXPECT_EQ(many.back().hessian, full.hessian);
  EXPECT_EQ(many.back().grad, full.grad);
  EXPECT_EQ(many[2].n_samples, 350u);
  const auto prefix = estimate(net, x0, cov, {100, 1, false, 4});
  EXPECT_EQ(many[1].hessian, prefix.hessian);
  EXPECT_THROW(estimate_streaming(net, x0, cov, cfg, {100, 50}), InvalidArgument);
  EXPECT_THROW(estimate_streaming(net, x0, cov, cfg, {1700}), InvalidArgument);
}

TEST(Streaming, CauchyConvergenceOnReluNet) {
  RandomStream rng(8, 0);
  const Network net = random_net(rng, 3, {16, 16}, Activation::relu);
  const auto cov = CovarianceModel::isotropic(3, 0.2);
  const Vector x0 = randn(rng, 3, 0.3);
  const auto est = estimate_streaming(net, x0, cov, {1000, 256, false, 9}, {4000, 8000, 16000, 32000, 64000, 128000, 256000});
  std::vector<double> gaps;
  for (std::size_t i = 1; i < est.size(); ++i) gaps.push_back((est[i].hessian - est[i - 1].hessian).norm());
  // Individual gaps are noisy; the trend over a factor 32 in n must be down.
  EXPECT_LT(gaps.back(), gaps.front());
  EXPECT_LT(gaps[gaps.size() - 1] + gaps[gaps.size() - 2], gaps[0] + gaps[1]);
}

TEST(SmoothGrad, BitIdenticalToEstimate) {
  RandomStream rng(9, 0);
  const Network net = random_net(rng, 3, {8}, Activation::relu);
  const auto cov = CovarianceModel::isotropic(3, 0.3);
  const Vector x0 = randn(rng, 3);
  for (bool anti : {false, true}) {
    const EstimatorConfig cfg{200, 7, anti, 11};
    EXPECT_EQ(smoothgrad(net, x0, cov, cfg), estimate(net, x0, cov, cfg).grad);
  }
}

TEST(SmoothGrad, ReluNeuronHalfSpace) {
  const auto cov = CovarianceModel::isotropic(2, 1.0);
  const auto est = estimate(relu_neuron_network(vec({1, 0}), 0), vec({0, 0}), cov, {1000, 100, false, 12});
  EXPECT_LE(std::abs(est.grad(0) - 0.5), 5 * est.grad_stderr(0));
  EXPECT_EQ(est.grad(1), 0.0);
}

TEST(EstimateJson, Fields) {
  const auto cov = CovarianceModel::isotropic(2, 0.5);
  const auto est = estimate(affine_net(vec({1, 2}), 0), vec({0, 0}), cov, {10, 2, false, 3});
  const auto j = estimate_to_json(est);
  for (const char* k : {"point", "hessian", "grad", "n", "seed", "covariance", "stderr_hessian_max"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["n"].get<int>(), 20);
  EXPECT_EQ(j["covariance"]["kind"], "isotropic");
}

}  // namespace
}  // namespace smoothhess
