#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "dpd/normal_iid.hpp"
#include "oracles.hpp"

using namespace dpd;
using normal::NormalTheta;

namespace {

std::vector<double> gaussian_sample(std::size_t n, std::uint64_t seed, double mu = 0.0, double sigma = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(mu, sigma);
  std::vector<double> v(n);
  for (auto& x : v) x = z(rng);
  return v;
}

}  // namespace

TEST(NormalLoss, LikelihoodAtMode) {
  EXPECT_NEAR(normal::l_alpha_normal(0.0, {0.0, 1.0}, Alpha(0.0)), 0.5 * std::log(2.0 * std::numbers::pi), 1e-14);
}

TEST(NormalLoss, AlphaOneAgainstQuadrature) {
  auto f = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); };
  const double int_f2 = oracle::integrate([&](double x) { return f(x) * f(x); }, -20.0, 20.0);
  const double expected = int_f2 - 2.0 * f(0.0);
  EXPECT_NEAR(expected, -0.51579, 1e-5);
  EXPECT_NEAR(normal::l_alpha_normal(0.0, {0.0, 1.0}, Alpha(1.0)), expected, 1e-9);
}

TEST(NormalLoss, TranslationInvariant) {
  for (double a : {0.0, 0.2, 0.7}) {
    const double base = normal::l_alpha_normal(0.7, {0.2, 1.3}, Alpha(a));
    EXPECT_NEAR(normal::l_alpha_normal(0.7 + 5.0, {0.2 + 5.0, 1.3}, Alpha(a)), base, 1e-13);
  }
}

TEST(NormalGrad, ModeOfStandardNormal) {
  const auto g = normal::grad_l_alpha_normal(0.0, {0.0, 1.0}, Alpha(0.0));
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 1.0);
}

TEST(NormalGrad, MuComponentVanishesAtMean) {
  for (double a : {0.1, 0.5, 1.0}) EXPECT_EQ(normal::grad_l_alpha_normal(1.5, {1.5, 0.4}, Alpha(a))[0], 0.0);
}

TEST(NormalGrad, MatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::uniform_real_distribution<double> s(0.3, 3.0);
  std::uniform_real_distribution<double> al(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const double x = u(rng);
    const NormalTheta th{u(rng), s(rng)};
    const Alpha a(rep % 5 == 0 ? 0.0 : al(rng));
    const auto g = normal::grad_l_alpha_normal(x, th, a);
    const auto fd = oracle::central_diff(
        [&](const std::vector<double>& v) { return normal::l_alpha_normal(x, {v[0], v[1]}, a); }, {th.mu, th.sigma});
    const double scale = std::max(std::abs(g[0]), std::abs(g[1]));
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(g[i], fd[i], 1e-5 * std::max(scale, 1e-3)) << "rep " << rep;
  }
}

TEST(NormalFit, LikelihoodIsSampleMoments) {
  const auto data = gaussian_sample(300, 1, 2.0, 1.5);
  const auto fit = normal::mdpde_fit_normal(data, Alpha(0.0));
  double mean = 0.0;
  for (double x : data) mean += x;
  mean /= data.size();
  double var = 0.0;
  for (double x : data) var += (x - mean) * (x - mean);
  var /= data.size();
  EXPECT_NEAR(fit.theta_hat.mu, mean, 1e-8);
  EXPECT_NEAR(fit.theta_hat.sigma, std::sqrt(var), 1e-8);
  EXPECT_TRUE(fit.converged);
}

TEST(NormalFit, RobustUnderContamination) {
  auto data = gaussian_sample(1000, 2);
  for (std::size_t i = 0; i < 30; ++i) data[i * 33] = (i % 2 ? 10.0 : -10.0);
  const auto robust = normal::mdpde_fit_normal(data, Alpha(0.25));
  const auto mle = normal::mdpde_fit_normal(data, Alpha(0.0));
  EXPECT_LT(std::abs(robust.theta_hat.mu), 0.1);
  EXPECT_GT(mle.theta_hat.sigma, robust.theta_hat.sigma);
}

TEST(NormalFit, MatchesLatticeSearchOnSmallSample) {
  auto data = gaussian_sample(40, 3);
  data[0] = 8.0;
  data[1] = -9.0;
  const Alpha a(0.25);
  const auto fit = normal::mdpde_fit_normal(data, a);
  double best = HUGE_VAL;
  double bm = 0.0;
  double bs = 0.0;
  for (double mu = -1.0; mu <= 1.0; mu += 0.004) {
    for (double sg = 0.3; sg <= 2.5; sg += 0.004) {
      double f = 0.0;
      for (double x : data) {
        const double z = (x - mu) / sg;
        const double dens = std::exp(-0.5 * z * z) / (std::sqrt(2.0 * std::numbers::pi) * sg);
        f += std::pow(sg, -0.25) * std::pow(2.0 * std::numbers::pi, -0.125) / std::sqrt(1.25) - 5.0 * std::pow(dens, 0.25);
      }
      if (f < best) {
        best = f;
        bm = mu;
        bs = sg;
      }
    }
  }
  EXPECT_NEAR(fit.theta_hat.mu, bm, 0.005);
  EXPECT_NEAR(fit.theta_hat.sigma, bs, 0.005);
}

TEST(NormalFit, ScaleEquivariant) {
  const auto data = gaussian_sample(200, 4, 0.5, 2.0);
  std::vector<double> scaled(data);
  for (auto& x : scaled) x *= 3.0;
  for (double a : {0.0, 0.2, 0.5}) {
    const auto f1 = normal::mdpde_fit_normal(data, Alpha(a));
    const auto f3 = normal::mdpde_fit_normal(scaled, Alpha(a));
    EXPECT_NEAR(f3.theta_hat.mu, 3.0 * f1.theta_hat.mu, 1e-6);
    EXPECT_NEAR(f3.theta_hat.sigma, 3.0 * f1.theta_hat.sigma, 1e-6);
  }
}

TEST(NormalFit, ContinuousInAlpha) {
  const auto data = gaussian_sample(500, 5);
  const auto f0 = normal::mdpde_fit_normal(data, Alpha(0.0));
  const auto f1 = normal::mdpde_fit_normal(data, Alpha(1e-4));
  EXPECT_LE(std::abs(f0.theta_hat.mu - f1.theta_hat.mu), 1e-2);
  EXPECT_LE(std::abs(f0.theta_hat.sigma - f1.theta_hat.sigma), 1e-2);
}

TEST(NormalFit, FirstOrderConditionAndInfo) {
  const auto data = gaussian_sample(400, 6);
  for (double a : {0.0, 0.1, 0.3, 0.5}) {
    const auto fit = normal::mdpde_fit_normal(data, Alpha(a));
    Vector g;
    normal::normal_objective(data, fit.theta_hat, Alpha(a), &g);
    EXPECT_LT(g.cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE(fit.grad_norm, 1e-7);
    EXPECT_EQ(fit.info_hat(0, 1), fit.info_hat(1, 0));
    Eigen::SelfAdjointEigenSolver<Matrix> es(fit.info_hat);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
  }
}

TEST(NormalFit, Errors) {
  EXPECT_THROW(normal::mdpde_fit_normal(std::vector<double>(5, 1.0), Alpha(0.0)), DimensionError);
  EXPECT_THROW(normal::mdpde_fit_normal(std::vector<double>(20, 1.0), Alpha(0.1)), DegenerateSampleError);
}

TEST(NormalInfo, SingleRepeatedGradient) {
  const std::vector<double> data(7, 0.4);
  const NormalTheta th{0.0, 1.0};
  const auto g = normal::grad_l_alpha_normal(0.4, th, Alpha(0.3));
  const Matrix info = normal::info_hat_normal(data, th, Alpha(0.3));
  EXPECT_LT((info - g * g.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(NormalInfo, ConvergesToFisherInformation) {
  const auto data = gaussian_sample(100000, 7);
  const Matrix info = normal::info_hat_normal(data, {0.0, 1.0}, Alpha(0.0));
  EXPECT_NEAR(info(0, 0), 1.0, 0.05);
  EXPECT_NEAR(info(1, 1), 2.0, 0.10);
  EXPECT_NEAR(info(0, 1), 0.0, 0.05);
}
