#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "dpd/critval.hpp"
#include "dpd/monitor.hpp"
#include "dpd/simlab.hpp"

using namespace dpd;

namespace {

garch::GarchParams g11(double w, double a, double b) { return {w, {a}, {b}}; }

std::vector<double> gaussian(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::vector<double> v(n);
  for (auto& x : v) x = z(rng);
  return v;
}

}  // namespace

TEST(MonitorInit, StartsAtZero) {
  const auto hist = gaussian(200, 1);
  const auto nfit = normal::mdpde_fit_normal(hist, Alpha(0.1));
  const auto ns = monitor::monitor_init(nfit, hist, Alpha(0.1));
  EXPECT_EQ(ns.detector(), 0.0);
  EXPECT_EQ(ns.dim(), 2);
  EXPECT_EQ(ns.k(), 0u);

  const auto ghist = simlab::simulate_garch_path(g11(0.2, 0.2, 0.6), 500, 500, 2);
  const auto gfit = garch::mdpde_fit_garch(ghist, Alpha(0.1), 1, 1);
  const auto gs = monitor::monitor_init(gfit, ghist, Alpha(0.1));
  EXPECT_EQ(gs.detector(), 0.0);
  EXPECT_EQ(gs.dim(), 3);
  EXPECT_EQ(gs.score_sum().cwiseAbs().maxCoeff(), 0.0);
}

TEST(MonitorInit, ContinuesRecursionFromHistory) {
  const auto hist = simlab::simulate_garch_path(g11(0.2, 0.2, 0.6), 500, 500, 3);
  const auto fit = garch::mdpde_fit_garch(hist, Alpha(0.2), 1, 1);
  const auto st = monitor::monitor_init(fit, hist, Alpha(0.2));
  auto vs = garch::vol_init(hist, 1, 1);
  for (double x : hist) vs = garch::vol_step(vs, fit.theta_hat, x).state;
  EXPECT_EQ(st.engine().vol_state().x2[0], vs.x2[0]);
  EXPECT_EQ(st.engine().vol_state().s2[0], vs.s2[0]);
}

TEST(MonitorStep, AccumulatesExactly) {
  const auto hist = gaussian(100, 4);
  const auto fit = normal::mdpde_fit_normal(hist, Alpha(0.3));
  auto st = monitor::monitor_init(fit, hist, Alpha(0.3));
  const auto b = BoundaryFn::constant(1e6);
  const auto s1 = st.step(0.7, b, NormKind::Max);
  EXPECT_EQ((st.score_sum() - s1.gradient).cwiseAbs().maxCoeff(), 0.0);
  const auto s2 = st.step(-1.3, b, NormKind::Max);
  EXPECT_EQ((st.score_sum() - (s1.gradient + s2.gradient)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(MonitorStep, HandBuiltNormalCase) {
  // theta_hat = (0, sqrt(2.5)); info = diag(0.4, 0.144); arriving zeros give score (0, k / sigma).
  const std::vector<double> hist{-2.0, -1.0, 1.0, 2.0};
  normal::NormalFitOptions opts;
  opts.min_n = 4;
  const auto fit = normal::mdpde_fit_normal(hist, Alpha(0.0), opts);
  EXPECT_NEAR(fit.theta_hat.mu, 0.0, 1e-12);
  EXPECT_NEAR(fit.theta_hat.sigma, std::sqrt(2.5), 1e-12);
  EXPECT_NEAR(fit.info_hat(0, 0), 0.4, 1e-12);
  EXPECT_NEAR(fit.info_hat(1, 1), 0.144, 1e-12);
  auto st = monitor::monitor_init(fit, hist, Alpha(0.0));
  const auto b = BoundaryFn::constant(1e6);
  const double golden[2] = {2.0 / 3.0, 10.0 / 9.0};
  for (int k = 0; k < 2; ++k) EXPECT_NEAR(st.step(0.0, b, NormKind::Max).d_value, golden[k], 1e-10);
}

TEST(MonitorStep, AlternatingHistoryHasSingularInformation) {
  const std::vector<double> hist{-1.0, 1.0, -1.0, 1.0};
  normal::NormalFitOptions opts;
  opts.min_n = 4;
  const auto fit = normal::mdpde_fit_normal(hist, Alpha(0.0), opts);
  EXPECT_THROW(monitor::monitor_init(fit, hist, Alpha(0.0)), SingularInformationError);
}

TEST(MonitorStep, ObjectiveRescalingInvariance) {
  const auto hist = simlab::simulate_garch_path(g11(0.2, 0.2, 0.6), 1000, 500, 5);
  const auto stream = simlab::simulate_garch_path(g11(0.2, 0.2, 0.6), 300, 500, 6);
  const auto fit = garch::mdpde_fit_garch(hist, Alpha(0.2), 1, 1);
  const Matrix root = inv_sqrt_spd(fit.info_hat);
  const Matrix root7 = inv_sqrt_spd(49.0 * fit.info_hat);
  auto st = monitor::monitor_init(fit, hist, Alpha(0.2));
  const auto b = BoundaryFn::constant(1e6);
  for (std::size_t k = 1; k <= stream.size(); ++k) {
    const auto s = st.step(stream[k - 1], b, NormKind::Max);
    const Vector sum = st.score_sum();
    for (auto norm : {NormKind::Max, NormKind::Euclidean}) {
      const double d = monitor::detector_value(root, sum, hist.size(), k, norm);
      const double d7 = monitor::detector_value(root7, 7.0 * sum, hist.size(), k, norm);
      ASSERT_NEAR(d7, d, 1e-10 * std::max(1.0, d));
    }
    ASSERT_EQ(s.d_value, monitor::detector_value(root, sum, hist.size(), k, NormKind::Max));
  }
}

TEST(RunMonitor, LargeBoundaryNeverStops) {
  const auto hist = gaussian(300, 7);
  const auto stream = gaussian(2000, 8);
  const auto fit = normal::mdpde_fit_normal(hist, Alpha(0.2));
  const auto out = monitor::run_monitor(fit, hist, stream, Alpha(0.2), BoundaryFn::constant(1e6), NormKind::Max, 2000);
  EXPECT_FALSE(out.stop_k.has_value());
  EXPECT_EQ(out.detector_path.size(), 2000u);
  for (double d : out.detector_path) EXPECT_GE(d, 0.0);
}

TEST(RunMonitor, ZeroBoundaryRejected) { EXPECT_THROW(BoundaryFn::constant(0.0), ConfigError); }

TEST(RunMonitor, StrictCrossingAndMinimality) {
  const auto hist = gaussian(300, 9);
  auto stream = gaussian(400, 10);
  for (std::size_t i = 100; i < stream.size(); ++i) stream[i] += 1.0;
  const auto fit = normal::mdpde_fit_normal(hist, Alpha(0.1));
  const auto free = monitor::run_monitor(fit, hist, stream, Alpha(0.1), BoundaryFn::constant(1e6), NormKind::Max, 400);
  const double level = 1.5;
  const auto out = monitor::run_monitor(fit, hist, stream, Alpha(0.1), BoundaryFn::constant(level), NormKind::Max, 400);
  ASSERT_TRUE(out.stop_k.has_value());
  const std::size_t first =
      static_cast<std::size_t>(std::find_if(free.detector_path.begin(), free.detector_path.end(),
                                            [&](double d) { return d > level; }) -
                               free.detector_path.begin()) + 1;
  EXPECT_EQ(*out.stop_k, first);
  EXPECT_EQ(out.detector_path.size(), first);
  // a boundary equal to the detector value does not trigger
  const double exact = free.detector_path[first - 1];
  const auto tie = BoundaryFn::constant(exact);
  const auto out_tie = monitor::run_monitor(fit, hist, stream, Alpha(0.1), tie, NormKind::Max, first);
  EXPECT_FALSE(out_tie.stop_k.has_value());
}

TEST(RunMonitor, OneShotEquivalence) {
  const auto th = g11(0.2, 0.2, 0.6);
  const auto all = simlab::simulate_garch_path(th, 3000, 500, 11);
  const std::span<const double> hist(all.data(), 1000);
  const std::span<const double> stream(all.data() + 1000, 2000);
  const Alpha a(0.3);
  const auto fit = garch::mdpde_fit_garch(hist, a, 1, 1);
  const auto out = monitor::run_monitor(fit, hist, stream, a, BoundaryFn::constant(1e6), NormKind::Max, 2000);
  // batch: rerun the whole recursion from the start of the history, sum in long double
  const auto pass = garch::garch_scores(all, fit.theta_hat, a, garch::vol_init(hist, 1, 1));
  const Matrix root = inv_sqrt_spd(fit.info_hat);
  std::vector<long double> acc(3, 0.0L);
  for (std::size_t k = 1; k <= 2000; ++k) {
    for (int i = 0; i < 3; ++i) acc[static_cast<std::size_t>(i)] += pass.scores(static_cast<Eigen::Index>(999 + k), i);
    const Vector s{{static_cast<double>(acc[0]), static_cast<double>(acc[1]), static_cast<double>(acc[2])}};
    const double d = monitor::detector_value(root, s, 1000, k, NormKind::Max);
    ASSERT_NEAR(out.detector_path[k - 1], d, 1e-12 * std::max(1.0, d)) << k;
  }
}

TEST(RunMonitor, Deterministic) {
  const auto hist = simlab::simulate_garch_path(g11(0.2, 0.2, 0.6), 1000, 500, 12);
  const auto stream = simlab::simulate_garch_path(g11(0.5, 0.2, 0.6), 500, 500, 13);
  const auto fit = garch::mdpde_fit_garch(hist, Alpha(0.2), 1, 1);
  const auto b = BoundaryFn::constant(1e6);
  const auto o1 = monitor::run_monitor(fit, hist, stream, Alpha(0.2), b, NormKind::Max, 500);
  const auto o2 = monitor::run_monitor(fit, hist, stream, Alpha(0.2), b, NormKind::Max, 500);
  EXPECT_EQ(o1.detector_path, o2.detector_path);
}

TEST(RunMonitor, GarchChangeDetectedAfterChangePoint) {
  const std::size_t k_star = 250;
  const auto th0 = g11(0.2, 0.2, 0.6);
  const auto th3 = g11(0.5, 0.2, 0.6);
  std::vector<double> stops;
  for (int rep = 0; rep < 50; ++rep) {
    const auto all = simlab::simulate_garch_switch(th0, 1000 + k_star, th3, 2000 - k_star, 500, 500 + rep);
    const std::span<const double> hist(all.data(), 1000);
    const std::span<const double> stream(all.data() + 1000, 2000);
    const auto fit = garch::mdpde_fit_garch(hist, Alpha(0.2), 1, 1);
    const auto out = monitor::run_monitor(fit, hist, stream, Alpha(0.2), BoundaryFn::constant(2.632), NormKind::Max, 2000);
    stops.push_back(out.stop_k ? static_cast<double>(*out.stop_k) : 2001.0);
  }
  std::nth_element(stops.begin(), stops.begin() + 25, stops.end());
  EXPECT_GE(stops[25], static_cast<double>(k_star));
  EXPECT_LE(stops[25], static_cast<double>(k_star + 800));
}

TEST(RunMonitor, NormalEngineSizeUnderNull) {
  const double b = critval::critical_value_sequential(2, 0.05);
  int rejections = 0;
  for (int rep = 0; rep < 500; ++rep) {
    const auto all = gaussian(3000, 9000 + rep);
    const std::span<const double> hist(all.data(), 1000);
    const std::span<const double> stream(all.data() + 1000, 2000);
    const auto fit = normal::mdpde_fit_normal(hist, Alpha(0.2));
    const auto out = monitor::run_monitor(fit, hist, stream, Alpha(0.2), BoundaryFn::constant(b), NormKind::Max, 2000);
    rejections += out.stop_k.has_value();
  }
  EXPECT_LE(rejections / 500.0, 0.08);
}
