#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "dpd/core.hpp"
#include "dpd/fit.hpp"
#include "dpd/optimizer.hpp"

namespace dpd::normal {

/// Location/scale of N(mu, sigma^2).
struct NormalTheta {
  double mu = 0.0;
  double sigma = 1.0;

  static constexpr Eigen::Index dim = 2;

  Vector to_vector() const { return Vector{{mu, sigma}}; }
  static NormalTheta from_vector(const Vector& v) { return {v[0], v[1]}; }
};

struct NormalFitOptions {
  double sigma_floor = 1e-4;
  std::size_t min_n = 10;
  opt::MinimizeOptions minimize{};
};

/// Per-observation DPD loss. alpha = 0 gives -log f(x).
inline double l_alpha_normal(double x, const NormalTheta& theta, Alpha alpha) {
  const double a = alpha.value();
  const double z = (x - theta.mu) / theta.sigma;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  if (alpha.is_likelihood()) {
    return std::log(theta.sigma) + 0.5 * std::log(kTwoPi) + 0.5 * z * z;
  }
  const double integral = std::pow(theta.sigma, -a) * std::pow(kTwoPi, -0.5 * a) / std::sqrt(1.0 + a);
  const double f_pow = std::pow(kTwoPi * theta.sigma * theta.sigma, -0.5 * a) * std::exp(-0.5 * a * z * z);
  return integral - (1.0 + 1.0 / a) * f_pow;
}

/// Analytic gradient of l_alpha_normal in (mu, sigma).
inline Eigen::Vector2d grad_l_alpha_normal(double x, const NormalTheta& theta, Alpha alpha) {
  const double a = alpha.value();
  const double s = theta.sigma;
  const double z = (x - theta.mu) / s;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  if (alpha.is_likelihood()) {
    return {-z / s, (1.0 - z * z) / s};
  }
  const double integral = std::pow(s, -a) * std::pow(kTwoPi, -0.5 * a) / std::sqrt(1.0 + a);
  const double f_pow = std::pow(kTwoPi * s * s, -0.5 * a) * std::exp(-0.5 * a * z * z);
  return {-(1.0 + a) * f_pow * z / s, -a * integral / s - (1.0 + a) * f_pow * (z * z - 1.0) / s};
}

/// Mean loss over `data`; writes the mean gradient when `grad` is non-null.
inline double normal_objective(std::span<const double> data, const NormalTheta& theta, Alpha alpha,
                               Vector* grad = nullptr) {
  double total = 0.0;
  Eigen::Vector2d g = Eigen::Vector2d::Zero();
  for (double x : data) {
    total += l_alpha_normal(x, theta, alpha);
    if (grad) g += grad_l_alpha_normal(x, theta, alpha);
  }
  const double n = static_cast<double>(data.size());
  if (grad) *grad = g / n;
  return total / n;
}

/// (1/n) sum g_t g_t' with g_t the per-observation gradient at theta.
inline Matrix info_hat_normal(std::span<const double> data, const NormalTheta& theta, Alpha alpha) {
  if (data.empty()) throw DimensionError("info_hat_normal on empty data");
  Matrix info = Matrix::Zero(2, 2);
  for (double x : data) {
    const Eigen::Vector2d g = grad_l_alpha_normal(x, theta, alpha);
    info.noalias() += g * g.transpose();
  }
  info /= static_cast<double>(data.size());
  return 0.5 * (info + info.transpose());
}

namespace detail {

inline double median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
  return m;
}

}  // namespace detail

/**
 * Minimum density power divergence estimate of (mu, sigma).
 *
 * Multistart projected quasi-Newton from (median, MAD), (mean, sd) and a
 * perturbed robust point; the lowest converged objective wins.
 */
inline FitResult<NormalTheta> mdpde_fit_normal(std::span<const double> data, Alpha alpha,
                                               const NormalFitOptions& opts = {}) {
  if (data.size() < opts.min_n) throw DimensionError("normal MDPDE needs at least min_n observations");
  const double n = static_cast<double>(data.size());
  double mean = 0.0;
  for (double x : data) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : data) var += (x - mean) * (x - mean);
  var /= n;
  if (!(var > 0.0)) throw DegenerateSampleError("sample variance is zero");
  const double sd = std::sqrt(var);

  std::vector<double> copy(data.begin(), data.end());
  const double med = detail::median(copy);
  for (double& x : copy) x = std::abs(x - med);
  double mad = 1.482602218505602 * detail::median(copy);
  if (!(mad > 0.0)) mad = sd;

  opt::Constraints box = opt::Constraints::unbounded(2);
  box.lower[1] = opts.sigma_floor;

  auto fg = [&](const Vector& v, Vector& g) {
    return normal_objective(data, NormalTheta::from_vector(v), alpha, &g);
  };

  const std::vector<Vector> starts = {Vector{{med, mad}}, Vector{{mean, sd}},
                                      Vector{{med + 0.5 * mad, 1.5 * mad}}};
  opt::MinimizeResult best;
  int best_index = -1;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    auto r = opt::minimize_projected(fg, starts[i], box, opts.minimize);
    const bool better = best_index < 0 || (r.converged && !best.converged) ||
                        (r.converged == best.converged && r.f < best.f);
    if (better) {
      best = std::move(r);
      best_index = static_cast<int>(i);
    }
  }
  if (!best.converged) {
    throw OptimizationFailure("normal MDPDE did not converge: " + best.message,
                              {best.x[0], best.x[1]}, best.f, best.pg_norm);
  }
  FitResult<NormalTheta> fit;
  fit.theta_hat = NormalTheta::from_vector(best.x);
  fit.objective = best.f;
  fit.info_hat = info_hat_normal(data, fit.theta_hat, alpha);
  fit.grad_norm = best.pg_norm;
  fit.converged = true;
  fit.n_used = data.size();
  fit.iterations = best.iterations;
  fit.best_start = best_index;
  return fit;
}

}  // namespace dpd::normal
