#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpd/core.hpp"
#include "dpd/critval.hpp"
#include "dpd/garch.hpp"
#include "dpd/monitor.hpp"
#include "dpd/normal_iid.hpp"

namespace dpd::retro {

/// Which model family a workflow fits.
struct EngineSpec {
  enum class Kind { Normal, Garch };
  Kind kind = Kind::Garch;
  int p = 1;
  int q = 1;

  static EngineSpec normal() { return {Kind::Normal, 0, 0}; }
  static EngineSpec garch(int p, int q) { return {Kind::Garch, p, q}; }

  Eigen::Index dim() const { return kind == Kind::Normal ? 2 : 1 + p + q; }
  std::string describe() const {
    return kind == Kind::Normal ? "normal" : "garch(" + std::to_string(p) + "," + std::to_string(q) + ")";
  }
};

struct RetroResult {
  double statistic = 0.0;
  std::vector<double> path;    ///< entry k-1 holds T(k), k = 1..n
  std::size_t change_point = 0;  ///< smallest argmax k (1-based)
  double critical = 0.0;
  bool reject = false;
  Vector theta_hat;
  Matrix info_hat;
};

/// Cumulative per-observation scores (row k-1 = sum over t <= k), recursion seeded from `data`.
inline Matrix partial_score_path(std::span<const double> data, const normal::NormalTheta& theta_hat, Alpha alpha) {
  Matrix path(static_cast<Eigen::Index>(data.size()), 2);
  Eigen::Vector2d running = Eigen::Vector2d::Zero();
  for (std::size_t t = 0; t < data.size(); ++t) {
    running += normal::grad_l_alpha_normal(data[t], theta_hat, alpha);
    path.row(static_cast<Eigen::Index>(t)) = running.transpose();
  }
  return path;
}

inline Matrix partial_score_path(std::span<const double> data, const garch::GarchParams& theta_hat, Alpha alpha) {
  if (data.empty()) throw DimensionError("partial_score_path on empty data");
  auto pass = garch::garch_scores(data, theta_hat, alpha, garch::vol_init(data, theta_hat.p(), theta_hat.q()));
  Matrix& path = pass.scores;
  for (Eigen::Index t = 1; t < path.rows(); ++t) path.row(t) += path.row(t - 1);
  return std::move(path);
}

/// T(k) = (1/n) S_k' I^{-1} S_k for every k, with I^{-1} built from the SPD inverse square root.
inline std::vector<double> quadratic_form_path(const Matrix& partial, const Matrix& info) {
  const Matrix root = inv_sqrt_spd(info);
  const double n = static_cast<double>(partial.rows());
  std::vector<double> out(static_cast<std::size_t>(partial.rows()));
  for (Eigen::Index k = 0; k < partial.rows(); ++k) {
    const Vector z = root * partial.row(k).transpose();
    out[static_cast<std::size_t>(k)] = z.squaredNorm() / n;
  }
  return out;
}

namespace detail {

inline RetroResult finish(std::vector<double> path, Vector theta, Matrix info, int d, double level,
                          const critval::RetroMcOptions& mc) {
  RetroResult r;
  r.path = std::move(path);
  std::size_t arg = 0;
  for (std::size_t k = 1; k < r.path.size(); ++k) {
    if (r.path[k] > r.path[arg]) arg = k;
  }
  r.statistic = r.path[arg];
  r.change_point = arg + 1;
  r.critical = critval::cached_critical_value_retro(d, level, mc);
  r.reject = r.statistic > r.critical;
  r.theta_hat = std::move(theta);
  r.info_hat = std::move(info);
  return r;
}

}  // namespace detail

struct RetroOptions {
  critval::RetroMcOptions mc{};
  normal::NormalFitOptions normal_fit{};
  garch::GarchFitOptions garch_fit{};
};

/**
 * Retrospective DPD score test on a whole window: fit, partial-score quadratic
 * forms, comparison with the Monte Carlo sup-bridge quantile, argmax location.
 */
inline RetroResult retro_test(std::span<const double> data, Alpha alpha, const EngineSpec& engine, double level,
                              const RetroOptions& opts = {}) {
  critval::validate_level(level);
  if (engine.kind == EngineSpec::Kind::Normal) {
    const auto fit = normal::mdpde_fit_normal(data, alpha, opts.normal_fit);
    return detail::finish(quadratic_form_path(partial_score_path(data, fit.theta_hat, alpha), fit.info_hat),
                          fit.theta_hat.to_vector(), fit.info_hat, 2, level, opts.mc);
  }
  const auto fit = garch::mdpde_fit_garch(data, alpha, engine.p, engine.q, opts.garch_fit);
  return detail::finish(quadratic_form_path(partial_score_path(data, fit.theta_hat, alpha), fit.info_hat),
                        fit.theta_hat.to_vector(), fit.info_hat, static_cast<int>(engine.dim()), level, opts.mc);
}

struct MonitorThenLocate {
  monitor::MonitorOutcome monitoring;
  std::optional<RetroResult> located;  ///< present when the monitor raised an alarm
};

/// Sequential monitoring followed, on alarm, by the retrospective test on data up to n + stop_k.
inline MonitorThenLocate monitor_then_locate(std::span<const double> historical, std::span<const double> stream,
                                             Alpha alpha, const EngineSpec& engine, const BoundaryFn& boundary,
                                             NormKind norm, std::size_t horizon, double level,
                                             const RetroOptions& opts = {}) {
  MonitorThenLocate out{
      engine.kind == EngineSpec::Kind::Normal
          ? monitor::run_monitor(normal::mdpde_fit_normal(historical, alpha, opts.normal_fit), historical, stream,
                                 alpha, boundary, norm, horizon)
          : monitor::run_monitor(garch::mdpde_fit_garch(historical, alpha, engine.p, engine.q, opts.garch_fit),
                                 historical, stream, alpha, boundary, norm, horizon),
      std::nullopt};
  if (out.monitoring.stop_k) {
    std::vector<double> upto(historical.begin(), historical.end());
    upto.insert(upto.end(), stream.begin(), stream.begin() + static_cast<std::ptrdiff_t>(*out.monitoring.stop_k));
    out.located = retro_test(upto, alpha, engine, level, opts);
  }
  return out;
}

}  // namespace dpd::retro
