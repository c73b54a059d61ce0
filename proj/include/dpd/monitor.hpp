#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dpd/core.hpp"
#include "dpd/fit.hpp"
#include "dpd/garch.hpp"
#include "dpd/normal_iid.hpp"

namespace dpd::monitor {

/// Per-observation score source for i.i.d. normal data.
class NormalEngine {
 public:
  using Theta = normal::NormalTheta;

  NormalEngine(Theta theta, Alpha alpha) : theta_(theta), alpha_(alpha) {}

  Eigen::Index dim() const noexcept { return 2; }
  Vector gradient(double x) { return normal::grad_l_alpha_normal(x, theta_, alpha_); }
  const Theta& theta() const noexcept { return theta_; }

 private:
  Theta theta_;
  Alpha alpha_;
};

/// Per-observation score source for GARCH data; owns the continued variance recursion.
class GarchEngine {
 public:
  using Theta = garch::GarchParams;

  GarchEngine(garch::GarchFilter filter, Alpha alpha) : filter_(std::move(filter)), alpha_(alpha) {}

  Eigen::Index dim() const noexcept { return filter_.params().dim(); }
  Vector gradient(double x) {
    const auto out = filter_.step(x);
    return garch::observation_score(x, out, alpha_);
  }
  const Theta& theta() const noexcept { return filter_.params(); }
  const garch::VolState& vol_state() const noexcept { return filter_.state(); }

 private:
  garch::GarchFilter filter_;
  Alpha alpha_;
};

/// ||S score_sum|| / (sqrt(n) (1 + k/n)); zero when k = 0.
inline double detector_value(const Matrix& inv_sqrt_info, const Eigen::Ref<const Vector>& score_sum,
                             std::size_t n, std::size_t k, NormKind norm) {
  if (k == 0) return 0.0;
  const double dn = static_cast<double>(n);
  const Vector z = inv_sqrt_info * score_sum;
  return vector_norm(z, norm) / (std::sqrt(dn) * (1.0 + static_cast<double>(k) / dn));
}

/**
 * Online detector state: frozen estimate and inverse-root information from the
 * historical window, a compensated running score sum, and the step counter.
 */
template <class Engine>
class MonitorState {
 public:
  struct Step {
    double d_value;
    bool alarm;
    Vector gradient;
  };

  MonitorState(Engine engine, Matrix inv_sqrt_info, std::size_t n, Alpha alpha)
      : engine_(std::move(engine)),
        inv_sqrt_info_(std::move(inv_sqrt_info)),
        score_sum_(engine_.dim()),
        n_(n),
        alpha_(alpha) {
    if (n_ == 0) throw DimensionError("monitor needs a nonempty historical window");
    if (inv_sqrt_info_.rows() != engine_.dim() || inv_sqrt_info_.cols() != engine_.dim()) {
      throw DimensionError("information matrix does not match the parameter dimension");
    }
  }

  Step step(double x, const BoundaryFn& boundary, NormKind norm) {
    Vector g = engine_.gradient(x);
    score_sum_.add(g);
    ++k_;
    const double d = detector(norm);
    const double b = boundary(static_cast<double>(k_) / static_cast<double>(n_));
    return {d, d > b, std::move(g)};
  }

  double detector(NormKind norm = NormKind::Max) const {
    return detector_value(inv_sqrt_info_, score_sum_.value(), n_, k_, norm);
  }

  Vector score_sum() const { return score_sum_.value(); }
  std::size_t n() const noexcept { return n_; }
  std::size_t k() const noexcept { return k_; }
  Eigen::Index dim() const noexcept { return engine_.dim(); }
  Alpha alpha() const noexcept { return alpha_; }
  const Matrix& inv_sqrt_info() const noexcept { return inv_sqrt_info_; }
  const Engine& engine() const noexcept { return engine_; }

 private:
  Engine engine_;
  Matrix inv_sqrt_info_;
  CompensatedSum score_sum_;
  std::size_t n_;
  std::size_t k_ = 0;
  Alpha alpha_;
};

inline MonitorState<NormalEngine> monitor_init(const FitResult<normal::NormalTheta>& fit,
                                               std::span<const double> historical, Alpha alpha) {
  if (!fit.converged) throw ConfigError("monitor_init needs a converged fit");
  return MonitorState<NormalEngine>(NormalEngine(fit.theta_hat, alpha), inv_sqrt_spd(fit.info_hat),
                                    historical.size(), alpha);
}

/// The GARCH recursion is run through the historical window and continued into monitoring.
inline MonitorState<GarchEngine> monitor_init(const FitResult<garch::GarchParams>& fit,
                                              std::span<const double> historical, Alpha alpha) {
  if (!fit.converged) throw ConfigError("monitor_init needs a converged fit");
  const Matrix root = inv_sqrt_spd(fit.info_hat);
  auto pass = garch::garch_scores(historical, fit.theta_hat, alpha,
                                  garch::vol_init(historical, fit.theta_hat.p(), fit.theta_hat.q()));
  return MonitorState<GarchEngine>(GarchEngine(std::move(pass.end), alpha), root, historical.size(), alpha);
}

struct MonitorOutcome {
  std::vector<double> detector_path;  ///< entry k-1 holds the detector at step k
  std::optional<std::size_t> stop_k;
  BoundaryFn boundary;
  std::size_t horizon;
};

/**
 * Feeds `stream` into a fresh monitor until the first k with D(k) > b(k/n)
 * or until `horizon` observations have been consumed.
 */
template <class Theta>
MonitorOutcome run_monitor(const FitResult<Theta>& fit, std::span<const double> historical,
                           std::span<const double> stream, Alpha alpha, const BoundaryFn& boundary,
                           NormKind norm, std::size_t horizon) {
  if (stream.empty()) throw DimensionError("monitoring stream is empty");
  if (horizon == 0) throw ConfigError("horizon must be positive");
  auto state = monitor_init(fit, historical, alpha);
  MonitorOutcome outcome{{}, std::nullopt, boundary, horizon};
  const std::size_t last = std::min(horizon, stream.size());
  outcome.detector_path.reserve(last);
  for (std::size_t i = 0; i < last; ++i) {
    const auto step = state.step(stream[i], boundary, norm);
    outcome.detector_path.push_back(step.d_value);
    if (step.alarm) {
      outcome.stop_k = state.k();
      break;
    }
  }
  return outcome;
}

}  // namespace dpd::monitor
