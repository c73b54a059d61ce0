#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpd/core.hpp"
#include "dpd/fit.hpp"
#include "dpd/optimizer.hpp"

namespace dpd::garch {

inline constexpr int kMaxOrder = 5;
inline constexpr double kOmegaMin = 1e-6;
inline constexpr double kCoefMax = 0.9999;
inline constexpr double kBetaSumMax = 1.0 - 1e-4;

/// Fixed-capacity parameter-sized vector (d <= 1 + 2 * kMaxOrder); no heap traffic in the recursion.
using ParamVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 1 + 2 * kMaxOrder, 1>;

/**
 * GARCH(p,q) volatility parameters
 *   sigma_t^2 = omega + sum_i alphas[i] X_{t-1-i}^2 + sum_j betas[j] sigma_{t-1-j}^2.
 * Vector layout is (omega, alpha_1..alpha_p, beta_1..beta_q).
 */
struct GarchParams {
  double omega = 0.0;
  std::vector<double> alphas;
  std::vector<double> betas;

  int p() const noexcept { return static_cast<int>(alphas.size()); }
  int q() const noexcept { return static_cast<int>(betas.size()); }
  Eigen::Index dim() const noexcept { return 1 + p() + q(); }

  double alpha_sum() const {
    double s = 0.0;
    for (double a : alphas) s += a;
    return s;
  }
  double beta_sum() const {
    double s = 0.0;
    for (double b : betas) s += b;
    return s;
  }
  bool is_stationary() const { return alpha_sum() + beta_sum() < 1.0; }
  double unconditional_variance() const { return omega / (1.0 - alpha_sum() - beta_sum()); }

  Vector to_vector() const {
    Vector v(dim());
    v[0] = omega;
    for (int i = 0; i < p(); ++i) v[1 + i] = alphas[static_cast<std::size_t>(i)];
    for (int j = 0; j < q(); ++j) v[1 + p() + j] = betas[static_cast<std::size_t>(j)];
    return v;
  }

  static GarchParams from_vector(const Eigen::Ref<const Vector>& v, int p, int q) {
    if (v.size() != 1 + p + q) throw DimensionError("GARCH parameter vector has the wrong length");
    GarchParams g;
    g.omega = v[0];
    g.alphas.assign(v.data() + 1, v.data() + 1 + p);
    g.betas.assign(v.data() + 1 + p, v.data() + 1 + p + q);
    return g;
  }

  /// Throws ConfigError unless the parameter-space constraints hold.
  void validate() const {
    if (p() < 1 || p() > kMaxOrder || q() < 0 || q() > kMaxOrder) {
      throw ConfigError("GARCH orders must satisfy 1 <= p <= 5 and 0 <= q <= 5");
    }
    if (!(omega >= kOmegaMin) || !std::isfinite(omega)) throw ConfigError("omega must be >= 1e-6");
    for (double a : alphas) {
      if (!(a >= 0.0 && a <= kCoefMax)) throw ConfigError("ARCH coefficients must lie in [0, 0.9999]");
    }
    for (double b : betas) {
      if (!(b >= 0.0 && b <= kCoefMax)) throw ConfigError("GARCH coefficients must lie in [0, 0.9999]");
    }
    if (beta_sum() > kBetaSumMax) throw ConfigError("sum of GARCH coefficients must be <= 1 - 1e-4");
  }

  std::string describe() const {
    std::string s = "(" + fmt(omega);
    for (double a : alphas) s += ", " + fmt(a);
    for (double b : betas) s += ", " + fmt(b);
    return s + ")";
  }

 private:
  static std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", x);
    return buf;
  }
};

/// Box plus the sum-of-betas cap used by the fitter.
inline opt::Constraints garch_constraints(int p, int q) {
  const Eigen::Index d = 1 + p + q;
  opt::Constraints c{Vector::Zero(d), Vector::Constant(d, kCoefMax), {}};
  c.lower[0] = kOmegaMin;
  c.upper[0] = std::numeric_limits<double>::infinity();
  if (q > 1) {
    opt::Constraints::CapGroup group{{}, kBetaSumMax};
    for (int j = 0; j < q; ++j) group.index.push_back(1 + p + j);
    c.caps.push_back(group);
  } else if (q == 1) {
    c.upper[1 + p] = std::min(kCoefMax, kBetaSumMax);
  }
  return c;
}

/// Lagged squared observations and lagged fitted variances; index 0 is the most recent.
struct VolState {
  std::array<double, kMaxOrder> x2{};
  std::array<double, kMaxOrder> s2{};
  int p = 1;
  int q = 1;
  std::size_t count = 0;
};

/// Pre-sample lags all set to the mean of squares of `window`.
inline VolState vol_init(std::span<const double> window, int p, int q) {
  if (p < 1 || p > kMaxOrder || q < 0 || q > kMaxOrder) {
    throw ConfigError("GARCH orders must satisfy 1 <= p <= 5 and 0 <= q <= 5");
  }
  if (window.size() < static_cast<std::size_t>(std::max({p, q, 1}))) {
    throw DimensionError("initialisation window shorter than max(p, q, 1)");
  }
  double ms = 0.0;
  for (double x : window) ms += x * x;
  ms /= static_cast<double>(window.size());
  if (!(ms > 0.0) || !std::isfinite(ms)) {
    throw DegenerateSampleError("initialisation window has zero mean square");
  }
  VolState st;
  st.p = p;
  st.q = q;
  st.x2.fill(0.0);
  st.s2.fill(0.0);
  for (int i = 0; i < p; ++i) st.x2[static_cast<std::size_t>(i)] = ms;
  for (int j = 0; j < q; ++j) st.s2[static_cast<std::size_t>(j)] = ms;
  return st;
}

/// sigma~_t^2 from the current lags.
inline double conditional_variance(const VolState& st, const GarchParams& params) {
  double s = params.omega;
  for (int i = 0; i < st.p; ++i) s += params.alphas[static_cast<std::size_t>(i)] * st.x2[static_cast<std::size_t>(i)];
  for (int j = 0; j < st.q; ++j) s += params.betas[static_cast<std::size_t>(j)] * st.s2[static_cast<std::size_t>(j)];
  return s;
}

inline void push_lags(VolState& st, double x, double sigma2) {
  for (int i = st.p - 1; i > 0; --i) st.x2[static_cast<std::size_t>(i)] = st.x2[static_cast<std::size_t>(i - 1)];
  st.x2[0] = x * x;
  for (int j = st.q - 1; j > 0; --j) st.s2[static_cast<std::size_t>(j)] = st.s2[static_cast<std::size_t>(j - 1)];
  if (st.q > 0) st.s2[0] = sigma2;
  ++st.count;
}

struct VolStep {
  VolState state;
  double sigma2;
};

/// One step of the variance recursion: computes sigma~_t^2, then pushes x_new^2 and sigma~_t^2.
inline VolStep vol_step(VolState state, const GarchParams& params, double x_new) {
  const double sigma2 = conditional_variance(state, params);
  push_lags(state, x_new, sigma2);
  return {state, sigma2};
}

/**
 * Variance recursion together with its parameter derivative
 *   d sigma~_t^2 = e_t + sum_j beta_j d sigma~_{t-j}^2,
 * where e_t = (1, X_{t-1}^2..X_{t-p}^2, sigma~_{t-1}^2..sigma~_{t-q}^2).
 * Pre-sample derivative lags are zero.
 */
class GarchFilter {
 public:
  struct Output {
    double sigma2;
    ParamVec dsigma2;
  };

  GarchFilter(GarchParams params, const VolState& init) : params_(std::move(params)), state_(init) {
    if (params_.p() != init.p || params_.q() != init.q) {
      throw DimensionError("GARCH parameters and volatility state disagree on (p, q)");
    }
    for (auto& lag : dlags_) lag = ParamVec::Zero(params_.dim());
  }

  Output step(double x) {
    const int p = state_.p;
    const int q = state_.q;
    Output out{conditional_variance(state_, params_), ParamVec(params_.dim())};
    out.dsigma2[0] = 1.0;
    for (int i = 0; i < p; ++i) out.dsigma2[1 + i] = state_.x2[static_cast<std::size_t>(i)];
    for (int j = 0; j < q; ++j) out.dsigma2[1 + p + j] = state_.s2[static_cast<std::size_t>(j)];
    for (int j = 0; j < q; ++j) out.dsigma2 += params_.betas[static_cast<std::size_t>(j)] * dlags_[static_cast<std::size_t>(j)];
    for (int j = q - 1; j > 0; --j) dlags_[static_cast<std::size_t>(j)] = dlags_[static_cast<std::size_t>(j - 1)];
    if (q > 0) dlags_[0] = out.dsigma2;
    push_lags(state_, x, out.sigma2);
    return out;
  }

  const VolState& state() const noexcept { return state_; }
  const GarchParams& params() const noexcept { return params_; }

 private:
  GarchParams params_;
  VolState state_;
  std::array<ParamVec, kMaxOrder> dlags_;
};

struct VolPath {
  std::vector<double> sigma2;
  Matrix dsigma2;  ///< row t holds d sigma~_t^2 / d theta
};

inline VolPath vol_path_with_grads(const GarchParams& params, std::span<const double> data,
                                   const VolState& init) {
  if (data.empty()) throw DimensionError("vol_path_with_grads on empty data");
  GarchFilter filter(params, init);
  VolPath path{std::vector<double>(data.size()), Matrix(static_cast<Eigen::Index>(data.size()), params.dim())};
  for (std::size_t t = 0; t < data.size(); ++t) {
    auto out = filter.step(data[t]);
    path.sigma2[t] = out.sigma2;
    path.dsigma2.row(static_cast<Eigen::Index>(t)) = out.dsigma2.transpose();
  }
  return path;
}

/// Per-observation loss; the alpha > 0 branch omits the (2 pi)^{-alpha/2} normaliser.
inline double l_alpha_garch(double x, double sigma2, Alpha alpha) {
  const double a = alpha.value();
  const double r = x * x / sigma2;
  if (alpha.is_likelihood()) return r + std::log(sigma2);
  return std::pow(sigma2, -0.5 * a) * (1.0 / std::sqrt(1.0 + a) - (1.0 + 1.0 / a) * std::exp(-0.5 * a * r));
}

/// h_alpha(sigma^2) = -a/(2 sqrt(1+a)) + (1+a)/2 (1 - X^2/sigma^2) exp(-a X^2 / (2 sigma^2)).
inline double h_alpha(double x, double sigma2, Alpha alpha) {
  const double a = alpha.value();
  const double r = x * x / sigma2;
  return -a / (2.0 * std::sqrt(1.0 + a)) + 0.5 * (1.0 + a) * (1.0 - r) * std::exp(-0.5 * a * r);
}

/// d l / d sigma^2, so that d l / d theta = loss_slope * d sigma^2 / d theta.
inline double loss_slope(double x, double sigma2, Alpha alpha) {
  if (alpha.is_likelihood()) return (1.0 - x * x / sigma2) / sigma2;
  return h_alpha(x, sigma2, alpha) * std::pow(sigma2, -0.5 * alpha.value() - 1.0);
}

/// Per-observation gradient from one filter output; shared by fitting, monitoring and the retrospective test.
inline ParamVec observation_score(double x, const GarchFilter::Output& out, Alpha alpha) {
  return loss_slope(x, out.sigma2, alpha) * out.dsigma2;
}

inline Vector grad_l_alpha_garch(double x, double sigma2, const Eigen::Ref<const Vector>& dsigma2,
                                 Alpha alpha) {
  return loss_slope(x, sigma2, alpha) * dsigma2;
}

/// Mean loss over `data` with the recursion started at `init`; optional mean gradient.
inline double garch_objective(std::span<const double> data, const GarchParams& params, Alpha alpha,
                              const VolState& init, Vector* grad = nullptr) {
  GarchFilter filter(params, init);
  double total = 0.0;
  ParamVec g = ParamVec::Zero(params.dim());
  for (double x : data) {
    const auto out = filter.step(x);
    total += l_alpha_garch(x, out.sigma2, alpha);
    if (grad) g += observation_score(x, out, alpha);
  }
  const double n = static_cast<double>(data.size());
  if (grad) *grad = g / n;
  return total / n;
}

/// Per-observation gradients (n x d) at `params`, plus the filter positioned after the last point.
struct ScorePass {
  Matrix scores;
  GarchFilter end;
};

inline ScorePass garch_scores(std::span<const double> data, const GarchParams& params, Alpha alpha,
                              const VolState& init) {
  GarchFilter filter(params, init);
  Matrix scores(static_cast<Eigen::Index>(data.size()), params.dim());
  for (std::size_t t = 0; t < data.size(); ++t) {
    const auto out = filter.step(data[t]);
    scores.row(static_cast<Eigen::Index>(t)) = observation_score(data[t], out, alpha).transpose();
  }
  return {std::move(scores), std::move(filter)};
}

/// (1/n) sum of outer products of per-observation gradients, recursion seeded from `data` itself.
inline Matrix info_hat_garch(std::span<const double> data, const GarchParams& theta_hat, Alpha alpha) {
  if (data.empty()) throw DimensionError("info_hat_garch on empty data");
  const auto pass = garch_scores(data, theta_hat, alpha, vol_init(data, theta_hat.p(), theta_hat.q()));
  Matrix info = pass.scores.transpose() * pass.scores / static_cast<double>(data.size());
  info = 0.5 * (info + info.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> es(info, Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues().minCoeff() >= default_eigen_floor(info)) || !(info.trace() > 0.0)) {
    throw SingularInformationError("GARCH information estimate is singular");
  }
  return info;
}

struct KgConstants {
  double k;
  double g;
};

/// Closed-form scale factors of the information and Hessian matrices under Gaussian errors.
inline KgConstants k_g_constants(double alpha) {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
  const double a = alpha;
  const double k = (1.0 + a) * (1.0 + a) * (1.0 + 2.0 * a * a) / (2.0 * std::pow(1.0 + 2.0 * a, 2.5)) -
                   a * a / (4.0 * (1.0 + a));
  const double g = (a * a + 2.0 * a + 2.0) / (4.0 * std::pow(1.0 + a, 1.5));
  return {k, g};
}

struct GarchFitOptions {
  std::size_t min_n = 100;
  opt::MinimizeOptions minimize{.gtol = 1e-7};
  /// When set, adds one randomly jittered start drawn from this seed.
  std::optional<std::uint64_t> jitter_seed;
};

namespace detail {

inline double sq_autocorr(std::span<const double> data, std::size_t lag, double mean_sq) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t t = 0; t < data.size(); ++t) {
    const double y = data[t] * data[t] - mean_sq;
    den += y * y;
    if (t >= lag) num += y * (data[t - lag] * data[t - lag] - mean_sq);
  }
  return den > 0.0 ? num / den : 0.0;
}

/// GARCH(1,1) moment seed: persistence from rho2/rho1, ARCH weight matched to rho1.
inline std::pair<double, double> moment_seed(std::span<const double> data, double mean_sq) {
  const double r1 = sq_autocorr(data, 1, mean_sq);
  const double r2 = sq_autocorr(data, 2, mean_sq);
  double phi = r1 > 0.02 ? std::clamp(r2 / r1, 0.3, 0.97) : 0.9;
  const double target = std::clamp(r1, 0.01, 0.9);
  double best_a = 0.1;
  double best_err = std::numeric_limits<double>::infinity();
  for (int i = 1; i < 200; ++i) {
    const double a = phi * i / 200.0;
    const double b = phi - a;
    const double den = 1.0 - 2.0 * a * b - b * b;
    if (den <= 0.0) continue;
    const double rho = a * (1.0 - a * b - b * b) / den;
    if (std::abs(rho - target) < best_err) {
      best_err = std::abs(rho - target);
      best_a = a;
    }
  }
  return {best_a, phi - best_a};
}

inline Vector spread_start(double omega, double a, double b, int p, int q) {
  Vector v(1 + p + q);
  v[0] = omega;
  for (int i = 0; i < p; ++i) v[1 + i] = a / p;
  for (int j = 0; j < q; ++j) v[1 + p + j] = b / q;
  return v;
}

}  // namespace detail

/**
 * MDPDE of a GARCH(p,q) model by projected quasi-Newton with analytic gradients.
 * Recursion initial values: the mean of squares of `data`. Starts from
 * (0.1 v, 0.1, 0.8), (0.5 v, 0.2, 0.2) and a moment-based seed; the best
 * converged objective wins.
 */
inline FitResult<GarchParams> mdpde_fit_garch(std::span<const double> data, Alpha alpha, int p, int q,
                                              const GarchFitOptions& opts = {}) {
  if (p < 1 || p > kMaxOrder || q < 0 || q > kMaxOrder) {
    throw ConfigError("GARCH orders must satisfy 1 <= p <= 5 and 0 <= q <= 5");
  }
  if (data.size() < opts.min_n) throw DimensionError("GARCH MDPDE needs at least min_n observations");
  for (double x : data) {
    if (!std::isfinite(x)) throw ConfigError("data contains non-finite values");
  }
  const double n = static_cast<double>(data.size());
  double mean = 0.0;
  double mean_sq = 0.0;
  for (double x : data) {
    mean += x;
    mean_sq += x * x;
  }
  mean /= n;
  mean_sq /= n;
  const double var = mean_sq - mean * mean;
  if (!(var > 1e-14 * std::max(1.0, mean_sq))) throw DegenerateSampleError("data has zero variance");

  const VolState init = vol_init(data, p, q);
  const opt::Constraints box = garch_constraints(p, q);

  auto fg = [&](const Vector& v, Vector& g) {
    return garch_objective(data, GarchParams::from_vector(v, p, q), alpha, init, &g);
  };

  const auto [mom_a, mom_b] = detail::moment_seed(data, mean_sq);
  std::vector<Vector> starts = {detail::spread_start(0.1 * var, 0.1, 0.8, p, q),
                                detail::spread_start(0.5 * var, 0.2, 0.2, p, q),
                                detail::spread_start(std::max(var * (1.0 - mom_a - mom_b), 1e-3 * var),
                                                     mom_a, mom_b, p, q),
                                detail::spread_start(0.02 * var, 0.05, 0.93, p, q),
                                detail::spread_start(1e-3 * var, 0.01, 0.985, p, q)};
  if (opts.jitter_seed) {
    std::mt19937_64 rng(*opts.jitter_seed);
    std::normal_distribution<double> z(0.0, 0.25);
    Vector v = starts[2];
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] *= std::exp(z(rng));
    starts.push_back(v);
  }

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
    throw OptimizationFailure("GARCH MDPDE did not converge: " + best.message,
                              std::vector<double>(best.x.data(), best.x.data() + best.x.size()), best.f,
                              best.pg_norm);
  }

  FitResult<GarchParams> fit;
  fit.theta_hat = GarchParams::from_vector(best.x, p, q);
  fit.objective = best.f;
  fit.info_hat = info_hat_garch(data, fit.theta_hat, alpha);
  fit.grad_norm = best.pg_norm;
  fit.converged = true;
  fit.n_used = data.size();
  fit.iterations = best.iterations;
  fit.best_start = best_index;
  return fit;
}

}  // namespace dpd::garch
