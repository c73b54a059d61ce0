#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dpd/core.hpp"
#include "dpd/critval.hpp"
#include "dpd/garch.hpp"
#include "dpd/monitor.hpp"
#include "dpd/rng.hpp"

namespace dpd::simlab {

/// Substream identifiers within one replication.
enum Stream : std::uint64_t { kPathStream = 0, kOutlierStream = 1, kJitterStream = 2 };

/// Exact GARCH(p,q) generator with Gaussian innovations; parameters may be switched mid-path.
class GarchSimulator {
 public:
  GarchSimulator(const garch::GarchParams& params, std::uint64_t seed) : params_(params), rng_(seed) {
    check(params_);
    const double v = params_.unconditional_variance();
    x2_.assign(static_cast<std::size_t>(params_.p()), v);
    s2_.assign(static_cast<std::size_t>(params_.q()), v);
  }

  /// Continue the same recursion with new coefficients (same orders).
  void switch_params(const garch::GarchParams& params) {
    check(params);
    if (params.p() != params_.p() || params.q() != params_.q()) {
      throw ConfigError("regime switch must keep the GARCH orders");
    }
    params_ = params;
  }

  double next() {
    double s2 = params_.omega;
    for (std::size_t i = 0; i < x2_.size(); ++i) s2 += params_.alphas[i] * x2_[i];
    for (std::size_t j = 0; j < s2_.size(); ++j) s2 += params_.betas[j] * s2_[j];
    const double x = std::sqrt(s2) * eps_(rng_);
    if (!x2_.empty()) {
      std::rotate(x2_.rbegin(), x2_.rbegin() + 1, x2_.rend());
      x2_[0] = x * x;
    }
    if (!s2_.empty()) {
      std::rotate(s2_.rbegin(), s2_.rbegin() + 1, s2_.rend());
      s2_[0] = s2;
    }
    return x;
  }

 private:
  static void check(const garch::GarchParams& params) {
    params.validate();
    if (!params.is_stationary()) {
      throw ConfigError("simulation requires sum(alpha) + sum(beta) < 1");
    }
  }

  garch::GarchParams params_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> eps_{0.0, 1.0};
  std::vector<double> x2_;
  std::vector<double> s2_;
};

/// n observations after discarding burn_in; deterministic per seed.
inline std::vector<double> simulate_garch_path(const garch::GarchParams& theta, std::size_t n,
                                               std::size_t burn_in, std::uint64_t seed) {
  GarchSimulator sim(theta, seed);
  for (std::size_t t = 0; t < burn_in; ++t) sim.next();
  std::vector<double> out(n);
  for (auto& x : out) x = sim.next();
  return out;
}

/// First `before` observations under theta0, then `after` under theta1, one continued recursion.
inline std::vector<double> simulate_garch_switch(const garch::GarchParams& theta0, std::size_t before,
                                                 const garch::GarchParams& theta1, std::size_t after,
                                                 std::size_t burn_in, std::uint64_t seed) {
  GarchSimulator sim(theta0, seed);
  for (std::size_t t = 0; t < burn_in; ++t) sim.next();
  std::vector<double> out;
  out.reserve(before + after);
  for (std::size_t t = 0; t < before; ++t) out.push_back(sim.next());
  sim.switch_params(theta1);
  for (std::size_t t = 0; t < after; ++t) out.push_back(sim.next());
  return out;
}

/// Independent Bernoulli(p) outlier indicators.
inline std::vector<char> outlier_mask(std::size_t n, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("outlier probability must lie in [0, 1)");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution draw(p);
  std::vector<char> mask(n);
  for (auto& m : mask) m = draw(rng) ? 1 : 0;
  return mask;
}

/// x + s * sign(x) wherever mask is set within [begin, end); sign(0) = +1.
inline void apply_outliers(std::vector<double>& path, std::span<const char> mask, double s, std::size_t begin,
                           std::size_t end) {
  end = std::min({end, path.size(), mask.size()});
  for (std::size_t t = begin; t < end; ++t) {
    if (mask[t]) path[t] += s * (path[t] >= 0.0 ? 1.0 : -1.0);
  }
}

inline std::vector<double> contaminate(std::span<const double> path, double p, double s, std::uint64_t seed) {
  std::vector<double> out(path.begin(), path.end());
  const auto mask = outlier_mask(out.size(), p, seed);
  apply_outliers(out, mask, s, 0, out.size());
  return out;
}

/// Default outlier shift: 5 stationary standard deviations of the process.
inline double default_outlier_shift(const garch::GarchParams& theta) {
  return 5.0 * std::sqrt(theta.unconditional_variance());
}

enum class Contamination { None, H, M, HM };

inline const char* to_string(Contamination c) {
  switch (c) {
    case Contamination::None: return "none";
    case Contamination::H: return "H";
    case Contamination::M: return "M";
    case Contamination::HM: return "HM";
  }
  return "none";
}

struct Scenario {
  garch::GarchParams theta0;
  std::optional<garch::GarchParams> theta1;  ///< absent: size experiment
  std::size_t k_star = 250;
  std::size_t n_hist = 1000;
  std::size_t horizon = 2000;
  Contamination contamination = Contamination::None;
  double p_outlier = 0.03;
  std::optional<double> s_scale;  ///< absent: default_outlier_shift(theta0)
  std::size_t outlier_window = 200;  ///< monitoring steps 1..window for M / HM
  std::vector<double> alpha_grid{0.0, 0.1, 0.2, 0.3, 0.5};
  double level = 0.05;
  std::size_t reps = 200;
  std::uint64_t seed = 1;
  std::size_t burn_in = 500;
  bool paired_clean = false;  ///< also run the uncontaminated twin of every replication
  bool jitter_start = false;  ///< extra jittered optimizer start per fit
  NormKind norm = NormKind::Max;
  unsigned threads = 0;

  double outlier_shift() const { return s_scale.value_or(default_outlier_shift(theta0)); }

  void validate() const {
    theta0.validate();
    if (!theta0.is_stationary()) throw ConfigError("theta0 must satisfy sum(alpha) + sum(beta) < 1");
    if (theta1) {
      theta1->validate();
      if (!theta1->is_stationary()) throw ConfigError("theta1 must satisfy sum(alpha) + sum(beta) < 1");
      if (theta1->p() != theta0.p() || theta1->q() != theta0.q()) throw ConfigError("theta1 must match theta0 orders");
      if (k_star >= horizon) throw ConfigError("k_star must be smaller than the horizon");
    }
    if (!(p_outlier >= 0.0 && p_outlier < 1.0)) throw ConfigError("p_outlier must lie in [0, 1)");
    if (s_scale && !(*s_scale >= 0.0)) throw ConfigError("s_scale must be nonnegative");
    if (n_hist < 100) throw ConfigError("n_hist must be at least 100");
    if (horizon == 0) throw ConfigError("horizon must be positive");
    if (reps == 0) throw ConfigError("reps must be positive");
    if (alpha_grid.empty()) throw ConfigError("alpha_grid must not be empty");
    for (double a : alpha_grid) Alpha{a};
    critval::validate_level(level);
  }
};

struct DelayStats {
  double mean = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  std::size_t count = 0;
  std::size_t censored = 0;  ///< replications without an alarm, counted at horizon + 1
};

struct AlphaReport {
  double alpha = 0.0;
  std::vector<long> stop_k;      ///< per replication; 0 = no alarm, -1 = fit failure
  std::vector<double> rejection_curve;  ///< fraction of successful reps stopped at or before k
  std::size_t successes = 0;
  std::size_t failures = 0;
  std::optional<DelayStats> delay;

  double terminal_rate() const { return rejection_curve.empty() ? 0.0 : rejection_curve.back(); }
};

struct ExperimentReport {
  Scenario scenario;
  double critical_value = 0.0;
  double outlier_shift = 0.0;
  std::vector<AlphaReport> per_alpha;
  std::vector<AlphaReport> clean;      ///< filled when scenario.paired_clean and contaminated
  std::vector<double> delay_ratio;     ///< d_alpha, when both contaminated and clean delays exist
  bool flagged = false;                ///< some alpha had >= 2% failed fits
};

namespace detail {

inline double quantile_linear(std::vector<double> v, double prob) {
  std::sort(v.begin(), v.end());
  const double pos = prob * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline AlphaReport aggregate(double alpha, std::vector<long> stops, const Scenario& sc) {
  AlphaReport r;
  r.alpha = alpha;
  r.stop_k = std::move(stops);
  std::vector<std::size_t> hits(sc.horizon + 1, 0);
  std::vector<double> delays;
  DelayStats ds;
  for (long s : r.stop_k) {
    if (s < 0) {
      ++r.failures;
      continue;
    }
    ++r.successes;
    if (s > 0) ++hits[static_cast<std::size_t>(s)];
    if (sc.theta1) {
      const long stop = s > 0 ? s : static_cast<long>(sc.horizon) + 1;
      if (s == 0) ++ds.censored;
      delays.push_back(static_cast<double>(stop - static_cast<long>(sc.k_star)));
    }
  }
  r.rejection_curve.assign(sc.horizon, 0.0);
  std::size_t cumulative = 0;
  for (std::size_t k = 1; k <= sc.horizon; ++k) {
    cumulative += hits[k];
    r.rejection_curve[k - 1] =
        r.successes ? static_cast<double>(cumulative) / static_cast<double>(r.successes) : 0.0;
  }
  if (sc.theta1 && !delays.empty()) {
    double sum = 0.0;
    for (double d : delays) sum += d;
    ds.mean = sum / static_cast<double>(delays.size());
    ds.q1 = quantile_linear(delays, 0.25);
    ds.median = quantile_linear(delays, 0.5);
    ds.q3 = quantile_linear(delays, 0.75);
    ds.count = delays.size();
    r.delay = ds;
  }
  return r;
}

/// Stop index for one fitted monitor; -1 on a fit failure.
inline long monitor_once(std::span<const double> hist, std::span<const double> stream, Alpha alpha,
                         const Scenario& sc, const BoundaryFn& boundary, std::optional<std::uint64_t> jitter) {
  try {
    garch::GarchFitOptions fo;
    fo.jitter_seed = jitter;
    const auto fit = garch::mdpde_fit_garch(hist, alpha, sc.theta0.p(), sc.theta0.q(), fo);
    const auto out = monitor::run_monitor(fit, hist, stream, alpha, boundary, sc.norm, sc.horizon);
    return out.stop_k ? static_cast<long>(*out.stop_k) : 0L;
  } catch (const Error&) {
    return -1;
  }
}

}  // namespace detail

/// d_alpha = mean contaminated delay / mean clean delay, per alpha.
inline std::vector<double> delay_ratio_table(const std::vector<AlphaReport>& contaminated,
                                             const std::vector<AlphaReport>& clean) {
  if (contaminated.size() != clean.size()) throw DimensionError("reports cover different alpha grids");
  std::vector<double> ratio;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (contaminated[i].alpha != clean[i].alpha) throw DimensionError("reports cover different alpha grids");
    if (!contaminated[i].delay || !clean[i].delay) throw DomainError("delay ratio undefined: no delay statistics");
    if (clean[i].delay->mean == 0.0) throw DomainError("delay ratio undefined: clean mean delay is zero");
    ratio.push_back(contaminated[i].delay->mean / clean[i].delay->mean);
  }
  return ratio;
}

inline std::vector<double> delay_ratio_table(const ExperimentReport& contaminated, const ExperimentReport& clean) {
  return delay_ratio_table(contaminated.per_alpha, clean.per_alpha);
}

/**
 * Runs every replication of a scenario: simulate (with a regime switch at k_star
 * under an alternative), contaminate the requested windows, fit per alpha on the
 * historical part, monitor with the constant boundary for d = 1 + p + q, and
 * aggregate first-crossing indices.
 */
inline ExperimentReport run_scenario(const Scenario& sc) {
  sc.validate();
  ExperimentReport report;
  report.scenario = sc;
  const int d = static_cast<int>(sc.theta0.dim());
  report.critical_value = critval::critical_value_sequential(d, sc.level);
  report.outlier_shift = sc.outlier_shift();
  const BoundaryFn boundary = BoundaryFn::constant(report.critical_value);

  const bool contaminated = sc.contamination != Contamination::None && sc.p_outlier > 0.0;
  const bool paired = contaminated && sc.paired_clean;
  const std::size_t n_alpha = sc.alpha_grid.size();
  std::vector<std::vector<long>> stops(n_alpha, std::vector<long>(sc.reps, -1));
  std::vector<std::vector<long>> clean_stops(paired ? n_alpha : 0, std::vector<long>(sc.reps, -1));

  parallel_for(sc.reps, sc.threads, [&](std::size_t rep) {
    const std::size_t total = sc.n_hist + sc.horizon;
    const std::uint64_t path_seed = derive_seed(sc.seed, rep, kPathStream);
    std::vector<double> clean_path =
        sc.theta1 ? simulate_garch_switch(sc.theta0, sc.n_hist + sc.k_star, *sc.theta1, sc.horizon - sc.k_star,
                                          sc.burn_in, path_seed)
                  : simulate_garch_path(sc.theta0, total, sc.burn_in, path_seed);
    std::vector<double> path = clean_path;
    if (contaminated) {
      const auto mask = outlier_mask(total, sc.p_outlier, derive_seed(sc.seed, rep, kOutlierStream));
      const double s = report.outlier_shift;
      if (sc.contamination == Contamination::H || sc.contamination == Contamination::HM) {
        apply_outliers(path, mask, s, 0, sc.n_hist);
      }
      if (sc.contamination == Contamination::M || sc.contamination == Contamination::HM) {
        apply_outliers(path, mask, s, sc.n_hist, sc.n_hist + sc.outlier_window);
      }
    }
    std::optional<std::uint64_t> jitter;
    if (sc.jitter_start) jitter = derive_seed(sc.seed, rep, kJitterStream);
    auto split = [&](const std::vector<double>& v) {
      return std::pair{std::span<const double>(v).first(sc.n_hist), std::span<const double>(v).subspan(sc.n_hist)};
    };
    const auto [hist, stream] = split(path);
    for (std::size_t a = 0; a < n_alpha; ++a) {
      const Alpha alpha(sc.alpha_grid[a]);
      stops[a][rep] = detail::monitor_once(hist, stream, alpha, sc, boundary, jitter);
      if (paired) {
        const auto [chist, cstream] = split(clean_path);
        clean_stops[a][rep] = detail::monitor_once(chist, cstream, alpha, sc, boundary, jitter);
      }
    }
  });

  for (std::size_t a = 0; a < n_alpha; ++a) {
    report.per_alpha.push_back(detail::aggregate(sc.alpha_grid[a], std::move(stops[a]), sc));
    if (paired) report.clean.push_back(detail::aggregate(sc.alpha_grid[a], std::move(clean_stops[a]), sc));
  }
  for (const auto* group : {&report.per_alpha, &report.clean}) {
    for (const auto& r : *group) {
      if (static_cast<double>(r.failures) >= 0.02 * static_cast<double>(sc.reps)) report.flagged = true;
    }
  }
  if (paired && sc.theta1) {
    try {
      report.delay_ratio = delay_ratio_table(report.per_alpha, report.clean);
    } catch (const DomainError&) {
      report.delay_ratio.clear();
    }
  }
  return report;
}

}  // namespace dpd::simlab
