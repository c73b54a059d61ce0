#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dpd/core.hpp"

namespace dpd::opt {

/**
 * Feasible set: a box [lower, upper] intersected with optional disjoint
 * "cap groups" (sum of the grouped coordinates <= cap).
 */
struct Constraints {
  struct CapGroup {
    std::vector<Eigen::Index> index;
    double cap;
  };

  Vector lower;
  Vector upper;
  std::vector<CapGroup> caps;

  static Constraints unbounded(Eigen::Index n) {
    const double inf = std::numeric_limits<double>::infinity();
    return {Vector::Constant(n, -inf), Vector::Constant(n, inf), {}};
  }

  /// Euclidean projection onto the feasible set.
  void project(Vector& x) const {
    x = x.cwiseMax(lower).cwiseMin(upper);
    for (const auto& group : caps) project_group(x, group);
  }

  bool at_lower(const Vector& x, Eigen::Index i) const { return x[i] <= lower[i]; }
  bool at_upper(const Vector& x, Eigen::Index i) const { return x[i] >= upper[i]; }

 private:
  void project_group(Vector& x, const CapGroup& group) const {
    auto clamped_sum = [&](double shift) {
      double s = 0.0;
      for (auto i : group.index) s += std::clamp(x[i] - shift, lower[i], upper[i]);
      return s;
    };
    if (clamped_sum(0.0) <= group.cap) return;
    // sum is nonincreasing in the shift; bisection on the multiplier
    double lo = 0.0;
    double hi = 0.0;
    for (auto i : group.index) hi = std::max(hi, x[i] - lower[i]);
    for (int it = 0; it < 200 && hi - lo > 1e-300; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid == lo || mid == hi) break;
      (clamped_sum(mid) > group.cap ? lo : hi) = mid;
    }
    for (auto i : group.index) x[i] = std::clamp(x[i] - hi, lower[i], upper[i]);
  }
};

struct MinimizeOptions {
  int max_iterations = 1000;
  /// Projected-gradient infinity norm that counts as converged.
  double gtol = 1e-8;
  /// Newton polishing target once the quasi-Newton phase is done.
  double polish_gtol = 1e-13;
  int max_polish = 25;
  /// Consecutive quasi-Newton steps without a representable decrease before handing over to the polish.
  int max_stall = 5;
  double fd_step = 1e-5;
};

struct MinimizeResult {
  Vector x;
  double f = std::numeric_limits<double>::quiet_NaN();
  Vector grad;
  double pg_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

/// || x - P(x - g) ||_inf
inline double projected_gradient_norm(const Vector& x, const Vector& g, const Constraints& c) {
  Vector y = x - g;
  c.project(y);
  return (x - y).cwiseAbs().maxCoeff();
}

namespace detail {

inline std::vector<bool> free_mask(const Vector& x, const Vector& g, const Constraints& c) {
  std::vector<bool> free(static_cast<std::size_t>(x.size()), true);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if ((c.at_lower(x, i) && g[i] > 0.0) || (c.at_upper(x, i) && g[i] < 0.0)) {
      free[static_cast<std::size_t>(i)] = false;
    }
  }
  return free;
}

/// Quasi-Newton step on the free coordinates: -(B_FF)^{-1} g_F with B = h_inv^{-1},
/// taken from the Schur complement of the active block of h_inv.
inline Vector reduced_direction(const Matrix& h_inv, const Vector& g, const std::vector<bool>& free) {
  std::vector<Eigen::Index> f_idx;
  std::vector<Eigen::Index> a_idx;
  for (Eigen::Index i = 0; i < g.size(); ++i) (free[static_cast<std::size_t>(i)] ? f_idx : a_idx).push_back(i);
  Vector dir = Vector::Zero(g.size());
  if (f_idx.empty()) return dir;
  const auto nf = static_cast<Eigen::Index>(f_idx.size());
  const auto na = static_cast<Eigen::Index>(a_idx.size());
  Matrix hff(nf, nf);
  Vector gf(nf);
  for (Eigen::Index i = 0; i < nf; ++i) {
    gf[i] = g[f_idx[static_cast<std::size_t>(i)]];
    for (Eigen::Index j = 0; j < nf; ++j) hff(i, j) = h_inv(f_idx[static_cast<std::size_t>(i)], f_idx[static_cast<std::size_t>(j)]);
  }
  if (na > 0) {
    Matrix hfa(nf, na);
    Matrix haa(na, na);
    for (Eigen::Index i = 0; i < nf; ++i) {
      for (Eigen::Index j = 0; j < na; ++j) hfa(i, j) = h_inv(f_idx[static_cast<std::size_t>(i)], a_idx[static_cast<std::size_t>(j)]);
    }
    for (Eigen::Index i = 0; i < na; ++i) {
      for (Eigen::Index j = 0; j < na; ++j) haa(i, j) = h_inv(a_idx[static_cast<std::size_t>(i)], a_idx[static_cast<std::size_t>(j)]);
    }
    Eigen::LDLT<Matrix> ldlt(haa);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) hff -= hfa * ldlt.solve(hfa.transpose());
  }
  const Vector df = -(hff * gf);
  for (Eigen::Index i = 0; i < nf; ++i) dir[f_idx[static_cast<std::size_t>(i)]] = df[i];
  return dir;
}

}  // namespace detail

/**
 * Projected BFGS with Armijo backtracking along the projection arc, followed by
 * a Newton polish that uses a finite-difference Hessian of the analytic gradient.
 *
 * `fg(x, grad)` returns f(x) and writes the gradient. Non-finite values are
 * treated as rejected trial points.
 */
template <class ObjectiveFn>
MinimizeResult minimize_projected(ObjectiveFn&& fg, Vector x0, const Constraints& c,
                                  const MinimizeOptions& opts = {}) {
  const Eigen::Index n = x0.size();
  MinimizeResult res;
  res.x = std::move(x0);
  c.project(res.x);
  res.grad = Vector::Zero(n);

  auto eval = [&](const Vector& x, Vector& g) {
    ++res.evaluations;
    const double f = fg(x, g);
    return (std::isfinite(f) && g.allFinite()) ? f : std::numeric_limits<double>::infinity();
  };

  res.f = eval(res.x, res.grad);
  if (!std::isfinite(res.f)) {
    res.message = "objective not finite at the starting point";
    return res;
  }

  Matrix h_inv = Matrix::Identity(n, n);
  bool fresh = true;
  Vector trial(n);
  Vector trial_grad(n);
  constexpr double kArmijo = 1e-4;
  int stall = 0;

  for (; res.iterations < opts.max_iterations; ++res.iterations) {
    res.pg_norm = projected_gradient_norm(res.x, res.grad, c);
    if (res.pg_norm <= opts.gtol) break;

    const auto free = detail::free_mask(res.x, res.grad, c);
    bool steepest = false;
    bool accepted = false;
    double trial_f = 0.0;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      Vector dir = Vector::Zero(n);
      Vector g_free = res.grad;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!free[static_cast<std::size_t>(i)]) g_free[i] = 0.0;
      }
      if (!steepest) {
        dir = detail::reduced_direction(h_inv, res.grad, free);
        if (!(dir.dot(g_free) < 0.0)) steepest = true;
      }
      if (steepest) {
        h_inv.setIdentity();
        fresh = true;
        dir = -g_free;
      }
      double step = 1.0;
      if (fresh) step = std::min(1.0, 1.0 / std::max(dir.cwiseAbs().maxCoeff(), 1e-300));
      for (int ls = 0; ls < 80; ++ls, step *= 0.5) {
        trial = res.x + step * dir;
        c.project(trial);
        if ((trial - res.x).cwiseAbs().maxCoeff() == 0.0) break;
        trial_f = eval(trial, trial_grad);
        if (trial_f <= res.f + kArmijo * res.grad.dot(trial - res.x)) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        if (steepest) break;
        steepest = true;
      }
    }
    if (!accepted) {
      res.message = "line search stalled";
      break;
    }

    const Vector s = trial - res.x;
    const Vector y = trial_grad - res.grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) h_inv *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const Matrix left = Matrix::Identity(n, n) - rho * s * y.transpose();
      h_inv = left * h_inv * left.transpose() + rho * s * s.transpose();
      fresh = false;
    }
    const double drop = res.f - trial_f;
    res.x = trial;
    res.f = trial_f;
    res.grad = trial_grad;
    stall = drop <= 4.0 * std::numeric_limits<double>::epsilon() * std::abs(res.f) ? stall + 1 : 0;
    if (stall >= opts.max_stall) break;
  }

  // Newton polish on the free coordinates.
  for (int it = 0; it < opts.max_polish; ++it) {
    res.pg_norm = projected_gradient_norm(res.x, res.grad, c);
    if (res.pg_norm <= opts.polish_gtol) break;
    const auto free = detail::free_mask(res.x, res.grad, c);
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (free[static_cast<std::size_t>(i)]) idx.push_back(i);
    }
    if (idx.empty()) break;
    const auto m = static_cast<Eigen::Index>(idx.size());
    Matrix hess(m, m);
    bool ok = true;
    for (Eigen::Index j = 0; j < m && ok; ++j) {
      const Eigen::Index col = idx[static_cast<std::size_t>(j)];
      const double h = opts.fd_step * std::max(1.0, std::abs(res.x[col]));
      const bool room_up = res.x[col] + h <= c.upper[col];
      const bool room_down = res.x[col] - h >= c.lower[col];
      Vector g_plus(n);
      Vector g_minus(n);
      Vector xp = res.x;
      Vector xm = res.x;
      double span = 0.0;
      if (room_up && room_down) {
        xp[col] += h;
        xm[col] -= h;
        span = 2.0 * h;
        ok = std::isfinite(eval(xp, g_plus)) && std::isfinite(eval(xm, g_minus));
      } else if (room_up) {
        xp[col] += h;
        span = h;
        g_minus = res.grad;
        ok = std::isfinite(eval(xp, g_plus));
      } else if (room_down) {
        xm[col] -= h;
        span = h;
        g_plus = res.grad;
        ok = std::isfinite(eval(xm, g_minus));
      } else {
        ok = false;
      }
      if (!ok) break;
      for (Eigen::Index i = 0; i < m; ++i) {
        hess(i, j) = (g_plus[idx[static_cast<std::size_t>(i)]] -
                      g_minus[idx[static_cast<std::size_t>(i)]]) /
                     span;
      }
    }
    if (!ok) break;
    hess = 0.5 * (hess + hess.transpose()).eval();
    Eigen::LDLT<Matrix> ldlt(hess);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) break;
    Vector g_free(m);
    for (Eigen::Index i = 0; i < m; ++i) g_free[i] = res.grad[idx[static_cast<std::size_t>(i)]];
    const Vector step_free = -ldlt.solve(g_free);
    if (!step_free.allFinite()) break;

    bool improved = false;
    double step = 1.0;
    for (int ls = 0; ls < 12; ++ls, step *= 0.5) {
      trial = res.x;
      for (Eigen::Index i = 0; i < m; ++i) trial[idx[static_cast<std::size_t>(i)]] += step * step_free[i];
      c.project(trial);
      const double tf = eval(trial, trial_grad);
      if (!std::isfinite(tf)) continue;
      const double slack = 1e-13 * std::max(1.0, std::abs(res.f));
      if (tf <= res.f + slack &&
          projected_gradient_norm(trial, trial_grad, c) < res.pg_norm) {
        res.x = trial;
        res.f = tf;
        res.grad = trial_grad;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }

  res.pg_norm = projected_gradient_norm(res.x, res.grad, c);
  res.converged = res.pg_norm <= opts.gtol;
  if (res.converged) {
    res.message = "converged";
  } else if (res.message.empty()) {
    res.message = "iteration limit reached";
  }
  return res;
}

}  // namespace dpd::opt
