#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "dpd/errors.hpp"

namespace dpd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/**
 * Density power divergence tuning parameter.
 *
 * A value of zero selects the log-likelihood branch of every objective.
 * Values above one are refused unless explicitly allowed.
 */
class Alpha {
 public:
  explicit Alpha(double value, bool allow_above_one = false) : value_(value) {
    if (!std::isfinite(value) || value < 0.0) {
      throw ConfigError("alpha must be a finite nonnegative number");
    }
    if (value > 1.0 && !allow_above_one) {
      throw ConfigError("alpha > 1 rejected (pass allow_above_one to override)");
    }
  }

  double value() const noexcept { return value_; }
  bool is_likelihood() const noexcept { return value_ == 0.0; }

 private:
  double value_;
};

enum class NormKind { Max, Euclidean };

inline const char* to_string(NormKind kind) {
  return kind == NormKind::Max ? "max" : "euclidean";
}

/// Boundary function b(t), t > 0. Continuous with a strictly positive infimum.
class BoundaryFn {
 public:
  enum class Kind { Constant, Custom };

  static BoundaryFn constant(double b) {
    if (!std::isfinite(b) || b <= 0.0) {
      throw ConfigError("constant boundary must be finite and strictly positive");
    }
    BoundaryFn fn;
    fn.kind_ = Kind::Constant;
    fn.level_ = b;
    fn.infimum_ = b;
    return fn;
  }

  /// User-supplied boundary; `infimum` is a declared positive lower bound of b on (0, inf).
  static BoundaryFn custom(std::function<double(double)> eval, double infimum,
                           std::string name = "custom") {
    if (!eval) throw ConfigError("custom boundary needs an evaluator");
    if (!(infimum > 0.0)) throw ConfigError("boundary infimum must be strictly positive");
    BoundaryFn fn;
    fn.kind_ = Kind::Custom;
    fn.eval_ = std::move(eval);
    fn.infimum_ = infimum;
    fn.name_ = std::move(name);
    return fn;
  }

  double operator()(double t) const {
    if (kind_ == Kind::Constant) return level_;
    const double v = eval_(t);
    if (!(v >= infimum_)) throw ConfigError("custom boundary fell below its declared infimum");
    return v;
  }

  Kind kind() const noexcept { return kind_; }
  double infimum() const noexcept { return infimum_; }

  std::string describe() const {
    if (kind_ == Kind::Custom) return name_;
    std::ostringstream os;
    os.precision(17);
    os << "constant(" << level_ << ")";
    return os.str();
  }

 private:
  BoundaryFn() = default;

  Kind kind_ = Kind::Constant;
  double level_ = 0.0;
  double infimum_ = 0.0;
  std::function<double(double)> eval_;
  std::string name_;
};

inline double vector_norm(const Eigen::Ref<const Vector>& v, NormKind kind) {
  if (v.size() == 0) throw DimensionError("vector_norm of an empty vector");
  return kind == NormKind::Max ? v.cwiseAbs().maxCoeff() : v.norm();
}

/// Default eigenvalue floor: 1e-10 * trace(M) / d.
inline double default_eigen_floor(const Matrix& m) {
  return 1e-10 * m.trace() / static_cast<double>(m.rows());
}

/**
 * Symmetric inverse square root M^{-1/2} of a symmetric positive definite matrix,
 * via eigendecomposition. Throws SingularInformationError when the smallest
 * eigenvalue is below `eps` (default: default_eigen_floor).
 */
inline Matrix inv_sqrt_spd(const Matrix& m, std::optional<double> eps = std::nullopt) {
  if (m.rows() == 0 || m.rows() != m.cols()) {
    throw DimensionError("inv_sqrt_spd needs a nonempty square matrix");
  }
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if (!((m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale)) {
    throw DomainError("inv_sqrt_spd needs a symmetric matrix");
  }
  const double floor = eps.value_or(default_eigen_floor(m));
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw SingularInformationError("eigendecomposition failed");
  const Vector& lambda = es.eigenvalues();
  if (!(lambda.minCoeff() >= floor) || !(floor > 0.0)) {
    std::ostringstream os;
    os << "information matrix is singular: smallest eigenvalue " << lambda.minCoeff()
       << " below floor " << floor;
    throw SingularInformationError(os.str());
  }
  const Vector inv_root = lambda.array().rsqrt();
  Matrix s = es.eigenvectors() * inv_root.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (s + s.transpose());
}

/// Neumaier-compensated running sum of d-vectors.
class CompensatedSum {
 public:
  explicit CompensatedSum(Eigen::Index dim = 0) : sum_(Vector::Zero(dim)), carry_(Vector::Zero(dim)) {}

  void add(const Eigen::Ref<const Vector>& v) {
    for (Eigen::Index i = 0; i < sum_.size(); ++i) {
      const double s = sum_[i];
      const double t = s + v[i];
      if (std::abs(s) >= std::abs(v[i])) {
        carry_[i] += (s - t) + v[i];
      } else {
        carry_[i] += (v[i] - t) + s;
      }
      sum_[i] = t;
    }
  }

  Vector value() const { return sum_ + carry_; }
  Eigen::Index size() const noexcept { return sum_.size(); }

 private:
  Vector sum_;
  Vector carry_;
};

}  // namespace dpd
