#pragma once

#include <cstddef>

#include "dpd/core.hpp"
#include "dpd/optimizer.hpp"

namespace dpd {

/// Outcome of an MDPDE fit. Immutable once returned.
template <class Theta>
struct FitResult {
  Theta theta_hat;
  double objective = 0.0;   ///< mean DPD loss at theta_hat
  Matrix info_hat;          ///< empirical outer-product information estimate
  double grad_norm = 0.0;   ///< projected-gradient infinity norm at theta_hat
  bool converged = false;
  std::size_t n_used = 0;
  int iterations = 0;
  int best_start = 0;       ///< index of the multistart that won
};

}  // namespace dpd
