#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "indiff/model.hpp"

namespace indiff {

/// In-place Thomas algorithm for a tridiagonal system.
///
/// lower has n-1 entries (sub-diagonal), diag n, upper n-1. rhs is overwritten
/// with the solution. Scratch buffers are caller-provided so time-stepping
/// loops do not allocate.
inline void solve_tridiagonal(std::span<const double> lower, std::span<const double> diag,
                              std::span<const double> upper, std::span<double> rhs,
                              std::span<double> scratch) {
  const std::size_t n = diag.size();
  // scratch holds the modified upper diagonal
  double pivot = diag[0];
  if (pivot == 0.0 || !std::isfinite(pivot))
    throw solver_error("tridiagonal solve: zero or non-finite pivot");
  scratch[0] = upper.empty() ? 0.0 : upper[0] / pivot;
  rhs[0] /= pivot;
  for (std::size_t i = 1; i < n; ++i) {
    pivot = diag[i] - lower[i - 1] * scratch[i - 1];
    if (pivot == 0.0 || !std::isfinite(pivot))
      throw solver_error("tridiagonal solve: zero or non-finite pivot");
    scratch[i] = (i + 1 < n) ? upper[i] / pivot : 0.0;
    rhs[i] = (rhs[i] - lower[i - 1] * rhs[i - 1]) / pivot;
  }
  for (std::size_t i = n - 1; i-- > 0;) rhs[i] -= scratch[i] * rhs[i + 1];
}

}  // namespace indiff
