#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "indiff/model.hpp"
#include "indiff/pricing.hpp"
#include "indiff/tridiag.hpp"
#include "indiff/vi.hpp"

namespace indiff {

/// Employee stock option: vesting time t_v and exogenous job-termination
/// intensity alpha on top of the market constants. The cost itself is
/// risk-neutral, so the underlying must be a martingale (b = 0); the
/// employee's exercise boundary comes from the indifference solve with the
/// same c, K, T.
struct ESOSpec {
  ModelParams base;
  double alpha = 0.0;
  double t_v = 0.0;
};

inline const ESOSpec& validate_eso(const ESOSpec& spec) {
  validate_params(spec.base);
  if (spec.base.b != 0.0)
    throw validation_error("eso: risk-neutral valuation requires b = 0");
  if (!(spec.alpha >= 0.0)) throw validation_error("eso: alpha must be non-negative");
  if (!(spec.t_v > 0.0 && spec.t_v < spec.base.maturity))
    throw validation_error("eso: vesting time must lie strictly inside (0, maturity)");
  return spec;
}

/// Two-stage cost surfaces. Post-vesting rows live at theta = T - t in
/// [0, T - t_v]; pre-vesting rows at theta' = t_v - t in [0, t_v]. The seam
/// row at t_v is shared by construction.
struct ESOSolution {
  Surface post_vesting;
  Surface pre_vesting;
  FreeBoundary boundary;  ///< in the same log-price coordinates as the lattices
  double t_v_eff = 0.0;   ///< vesting time snapped to the time lattice
  double strike = 0.0;
};

namespace detail {

inline std::size_t vesting_row(const GridSpec& grid, double t_v) {
  const double dth = grid.dtheta();
  const auto j = static_cast<std::size_t>(std::llround((grid.theta_max - t_v) / dth));
  if (j < 1 || j >= grid.n_theta)
    throw validation_error("eso: vesting time falls outside the interior of the lattice");
  return j;
}

}  // namespace detail

/// Backward solve of the killed equation dC/dt + (c^2/2) y^2 C_yy - alpha C
/// + alpha (y-K)^+ = 0 below the exercise boundary, C = (y-K)^+ at and above
/// it (imposed at the first lattice node right of the boundary), terminal
/// data (y-K)^+. At the left edge the equation degenerates to the killed
/// transport dC/dt = alpha C - alpha (y-K)^+, which is what the row solves.
inline Surface solve_post_vesting(const ESOSpec& spec, const FreeBoundary& boundary,
                                  const GridSpec& grid) {
  validate_eso(spec);
  validate_grid(grid, spec.base.strike);
  const ModelParams& p = spec.base;
  const std::size_t j_v = detail::vesting_row(grid, spec.t_v);

  const std::size_t n = grid.n_x;
  const double dx = grid.dx(), dth = grid.dtheta();
  const double half_c2 = 0.5 * p.c * p.c;
  const double dx2 = dx * dx;

  GridSpec stage = grid;
  stage.n_theta = j_v;
  stage.theta_max = static_cast<double>(j_v) * dth;
  Surface C(stage);

  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = payoff(grid.x(i), p.strike);
  std::copy(g.begin(), g.end(), C.row(0).begin());

  std::vector<double> lower(n - 1), diag(n), upper(n - 1), rhs(n), scratch(n);
  for (std::size_t j = 1; j <= j_v; ++j) {
    if (j - 1 >= boundary.s.size())
      throw validation_error("eso: boundary does not cover the post-vesting window");
    if (boundary.censored[j - 1])
      throw solver_error(
          "eso: exercise boundary right-censored inside the post-vesting window; "
          "re-run the pricing stage on a wider lattice");
    const double s_j = boundary.s[j - 1];
    auto prev = C.row(j - 1);

    for (std::size_t i = 0; i < n; ++i) {
      const bool exercised = grid.x(i) >= s_j - 1e-12;
      if (exercised) {
        if (i > 0) lower[i - 1] = 0.0;
        diag[i] = 1.0;
        if (i + 1 < n) upper[i] = 0.0;
        rhs[i] = g[i];
      } else if (i == 0) {
        diag[0] = 1.0 / dth + spec.alpha;
        upper[0] = 0.0;
        rhs[0] = prev[0] / dth + spec.alpha * g[0];
      } else {
        lower[i - 1] = -half_c2 * (1.0 / dx2 + 1.0 / (2.0 * dx));
        diag[i] = 1.0 / dth + 2.0 * half_c2 / dx2 + spec.alpha;
        if (i + 1 < n) upper[i] = -half_c2 * (1.0 / dx2 - 1.0 / (2.0 * dx));
        rhs[i] = prev[i] / dth + spec.alpha * g[i];
      }
    }
    std::copy(rhs.begin(), rhs.end(), C.row(j).begin());
    auto out = C.row(j);
    solve_tridiagonal(lower, diag, upper, out, scratch);
  }
  if (!C.all_finite()) throw solver_error("eso: post-vesting solve produced non-finite values");
  return C;
}

/// Pre-vesting stage: dC/dt + (c^2/2) y^2 C_yy - alpha C = 0 on [0, t_v) with
/// terminal data from the post-vesting stage. The killing is removed exactly
/// by the substitution W = e^{alpha theta'} C, so spatially flat data decays
/// as e^{-alpha (t_v - t)} to machine precision; the far field uses the
/// zero-convexity row y^2 C_yy = 0.
inline Surface solve_pre_vesting(const ESOSpec& spec, const Surface& post) {
  validate_eso(spec);
  const GridSpec& pg = post.grid();
  const ModelParams& p = spec.base;
  const std::size_t n = pg.n_x;
  const double dx = pg.dx(), dth = pg.dtheta();
  const double half_c2 = 0.5 * p.c * p.c;
  const double dx2 = dx * dx;
  const double t_v_eff = p.maturity - pg.theta_max;

  const auto steps = static_cast<std::size_t>(std::llround(t_v_eff / dth));
  if (steps < 1) throw validation_error("eso: no pre-vesting window on this lattice");

  GridSpec stage = pg;
  stage.n_theta = steps;
  stage.theta_max = static_cast<double>(steps) * dth;
  Surface C(stage);
  std::copy(post.row(pg.n_theta).begin(), post.row(pg.n_theta).end(), C.row(0).begin());

  std::vector<double> w(C.row(0).begin(), C.row(0).end());
  std::vector<double> lower(n - 1), diag(n), upper(n - 1), scratch(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0 || i + 1 == n) {
      // degenerate left edge and zero-convexity right edge: identity rows
      if (i > 0) lower[i - 1] = 0.0;
      diag[i] = 1.0;
      if (i + 1 < n) upper[i] = 0.0;
    } else {
      lower[i - 1] = -half_c2 * (dth / dx2 + dth / (2.0 * dx));
      diag[i] = 1.0 + 2.0 * half_c2 * dth / dx2;
      upper[i] = -half_c2 * (dth / dx2 - dth / (2.0 * dx));
    }
  }
  std::vector<double> rhs(n);
  for (std::size_t j = 1; j <= steps; ++j) {
    std::copy(w.begin(), w.end(), rhs.begin());
    solve_tridiagonal(lower, diag, upper, rhs, scratch);
    w = rhs;
    const double decay = std::exp(-spec.alpha * static_cast<double>(j) * dth);
    auto row = C.row(j);
    for (std::size_t i = 0; i < n; ++i) row[i] = decay * w[i];
  }
  if (!C.all_finite()) throw solver_error("eso: pre-vesting solve produced non-finite values");
  return C;
}

/// Full pipeline: indifference boundary (b = 0) on the given lattice, then
/// the two risk-neutral stages. The stages run in multiples of the strike on
/// the normalized pricing lattice; currency re-enters in eso_cost.
inline ESOSolution solve_eso(const ESOSpec& spec, const GridSpec& grid,
                             std::vector<ViScheduleItem> schedule = {}) {
  validate_eso(spec);
  PriceModel model = build_price_model(spec.base, grid, std::move(schedule));

  ESOSpec normalized = spec;
  normalized.base.strike = 1.0;

  ESOSolution sol;
  sol.boundary = model.boundary();
  sol.strike = spec.base.strike;
  sol.post_vesting =
      solve_post_vesting(normalized, sol.boundary, model.vi().surface.grid());
  sol.pre_vesting = solve_pre_vesting(normalized, sol.post_vesting);
  sol.t_v_eff = spec.base.maturity - sol.post_vesting.grid().theta_max;
  return sol;
}

/// Cost lookup across both stages; continuous at the vesting seam because the
/// seam row is shared.
inline double eso_cost(double y, double t, const ESOSolution& sol) {
  if (!(y > 0.0)) throw validation_error("eso: spot must be positive");
  const double T = sol.t_v_eff + sol.post_vesting.grid().theta_max;
  if (t < 0.0 || t > T) throw validation_error("eso: time outside [0, maturity]");
  const double x = std::log(y / sol.strike);
  if (t >= sol.t_v_eff) return sol.strike * sol.post_vesting.interpolate(x, T - t);
  return sol.strike * sol.pre_vesting.interpolate(x, sol.t_v_eff - t);
}

}  // namespace indiff
