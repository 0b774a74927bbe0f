#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "indiff/model.hpp"
#include "indiff/penalty.hpp"

namespace indiff {

/// Short-maturity limit of the exercise boundary in log price.
inline double x0_limit(const ModelParams& p) {
  const double lk = std::log(p.strike);
  const double m = p.effective_drift();
  if (m <= 0.0) return lk;
  return std::max(lk, std::log(2.0 * m / p.gradient_coeff()));
}

/// One stage of the penalty continuation.
struct ViScheduleItem {
  double epsilon = 0.0;
  double n_trunc = 0.0;
};

inline std::vector<ViScheduleItem> default_schedule(const GridSpec& grid) {
  const double n = std::max(std::abs(grid.x_min), std::abs(grid.x_max));
  return {{1e-2, n}, {5e-3, n}, {2.5e-3, n}, {1.25e-3, n}};
}

/// Halving continuation from 1e-2 down to at most eps_final. The contact gap
/// of the penalized solution scales like eps / C0, so runs whose C0 is small
/// (tiny risk aversion, narrow truncation) want a longer tail than the
/// default schedule.
inline std::vector<ViScheduleItem> schedule_to(const GridSpec& grid, double eps_final) {
  if (!(eps_final > 0.0)) throw validation_error("vi: schedule target must be positive");
  const double n = std::max(std::abs(grid.x_min), std::abs(grid.x_max));
  std::vector<ViScheduleItem> sched;
  for (double eps = 1e-2; ; eps *= 0.5) {
    sched.push_back({eps, n});
    if (eps <= eps_final) break;
    if (sched.size() > 24) throw validation_error("vi: schedule target unreachably small");
  }
  return sched;
}

struct ViDiagnostics {
  /// (epsilon, sup-norm difference to the previous stage surface)
  std::vector<std::pair<double, double>> schedule_diffs;
  bool cauchy_ok = true;  ///< successive differences non-increasing
  double complementarity_max = 0.0;
  double psor_total_sweeps = 0.0;
  std::vector<StepStats> final_steps;  ///< Newton stats of the last stage
};

/// Discrete solution of the obstacle problem together with the contact set.
struct ViSolution {
  enum class Method { penalty_continuation, projected_relaxation };

  Surface surface;
  std::vector<std::uint8_t> mask;  ///< rows x cols, 1 where the obstacle binds
  Method method = Method::penalty_continuation;
  ModelParams params;
  double payoff_scale = 1.0;
  double contact_tol = 0.0;
  ViDiagnostics diagnostics;

  bool exercised(std::size_t j, std::size_t i) const {
    return mask[j * surface.grid().n_x + i] != 0;
  }
};

namespace detail {

inline double scaled_payoff(double x, const ModelParams& p, double scale) {
  return scale * payoff(x, p.strike);
}

/// Contact flags: close to the payoff at the contact tolerance, strictly in
/// the money, and right of the short-maturity limit x0 (no stopping can occur
/// below either threshold).
inline std::vector<std::uint8_t> build_mask(const Surface& u, const ModelParams& p,
                                            double scale, double tol) {
  const GridSpec& g = u.grid();
  const double x0 = x0_limit(p);
  std::vector<std::uint8_t> mask(u.rows() * u.cols(), 0);
  for (std::size_t j = 0; j < u.rows(); ++j) {
    for (std::size_t i = 0; i < g.n_x; ++i) {
      const double x = g.x(i);
      const double gv = scaled_payoff(x, p, scale);
      const bool close = u.at(j, i) - gv <= tol;
      if (close && gv > 0.0 && x >= x0 - 1e-12) mask[j * g.n_x + i] = 1;
    }
  }
  return mask;
}

/// Backward-Euler residual of the unconstrained equation at row j (j >= 1),
/// with the same Neumann ghost handling as the steppers.
inline double pde_residual(const Surface& u, std::size_t j, std::size_t i,
                           const ModelParams& p, double scale) {
  const GridSpec& g = u.grid();
  const double dx = g.dx(), dth = g.dtheta();
  const double q = p.effective_drift() - 0.5 * p.c * p.c;
  const double half_c2 = 0.5 * p.c * p.c;
  const double flux_right = scale * std::exp(g.x_max);
  const std::size_t m = g.n_x - 1;
  double d1, d2;
  if (i == 0) {
    d1 = 0.0;
    d2 = (2.0 * u.at(j, 1) - 2.0 * u.at(j, 0)) / (dx * dx);
  } else if (i == m) {
    d1 = flux_right;
    d2 = (2.0 * u.at(j, m - 1) - 2.0 * u.at(j, m) + 2.0 * dx * flux_right) / (dx * dx);
  } else {
    d1 = (u.at(j, i + 1) - u.at(j, i - 1)) / (2.0 * dx);
    d2 = (u.at(j, i - 1) - 2.0 * u.at(j, i) + u.at(j, i + 1)) / (dx * dx);
  }
  const double lv = half_c2 * d2 + q * d1 - 0.5 * p.gradient_coeff() * d1 * d1;
  return (u.at(j, i) - u.at(j - 1, i)) / dth - lv;
}

/// max |min(PDE residual, u - payoff)| over all nodes of rows j >= 1.
inline double complementarity_max(const Surface& u, const ModelParams& p, double scale) {
  const GridSpec& g = u.grid();
  double worst = 0.0;
  for (std::size_t j = 1; j < u.rows(); ++j) {
    for (std::size_t i = 0; i < g.n_x; ++i) {
      const double res = pde_residual(u, j, i, p, scale);
      const double slackness = u.at(j, i) - scaled_payoff(g.x(i), p, scale);
      worst = std::max(worst, std::abs(std::min(res, slackness)));
    }
  }
  return worst;
}

/// Exact initial row and node-wise projection onto the payoff.
inline void finalize_surface(Surface& u, const ModelParams& p, double scale) {
  const GridSpec& g = u.grid();
  for (std::size_t i = 0; i < g.n_x; ++i) u.at(0, i) = scaled_payoff(g.x(i), p, scale);
  for (std::size_t j = 1; j < u.rows(); ++j)
    for (std::size_t i = 0; i < g.n_x; ++i)
      u.at(j, i) = std::max(u.at(j, i), scaled_payoff(g.x(i), p, scale));
}

inline double sup_diff(const Surface& a, const Surface& b) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.rows(); ++j)
    for (std::size_t i = 0; i < a.cols(); ++i)
      d = std::max(d, std::abs(a.at(j, i) - b.at(j, i)));
  return d;
}

}  // namespace detail

/// Variational-inequality solution by epsilon-continuation of the penalized
/// problem. The returned surface is the last schedule stage with the exact
/// payoff as initial row and a node-wise obstacle projection; successive
/// stage differences are reported in the diagnostics.
inline ViSolution solve_vi_penalty(const GridSpec& grid, const ModelParams& p,
                                   std::vector<ViScheduleItem> schedule = {},
                                   double payoff_scale = 1.0) {
  validate_params(p);
  validate_grid(grid, p.strike);
  if (schedule.empty()) schedule = default_schedule(grid);
  for (std::size_t k = 1; k < schedule.size(); ++k) {
    if (!(schedule[k].epsilon < schedule[k - 1].epsilon))
      throw validation_error("vi: schedule must be strictly decreasing in epsilon");
    if (schedule[k].n_trunc < schedule[k - 1].n_trunc)
      throw validation_error("vi: schedule must be non-decreasing in N");
  }
  if (std::max(std::abs(grid.x_min), std::abs(grid.x_max)) >
      schedule.front().n_trunc + grid.dx())
    throw validation_error("vi: lattice extends beyond the smallest truncation width");

  ViSolution sol;
  sol.method = ViSolution::Method::penalty_continuation;
  sol.params = p;
  sol.payoff_scale = payoff_scale;

  Surface prev;
  bool have_prev = false;
  double last_diff = std::numeric_limits<double>::infinity();
  for (const auto& item : schedule) {
    PenaltySettings settings;
    settings.epsilon = item.epsilon;
    settings.n_trunc = item.n_trunc;
    PenaltyResult r = solve_penalized(settings, grid, p, payoff_scale);
    if (have_prev) {
      const double d = detail::sup_diff(r.surface, prev);
      sol.diagnostics.schedule_diffs.emplace_back(item.epsilon, d);
      if (d > last_diff) sol.diagnostics.cauchy_ok = false;
      last_diff = d;
    }
    prev = std::move(r.surface);
    have_prev = true;
    sol.diagnostics.final_steps = std::move(r.steps);
  }

  sol.surface = std::move(prev);
  detail::finalize_surface(sol.surface, p, payoff_scale);
  const double dx = grid.dx();
  sol.contact_tol = std::max(schedule.back().epsilon, 5.0 * dx * dx) * payoff_scale;
  sol.mask = detail::build_mask(sol.surface, p, payoff_scale, sol.contact_tol);
  sol.diagnostics.complementarity_max = detail::complementarity_max(sol.surface, p, payoff_scale);
  return sol;
}

struct ProjectedOptions {
  double omega = 1.2;      ///< SOR relaxation factor
  double tol = 1e-11;      ///< max node update per sweep to declare converged
  int max_sweeps = 2000;
};

/// Independent solution of the same discrete obstacle problem by projected
/// SOR sweeps of the implicit step; the squared-gradient term is lagged
/// within each sweep.
inline ViSolution solve_vi_projected(const GridSpec& grid, const ModelParams& p,
                                     double payoff_scale = 1.0,
                                     const ProjectedOptions& opts = {}) {
  validate_params(p);
  validate_grid(grid, p.strike);

  const std::size_t n = grid.n_x;
  const std::size_t m = n - 1;
  const double dx = grid.dx(), dth = grid.dtheta();
  const double dx2 = dx * dx;
  const double q = p.effective_drift() - 0.5 * p.c * p.c;
  const double half_c2 = 0.5 * p.c * p.c;
  const double gcoef = p.gradient_coeff();
  const double flux_right = payoff_scale * std::exp(grid.x_max);
  const double diag = 1.0 / dth + p.c * p.c / dx2;

  ViSolution sol;
  sol.method = ViSolution::Method::projected_relaxation;
  sol.params = p;
  sol.payoff_scale = payoff_scale;
  sol.surface = Surface(grid);

  std::vector<double> obstacle(n);
  for (std::size_t i = 0; i < n; ++i)
    obstacle[i] = detail::scaled_payoff(grid.x(i), p, payoff_scale);
  std::copy(obstacle.begin(), obstacle.end(), sol.surface.row(0).begin());

  std::vector<double> v(n);
  double total_sweeps = 0.0;
  for (std::size_t j = 1; j <= grid.n_theta; ++j) {
    auto prevrow = sol.surface.row(j - 1);
    std::copy(prevrow.begin(), prevrow.end(), v.begin());
    int sweep = 0;
    for (; sweep < opts.max_sweeps; ++sweep) {
      double max_change = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double rhs;
        if (i == 0) {
          rhs = prevrow[0] / dth + (p.c * p.c / dx2) * v[1];
        } else if (i == m) {
          rhs = prevrow[m] / dth + (p.c * p.c / dx2) * v[m - 1] +
                (p.c * p.c / dx) * flux_right + q * flux_right -
                0.5 * gcoef * flux_right * flux_right;
        } else {
          const double g1 = (v[i + 1] - v[i - 1]) / (2.0 * dx);
          rhs = prevrow[i] / dth + half_c2 * (v[i - 1] + v[i + 1]) / dx2 + q * g1 -
                0.5 * gcoef * g1 * g1;
        }
        const double gs = rhs / diag;
        double vn = v[i] + opts.omega * (gs - v[i]);
        vn = std::max(vn, obstacle[i]);
        max_change = std::max(max_change, std::abs(vn - v[i]));
        v[i] = vn;
      }
      if (max_change <= opts.tol * std::max(1.0, payoff_scale)) break;
    }
    if (sweep >= opts.max_sweeps)
      throw solver_error("projected relaxation: sweep limit reached at step " +
                         std::to_string(j));
    total_sweeps += sweep + 1;
    std::copy(v.begin(), v.end(), sol.surface.row(j).begin());
  }
  if (!sol.surface.all_finite())
    throw solver_error("projected relaxation produced non-finite values");

  sol.contact_tol = 5.0 * dx * dx * payoff_scale;
  sol.mask = detail::build_mask(sol.surface, p, payoff_scale, sol.contact_tol);
  sol.diagnostics.complementarity_max =
      detail::complementarity_max(sol.surface, p, payoff_scale);
  sol.diagnostics.psor_total_sweeps = total_sweeps;
  return sol;
}

/// Exercise boundary s(theta) sampled at the lattice rows (theta_1..theta_max).
///
/// s is rectified to be non-decreasing and floored at x0; raw interpolated
/// locations and censoring flags are kept for diagnostics. Rows whose contact
/// set lies beyond the lattice are censored, not extrapolated.
struct FreeBoundary {
  std::vector<double> theta;
  std::vector<double> s;      ///< rectified, >= x0
  std::vector<double> s_raw;  ///< raw interpolated samples (NaN when censored)
  std::vector<std::uint8_t> censored;
  double x0 = 0.0;
  int raw_violations = 0;          ///< count of raw monotonicity violations
  double max_violation_cells = 0;  ///< worst raw drop, in units of dx
};

inline FreeBoundary extract_boundary(const ViSolution& sol, const ModelParams& p) {
  const GridSpec& g = sol.surface.grid();
  const double dx = g.dx();
  const double tol = sol.contact_tol;
  FreeBoundary fb;
  fb.x0 = x0_limit(p);

  double running = fb.x0;
  bool have_any = false;
  for (std::size_t j = 1; j <= g.n_theta; ++j) {
    fb.theta.push_back(g.theta(j));
    std::size_t first = g.n_x;
    for (std::size_t i = 0; i < g.n_x; ++i) {
      if (sol.exercised(j, i)) {
        first = i;
        break;
      }
    }
    if (first == g.n_x) {
      fb.s_raw.push_back(std::numeric_limits<double>::quiet_NaN());
      fb.censored.push_back(1);
      fb.s.push_back(g.x_max);  // right-censored marker
      continue;
    }
    double raw = g.x(first);
    if (first > 0) {
      const double d1 =
          sol.surface.at(j, first - 1) - detail::scaled_payoff(g.x(first - 1), p, sol.payoff_scale);
      const double d0 =
          sol.surface.at(j, first) - detail::scaled_payoff(g.x(first), p, sol.payoff_scale);
      if (d1 > tol && d1 > d0) raw = g.x(first - 1) + dx * (d1 - tol) / (d1 - d0);
    }
    fb.s_raw.push_back(raw);
    fb.censored.push_back(0);
    if (have_any && raw < running) {
      fb.raw_violations += 1;
      fb.max_violation_cells = std::max(fb.max_violation_cells, (running - raw) / dx);
    }
    running = std::max({running, raw, fb.x0});
    have_any = true;
    fb.s.push_back(running);
  }
  return fb;
}

}  // namespace indiff
