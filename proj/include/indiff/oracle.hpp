#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "indiff/model.hpp"

// Brute-force references kept deliberately independent of the implicit
// steppers: everything here is matrix-free and re-derives its own stencils.

namespace indiff {

/// Recombining lattice for the linear-limit American call.
struct TreeSpec {
  int n_steps = 0;
  double drift = 0.0;  ///< b - rho c lambda
  double vol = 0.0;
  double strike = 0.0;
  double maturity = 0.0;
};

/// Backward-induction American call value under lognormal dynamics with the
/// given drift and zero discounting. The zero-volatility lattice degenerates
/// to the best deterministic exercise date.
inline double binomial_american(const TreeSpec& tree, double y0) {
  if (tree.n_steps < 1) throw validation_error("tree: need at least one step");
  if (!(y0 > 0.0) || !(tree.strike > 0.0) || !(tree.maturity > 0.0))
    throw validation_error("tree: spot, strike and maturity must be positive");
  if (tree.vol < 0.0) throw validation_error("tree: volatility must be non-negative");
  const int n = tree.n_steps;
  const double dt = tree.maturity / n;

  if (tree.vol == 0.0) {
    double best = 0.0;
    for (int k = 0; k <= n; ++k)
      best = std::max(best, y0 * std::exp(tree.drift * k * dt) - tree.strike);
    return std::max(best, 0.0);
  }

  const double up = std::exp(tree.vol * std::sqrt(dt));
  const double down = 1.0 / up;
  const double grow = std::exp(tree.drift * dt);
  const double prob = (grow - down) / (up - down);
  if (prob <= 0.0 || prob >= 1.0)
    throw validation_error("tree: drift too large for the lattice (p outside (0,1))");

  std::vector<double> value(n + 1);
  for (int k = 0; k <= n; ++k) {
    const double y = y0 * std::pow(up, 2 * k - n);
    value[k] = std::max(y - tree.strike, 0.0);
  }
  for (int step = n - 1; step >= 0; --step) {
    for (int k = 0; k <= step; ++k) {
      const double cont = prob * value[k + 1] + (1.0 - prob) * value[k];
      const double y = y0 * std::pow(up, 2 * k - step);
      value[k] = std::max(cont, std::max(y - tree.strike, 0.0));
    }
  }
  return value[0];
}

/// Forward-Euler solve of the obstacle problem on a tiny lattice with
/// node-wise projection onto the payoff. The explicit CFL bound
/// dtheta <= dx^2 / c^2 and the 51 x 2000 size cap are enforced.
inline Surface explicit_fd_small(const GridSpec& grid, const ModelParams& p,
                                 double payoff_scale = 1.0) {
  validate_params(p);
  validate_grid(grid, p.strike);
  if (grid.n_x > 51 || grid.n_theta > 2000)
    throw validation_error("explicit oracle: lattice larger than 51 x 2000");
  const double dx = grid.dx(), dth = grid.dtheta();
  if (dth > dx * dx / (p.c * p.c))
    throw validation_error("explicit oracle: CFL violated, need dtheta <= dx^2/c^2");

  const std::size_t n = grid.n_x;
  const double q = p.effective_drift() - 0.5 * p.c * p.c;
  const double half_c2 = 0.5 * p.c * p.c;
  const double gcoef = p.gradient_coeff();
  const double flux_right = payoff_scale * std::exp(grid.x_max);

  std::vector<double> obstacle(n);
  for (std::size_t i = 0; i < n; ++i)
    obstacle[i] = payoff_scale * payoff(grid.x(i), p.strike);

  Surface u(grid);
  std::copy(obstacle.begin(), obstacle.end(), u.row(0).begin());
  std::vector<double> cur(obstacle), next(n);
  for (std::size_t j = 1; j <= grid.n_theta; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      double g1, g2;
      if (i == 0) {
        g1 = 0.0;
        g2 = (2.0 * cur[1] - 2.0 * cur[0]) / (dx * dx);
      } else if (i == n - 1) {
        g1 = flux_right;
        g2 = (2.0 * cur[n - 2] - 2.0 * cur[n - 1] + 2.0 * dx * flux_right) / (dx * dx);
      } else {
        g1 = (cur[i + 1] - cur[i - 1]) / (2.0 * dx);
        g2 = (cur[i - 1] - 2.0 * cur[i] + cur[i + 1]) / (dx * dx);
      }
      const double lv = half_c2 * g2 + q * g1 - 0.5 * gcoef * g1 * g1;
      next[i] = std::max(cur[i] + dth * lv, obstacle[i]);
    }
    std::copy(next.begin(), next.end(), u.row(j).begin());
    cur.swap(next);
  }
  if (!u.all_finite()) throw solver_error("explicit oracle produced non-finite values");
  return u;
}

/// Re-solve callback used by the probe; payoff scale n solves the problem
/// with obstacle and initial condition n (e^x - K)^+.
using SolveFn = std::function<Surface(const ModelParams&, double /*payoff_scale*/)>;

struct ProbeBumps {
  double gamma_up = 2.0;
  double lambda_up = 0.6;
  double b_up = 0.10;
};

struct ProbeEntry {
  std::string name;
  double max_violation = 0.0;  ///< positive means the ordering failed there
  double slack = 0.0;
  bool pass = false;
  std::size_t worst_row = 0, worst_col = 0;
};

struct ProbeReport {
  std::vector<ProbeEntry> entries;
  bool all_pass = true;
};

/// Checks the parameter monotonicities (price falls in gamma and lambda,
/// rises in b) and payoff sublinearity 2 P[g] >= P[2g] node-wise on the inner
/// 80% window, with slack 10 (dx + dtheta).
inline ProbeReport monotonicity_probe(const ModelParams& p, const ProbeBumps& bumps,
                                      const GridSpec& grid, const SolveFn& solve) {
  validate_params(p);
  if (!(bumps.gamma_up > p.gamma) || !(bumps.lambda_up > p.lambda) || !(bumps.b_up > p.b))
    throw validation_error("probe: bumps must move each parameter up");
  {
    ModelParams check = p;
    check.gamma = bumps.gamma_up;
    validate_params(check);
    check = p;
    check.lambda = bumps.lambda_up;
    validate_params(check);
  }

  const double slack = 10.0 * (grid.dx() + grid.dtheta());
  const std::size_t lo = grid.n_x / 10, hi = grid.n_x - grid.n_x / 10;

  Surface base = solve(p, 1.0);

  // sign = +1 checks "bumped <= base + slack", -1 checks "bumped >= base - slack"
  auto compare = [&](const std::string& name, const Surface& a, const Surface& b,
                     double sign) {
    ProbeEntry e;
    e.name = name;
    e.slack = slack;
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < a.rows(); ++j)
      for (std::size_t i = lo; i < hi; ++i) {
        const double viol = sign * (a.at(j, i) - b.at(j, i));
        if (viol > worst) {
          worst = viol;
          e.worst_row = j;
          e.worst_col = i;
        }
      }
    e.max_violation = worst;
    e.pass = worst <= slack;
    return e;
  };

  ProbeReport report;
  {
    ModelParams q = p;
    q.gamma = bumps.gamma_up;
    report.entries.push_back(compare("price non-increasing in gamma", solve(q, 1.0), base, +1.0));
  }
  {
    ModelParams q = p;
    q.lambda = bumps.lambda_up;
    report.entries.push_back(compare("price non-increasing in lambda", solve(q, 1.0), base, +1.0));
  }
  {
    ModelParams q = p;
    q.b = bumps.b_up;
    report.entries.push_back(compare("price non-decreasing in b", solve(q, 1.0), base, -1.0));
  }
  {
    Surface doubled = solve(p, 2.0);
    Surface twice_base = base;
    for (std::size_t j = 0; j < twice_base.rows(); ++j)
      for (std::size_t i = 0; i < twice_base.cols(); ++i) twice_base.at(j, i) *= 2.0;
    report.entries.push_back(
        compare("sublinear payoff scaling 2P[g] >= P[2g]", doubled, twice_base, +1.0));
  }
  for (const auto& e : report.entries) report.all_pass = report.all_pass && e.pass;
  return report;
}

}  // namespace indiff
