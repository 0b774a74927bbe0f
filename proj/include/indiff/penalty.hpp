#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "indiff/model.hpp"
#include "indiff/tridiag.hpp"

namespace indiff {

/// Settings of one penalized solve: smoothing width epsilon, truncation
/// half-width N, penalty floor C0 and Newton controls.
struct PenaltySettings {
  double epsilon = 1e-2;      ///< penalty / obstacle smoothing parameter
  double n_trunc = 4.0;       ///< truncation half-width N, domain (-N, N)
  std::optional<double> c0_override;  ///< penalty floor; derived from N when unset
  /// Residual sup-norm tolerance per step. Each node residual is scaled by
  /// its diagonal weight 1/dtheta + c^2/dx^2 + beta', so the tolerance is in
  /// solution units and stays meaningful where the penalty is stiff.
  double newton_tol = 1e-12;
  int newton_max_iter = 30;
};

/// Floor constant of the penalty term on the truncated domain,
/// C0 = rho c lambda e^N + (1/2) gamma (1-rho^2) c^2 e^{2N}.
inline double c0_for_truncation(double n_trunc, const ModelParams& p) {
  if (!(n_trunc >= 0.0)) throw validation_error("penalty: truncation width must be non-negative");
  if (2.0 * n_trunc > 700.0)
    throw validation_error("penalty: truncation width overflows e^{2N}");
  const double en = std::exp(n_trunc);
  return p.rho * p.c * p.lambda * en + 0.5 * p.gradient_coeff() * en * en;
}

/// Realized penalty family.
///
/// beta(t) = -C0 exp(-C0 t / eps): C^2, non-positive, non-decreasing, concave,
/// beta(0) = -C0, and for fixed t<0 it diverges to -infinity as eps -> 0. The
/// C0 factor in the rate keeps the stationary obstacle gap at O(eps/C0) even
/// when the truncation makes C0 large. Beyond exponent 40 the branch switches
/// to a C^1 linear continuation, which keeps Newton arithmetic finite.
///
/// pi(t) smooths the positive part: t above eps, 0 below -eps, and the C^1
/// quadratic (t+eps)^2/(4 eps) in between, so 0 <= pi' <= 1 and pi'' >= 0.
struct PenaltyShape {
  double c0 = 0.0;
  double epsilon = 0.0;

  static constexpr double kExpCap = 40.0;

  PenaltyShape(double c0_, double epsilon_) : c0(c0_), epsilon(epsilon_) {
    if (!(epsilon > 0.0)) throw validation_error("penalty: epsilon must be positive");
    if (!(c0 >= 0.0) || !std::isfinite(c0))
      throw validation_error("penalty: C0 must be finite and non-negative");
  }

  struct Eval {
    double value;
    double derivative;
  };

  Eval beta(double t) const {
    if (c0 == 0.0) return {0.0, 0.0};
    const double rate = c0 / epsilon;
    const double z = rate * t;
    if (z >= -kExpCap) {
      const double e = std::exp(-z);
      return {-c0 * e, c0 * rate * e};
    }
    const double e = std::exp(kExpCap);
    return {-c0 * e * (1.0 - z - kExpCap), c0 * rate * e};
  }

  double pi(double t) const {
    if (t >= epsilon) return t;
    if (t <= -epsilon) return 0.0;
    const double s = t + epsilon;
    return s * s / (4.0 * epsilon);
  }

  double pi_prime(double t) const {
    if (t >= epsilon) return 1.0;
    if (t <= -epsilon) return 0.0;
    return (t + epsilon) / (2.0 * epsilon);
  }
};

/// Shape for the problem with obstacle n (e^x - K)^+: the derived floor picks
/// up one factor of n on the drift part and two on the squared-gradient part,
/// matching the subsolution computation for the scaled obstacle.
inline PenaltyShape make_shape(const PenaltySettings& s, const ModelParams& p,
                               double payoff_scale = 1.0) {
  double c0;
  if (s.c0_override) {
    c0 = *s.c0_override;
  } else {
    ModelParams scaled = p;
    scaled.gamma *= payoff_scale;
    c0 = payoff_scale * c0_for_truncation(s.n_trunc, scaled);
  }
  return PenaltyShape(c0, s.epsilon);
}

/// (value, derivative) of the realized beta_eps.
inline std::pair<double, double> beta_eps(double t, const PenaltySettings& s,
                                          const ModelParams& p) {
  const auto e = make_shape(s, p).beta(t);
  return {e.value, e.derivative};
}

/// Smoothed positive part pi_eps.
inline double pi_eps(double t, double epsilon) {
  return PenaltyShape(0.0, epsilon).pi(t);
}

/// Constant k of the comparison barrier
/// k theta + x^2 + e^{x + (b - rho c lambda)^+ theta} + 1.
inline double growth_constant(const ModelParams& p, double payoff_scale = 1.0) {
  const double q = p.effective_drift() - 0.5 * p.c * p.c;
  const double g2 = payoff_scale * p.gradient_coeff();
  const double mplus = std::max(p.effective_drift(), 0.0);
  const double a = q * q;
  const double bb = g2 * std::exp(mplus * p.maturity) - q;
  return p.c * p.c + std::max(a, bb * bb) / (2.0 * g2);
}

/// Upper comparison barrier for the solution with payoff scale n.
inline double upper_barrier(double x, double theta, const ModelParams& p,
                            double payoff_scale = 1.0) {
  const double mplus = std::max(p.effective_drift(), 0.0);
  const double k = growth_constant(p, payoff_scale);
  return payoff_scale * (k * theta + x * x + std::exp(x + mplus * theta) + 1.0);
}

/// Per-step Newton statistics.
struct StepStats {
  int iterations = 0;
  double residual = 0.0;       ///< final sup-norm residual
  double prev_residual = 0.0;  ///< residual before the last update
};

namespace detail {

/// Implicit-Euler stepper for the penalized quasi-linear equation
///
///   dv/dtheta = (c^2/2) v_xx + q v_x - (G/2) (v_x)^2 - beta(v - pi(n(e^x-K)))
///
/// with q = b - rho c lambda - c^2/2 and G = gamma (1-rho^2) c^2, Neumann data
/// v_x = 0 on the left and v_x = n e^{x_max} on the right imposed through
/// second-order ghost-node elimination. Each step is solved by damped Newton
/// with the analytic Jacobian (the squared gradient is linearized at the
/// current iterate).
class PenaltyStepper {
 public:
  PenaltyStepper(const GridSpec& grid, const PenaltySettings& settings,
                 const ModelParams& p, double payoff_scale)
      : shape_(make_shape(settings, p, payoff_scale)),
        n_(grid.n_x),
        dx_(grid.dx()),
        q_(p.effective_drift() - 0.5 * p.c * p.c),
        half_c2_(0.5 * p.c * p.c),
        gcoef_(p.gradient_coeff()),
        tol_(settings.newton_tol),
        max_iter_(settings.newton_max_iter),
        flux_right_(payoff_scale * std::exp(grid.x_max)),
        obstacle_(grid.n_x),
        lower_(grid.n_x - 1),
        diag_(grid.n_x),
        upper_(grid.n_x - 1),
        rhs_(grid.n_x),
        trial_(grid.n_x),
        scratch_(grid.n_x),
        weights_(grid.n_x),
        trial_f_(grid.n_x),
        trial_w_(grid.n_x) {
    for (std::size_t i = 0; i < n_; ++i) {
      const double raw = payoff_scale * (std::exp(grid.x(i)) - p.strike);
      obstacle_[i] = shape_.pi(raw);
    }
  }

  std::span<const double> smoothed_obstacle() const { return obstacle_; }

  /// One implicit step of size dtheta from prev into out.
  StepStats step(std::span<const double> prev, double dtheta, std::span<double> out) const {
    std::copy(prev.begin(), prev.end(), out.begin());
    StepStats stats;
    eval_residual(prev, out, dtheta, rhs_, weights_);
    double res = measure(rhs_, weights_);
    for (int iter = 0; iter < max_iter_; ++iter) {
      if (!(std::isfinite(res))) throw solver_error("penalty step: non-finite residual");
      if (res <= tol_) {
        stats.iterations = iter;
        stats.residual = res;
        return stats;
      }
      assemble_jacobian(out, dtheta);
      for (std::size_t i = 0; i < n_; ++i) rhs_[i] = -rhs_[i];
      solve_tridiagonal(lower_, diag_, upper_, rhs_, scratch_);

      // Backtracking against the weights of the current iterate; the weights
      // themselves move with beta', so refreshing them mid-search would make
      // an honest descent direction look like an ascent one.
      double s = 1.0;
      for (int halving = 0; halving < 30; ++halving) {
        for (std::size_t i = 0; i < n_; ++i) trial_[i] = out[i] + s * rhs_[i];
        eval_residual(prev, trial_, dtheta, trial_f_, trial_w_);
        const double res_frozen = measure(trial_f_, weights_);
        if (std::isfinite(res_frozen) && res_frozen <= (1.0 - 0.5 * s) * res) break;
        s *= 0.5;
      }
      std::copy(trial_.begin(), trial_.end(), out.begin());
      std::swap(rhs_, trial_f_);
      std::swap(weights_, trial_w_);
      stats.prev_residual = res;
      res = measure(rhs_, weights_);
      stats.iterations = iter + 1;
      stats.residual = res;
      if (res <= tol_) return stats;
    }
    if (res <= tol_) return stats;
    throw solver_error("penalty step: Newton failed to reach tolerance (residual " +
                       std::to_string(res) + ")");
  }

 private:
  double d1(std::span<const double> v, std::size_t i) const {
    if (i == 0) return 0.0;
    if (i == n_ - 1) return flux_right_;
    return (v[i + 1] - v[i - 1]) / (2.0 * dx_);
  }

  double d2(std::span<const double> v, std::size_t i) const {
    const double dx2 = dx_ * dx_;
    if (i == 0) return (2.0 * v[1] - 2.0 * v[0]) / dx2;
    if (i == n_ - 1) return (2.0 * v[n_ - 2] - 2.0 * v[n_ - 1] + 2.0 * dx_ * flux_right_) / dx2;
    return (v[i - 1] - 2.0 * v[i] + v[i + 1]) / dx2;
  }

  /// F_i(v) = (v_i - prev_i)/dtheta - L_h v + beta(v_i - obstacle_i). Fills the
  /// raw residual and the diagonal weights 1 / (1/dtheta + c^2/dx^2 + beta'_i)
  /// that convert it to solution units.
  void eval_residual(std::span<const double> prev, std::span<const double> v, double dtheta,
                     std::vector<double>& f_out, std::vector<double>& w_out) const {
    const double base_diag = 1.0 / dtheta + 2.0 * half_c2_ / (dx_ * dx_);
    for (std::size_t i = 0; i < n_; ++i) {
      const double g1 = d1(v, i);
      const double lv = half_c2_ * d2(v, i) + q_ * g1 - 0.5 * gcoef_ * g1 * g1;
      const auto be = shape_.beta(v[i] - obstacle_[i]);
      f_out[i] = (v[i] - prev[i]) / dtheta - lv + be.value;
      w_out[i] = 1.0 / (base_diag + be.derivative);
    }
  }

  static double measure(const std::vector<double>& f, const std::vector<double>& w) {
    double sup = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) sup = std::max(sup, std::abs(f[i]) * w[i]);
    return sup;
  }

  void assemble_jacobian(std::span<const double> v, double dtheta) const {
    const double dx2 = dx_ * dx_;
    const double inv_dt = 1.0 / dtheta;
    for (std::size_t i = 0; i < n_; ++i) {
      const double bprime = shape_.beta(v[i] - obstacle_[i]).derivative;
      if (i == 0) {
        diag_[0] = inv_dt + 2.0 * half_c2_ / dx2 + bprime;
        upper_[0] = -2.0 * half_c2_ / dx2;
      } else if (i == n_ - 1) {
        diag_[i] = inv_dt + 2.0 * half_c2_ / dx2 + bprime;
        lower_[i - 1] = -2.0 * half_c2_ / dx2;
      } else {
        const double g1 = d1(v, i);
        const double conv = (q_ - gcoef_ * g1) / (2.0 * dx_);
        lower_[i - 1] = -half_c2_ / dx2 + conv;
        diag_[i] = inv_dt + 2.0 * half_c2_ / dx2 + bprime;
        upper_[i] = -half_c2_ / dx2 - conv;
      }
    }
  }

  PenaltyShape shape_;
  std::size_t n_;
  double dx_, q_, half_c2_, gcoef_, tol_;
  int max_iter_;
  double flux_right_;
  std::vector<double> obstacle_;
  mutable std::vector<double> lower_, diag_, upper_, rhs_, trial_, scratch_;
  mutable std::vector<double> weights_, trial_f_, trial_w_;
};

}  // namespace detail

/// One implicit-Euler row update of the penalized equation.
inline std::vector<double> step_penalized(std::span<const double> prev_row, double dtheta,
                                          const GridSpec& grid, const PenaltySettings& settings,
                                          const ModelParams& p, double payoff_scale = 1.0,
                                          StepStats* stats = nullptr) {
  for (double v : prev_row)
    if (!std::isfinite(v)) throw validation_error("step_penalized: previous row not finite");
  detail::PenaltyStepper stepper(grid, settings, p, payoff_scale);
  std::vector<double> out(prev_row.size());
  StepStats st = stepper.step(prev_row, dtheta, out);
  if (stats) *stats = st;
  return out;
}

/// Measured margins of the comparison bounds on a penalized surface.
struct PenaltyBoundReport {
  double max_lower_violation = 0.0;  ///< max (pi_eps(obstacle) - u)
  double max_upper_violation = 0.0;  ///< max (u - barrier)
  double min_gradient = 0.0;         ///< min centered D_x u
  double max_gradient_excess = 0.0;  ///< max (D_x u - scale e^{x+(m)^+ theta})
  double min_theta_increment = 0.0;  ///< min over nodes of u_{j+1} - u_j
};

/// Verifies the discrete analogues of the lower/upper barriers, the gradient
/// envelope and monotonicity in theta, with slack 10(dx + dtheta) on values
/// and 10 dx on gradients (scaled with the payoff). Violations beyond slack
/// are hard errors.
inline PenaltyBoundReport verify_penalty_bounds(const Surface& u, const ModelParams& p,
                                                const PenaltySettings& settings,
                                                double payoff_scale = 1.0) {
  const GridSpec& g = u.grid();
  const PenaltyShape shape = make_shape(settings, p, payoff_scale);
  const double dx = g.dx(), dth = g.dtheta();
  const double value_slack = 10.0 * (dx + dth) * payoff_scale;
  const double grad_slack = 10.0 * dx * payoff_scale;
  const double mplus = std::max(p.effective_drift(), 0.0);

  PenaltyBoundReport r;
  r.min_gradient = std::numeric_limits<double>::infinity();
  r.min_theta_increment = std::numeric_limits<double>::infinity();
  double worst_lower = -std::numeric_limits<double>::infinity();
  double worst_upper = -std::numeric_limits<double>::infinity();
  double worst_grad = -std::numeric_limits<double>::infinity();

  for (std::size_t j = 0; j < u.rows(); ++j) {
    const double theta = g.theta(j);
    auto row = u.row(j);
    for (std::size_t i = 0; i < g.n_x; ++i) {
      const double x = g.x(i);
      const double lo = shape.pi(payoff_scale * (std::exp(x) - p.strike));
      const double hi = upper_barrier(x, theta, p, payoff_scale);
      worst_lower = std::max(worst_lower, lo - row[i]);
      worst_upper = std::max(worst_upper, row[i] - hi);
      if (i > 0 && i + 1 < g.n_x) {
        const double grad = (row[i + 1] - row[i - 1]) / (2.0 * dx);
        const double cap = payoff_scale * std::exp(x + mplus * theta);
        r.min_gradient = std::min(r.min_gradient, grad);
        worst_grad = std::max(worst_grad, grad - cap);
      }
      if (j > 0) r.min_theta_increment = std::min(r.min_theta_increment, row[i] - u.at(j - 1, i));
    }
  }
  r.max_lower_violation = worst_lower;
  r.max_upper_violation = worst_upper;
  r.max_gradient_excess = worst_grad;

  // The floor constant is exactly marginal at the right edge, where the
  // one-sided ghost stencil perturbs the operator by O(dx); the equilibrium
  // there may sit O(eps dx) below the smoothed obstacle (and is approached
  // from above, so the first increments there are slightly negative). The
  // slack absorbs both and the report records the measured values.
  const double mono_tol =
      std::max(1e-10, settings.epsilon * dx) * std::max(1.0, payoff_scale);
  if (r.max_lower_violation > value_slack)
    throw solver_error("penalized solution dips below the smoothed obstacle by " +
                       std::to_string(r.max_lower_violation));
  if (r.max_upper_violation > value_slack)
    throw solver_error("penalized solution exceeds the upper barrier by " +
                       std::to_string(r.max_upper_violation));
  if (r.min_gradient < -grad_slack || r.max_gradient_excess > grad_slack)
    throw solver_error("penalized solution violates the gradient envelope");
  if (r.min_theta_increment < -mono_tol)
    throw solver_error("penalized solution not monotone in theta (min increment " +
                       std::to_string(r.min_theta_increment) + ")");
  return r;
}

/// Full penalized solve with its verification report.
struct PenaltyResult {
  Surface surface;
  std::vector<StepStats> steps;
  PenaltyBoundReport bounds;
};

/// Solves the penalized problem on the whole lattice. The initial row is the
/// smoothed payoff; steps that fail to converge are retried with halved
/// dtheta (up to 16 substeps) before giving up.
inline PenaltyResult solve_penalized(const PenaltySettings& settings, const GridSpec& grid,
                                     const ModelParams& p, double payoff_scale = 1.0) {
  validate_params(p);
  validate_grid(grid, p.strike);
  if (!(payoff_scale > 0.0)) throw validation_error("penalty: payoff scale must be positive");
  if (std::max(std::abs(grid.x_min), std::abs(grid.x_max)) > settings.n_trunc + grid.dx())
    throw validation_error("penalty: lattice extends beyond the truncation width");

  detail::PenaltyStepper stepper(grid, settings, p, payoff_scale);
  PenaltyResult result{Surface(grid), {}, {}};
  auto obstacle = stepper.smoothed_obstacle();
  std::copy(obstacle.begin(), obstacle.end(), result.surface.row(0).begin());

  const double dth = grid.dtheta();
  std::vector<double> work(grid.n_x);

  // Performs 2^depth substeps if a full step stalls.
  auto advance = [&](auto&& self, std::span<const double> prev, double h,
                     std::span<double> out, int depth) -> StepStats {
    try {
      return stepper.step(prev, h, out);
    } catch (const solver_error&) {
      if (depth >= 4) throw;
      std::vector<double> mid(prev.size());
      StepStats a = self(self, prev, 0.5 * h, mid, depth + 1);
      StepStats b = self(self, mid, 0.5 * h, out, depth + 1);
      return StepStats{a.iterations + b.iterations, b.residual, b.prev_residual};
    }
  };

  for (std::size_t j = 1; j <= grid.n_theta; ++j) {
    auto prev = result.surface.row(j - 1);
    StepStats st = advance(advance, prev, dth, result.surface.row(j), 0);
    result.steps.push_back(st);
  }
  if (!result.surface.all_finite())
    throw solver_error("penalized solve produced non-finite values");
  result.bounds = verify_penalty_bounds(result.surface, p, settings, payoff_scale);
  return result;
}

}  // namespace indiff
