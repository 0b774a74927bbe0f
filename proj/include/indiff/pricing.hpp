#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "indiff/model.hpp"
#include "indiff/vi.hpp"

namespace indiff {

/// Exponential forward criterion U_t(w) = -exp(-gamma w + lambda^2 t / 2).
inline double forward_performance(double w, double t, const ModelParams& p) {
  return -std::exp(-p.gamma * w + 0.5 * p.lambda * p.lambda * t);
}

inline double forward_performance_inverse(double u, double t, const ModelParams& p) {
  if (!(u < 0.0)) throw validation_error("forward performance is negative; cannot invert " +
                                         std::to_string(u));
  return -(std::log(-u) - 0.5 * p.lambda * p.lambda * t) / p.gamma;
}

/// Boundary query result; censored means the contact set left the lattice at
/// that time and no location is fabricated.
struct BoundaryPoint {
  double y_star = 0.0;
  bool censored = false;
};

/// Priced model: the obstacle-problem solution in normalized coordinates plus
/// the transforms that map queries back to currency units.
///
/// Internally everything is a dimensionless multiple of the strike: the
/// lattice lives in x = ln(y/K), the solve uses strike 1 with risk aversion
/// gamma K (payoff scaling moves gamma), and K re-enters only here at query
/// time. P(y,t) = K u(ln(y/K), T-t).
class PriceModel {
 public:
  PriceModel(ModelParams params, ViSolution vi, FreeBoundary boundary)
      : params_(params),
        vi_(std::move(vi)),
        boundary_(std::move(boundary)),
        gradient_(vi_.surface.grid()) {
    const GridSpec& g = vi_.surface.grid();
    const double dx = g.dx();
    for (std::size_t j = 0; j < vi_.surface.rows(); ++j) {
      auto row = vi_.surface.row(j);
      gradient_.at(j, 0) = (-3.0 * row[0] + 4.0 * row[1] - row[2]) / (2.0 * dx);
      for (std::size_t i = 1; i + 1 < g.n_x; ++i)
        gradient_.at(j, i) = (row[i + 1] - row[i - 1]) / (2.0 * dx);
      gradient_.at(j, g.n_x - 1) =
          (3.0 * row[g.n_x - 1] - 4.0 * row[g.n_x - 2] + row[g.n_x - 3]) / (2.0 * dx);
    }
  }

  const ModelParams& params() const { return params_; }
  const ViSolution& vi() const { return vi_; }
  const FreeBoundary& boundary() const { return boundary_; }
  const Surface& log_gradient() const { return gradient_; }

  /// Indifference price P(y,t); w never enters.
  double price(double y, double t) const {
    auto [xh, th] = normalized_query(y, t);
    return params_.strike * vi_.surface.interpolate(xh, th);
  }

  /// y dP/dy, read off the log-space gradient without differencing an
  /// interpolant.
  double spot_gradient(double y, double t) const {
    auto [xh, th] = normalized_query(y, t);
    return params_.strike * gradient_.interpolate(xh, th);
  }

  std::pair<double, double> normalized_query(double y, double t) const {
    auto [x, th] = to_forward(y, t, params_);
    return {x - std::log(params_.strike), th};
  }

 private:
  ModelParams params_;
  ViSolution vi_;
  FreeBoundary boundary_;
  Surface gradient_;
};

/// Strike-normalized counterpart of (params, lattice): prices become
/// multiples of K via x -> ln(y/K), strike -> 1, gamma -> gamma K.
inline std::pair<ModelParams, GridSpec> normalized_problem(const ModelParams& p,
                                                           const GridSpec& grid) {
  validate_params(p);
  if (std::abs(grid.theta_max - p.maturity) > 1e-12 * (1.0 + p.maturity))
    throw validation_error("pricing: lattice horizon must equal the maturity");
  GridSpec normalized = grid;
  const double lk = std::log(p.strike);
  normalized.x_min -= lk;
  normalized.x_max -= lk;
  ModelParams pn = p;
  pn.strike = 1.0;
  pn.gamma = p.gamma * p.strike;
  return {pn, snap_to_strike(normalized, 1.0)};
}

/// Runs the normalized obstacle solve and wraps it for querying. The lattice
/// is given in log price around ln K; theta_max must equal the maturity.
inline PriceModel build_price_model(const ModelParams& p, const GridSpec& grid,
                                    std::vector<ViScheduleItem> schedule = {}) {
  auto [pn, normalized] = normalized_problem(p, grid);
  ViSolution vi = solve_vi_penalty(normalized, pn, std::move(schedule));
  FreeBoundary fb = extract_boundary(vi, pn);
  return PriceModel(p, std::move(vi), std::move(fb));
}

inline double indifference_price(double y, double t, const PriceModel& model) {
  return model.price(y, t);
}

/// V(w,y,t) = U_t(w + P(y,t)).
inline double value_function(const ValueQuery& q, const PriceModel& model) {
  return forward_performance(q.w + model.price(q.y, q.t), q.t, model.params());
}

/// Optimal cash position in the traded asset,
/// pi* = -(rho c / sigma) y dP/dy + lambda / (sigma gamma).
inline double hedge_ratio(double y, double t, const PriceModel& model) {
  const ModelParams& p = model.params();
  const double merton = p.lambda / (p.sigma * p.gamma);
  if (p.rho == 0.0) return merton;
  return -(p.rho * p.c / p.sigma) * model.spot_gradient(y, t) + merton;
}

/// Exercise threshold y*(t) = e^{s(T-t)} in currency units.
inline BoundaryPoint exercise_boundary(double t, const PriceModel& model) {
  const ModelParams& p = model.params();
  if (t < 0.0 || t >= p.maturity)
    throw validation_error("exercise boundary defined for t in [0, maturity)");
  const double th = p.maturity - t;
  const FreeBoundary& fb = model.boundary();

  // piecewise-linear in theta with the limit value x0 prepended at theta = 0
  double s_hat;
  bool censored = false;
  if (fb.theta.empty() || th <= fb.theta.front()) {
    const double th1 = fb.theta.empty() ? th : fb.theta.front();
    const double s1 = fb.theta.empty() ? fb.x0 : fb.s.front();
    censored = !fb.censored.empty() && fb.censored.front() != 0;
    const double w = th1 > 0.0 ? th / th1 : 0.0;
    s_hat = (1.0 - w) * fb.x0 + w * s1;
  } else {
    std::size_t k = 1;
    while (k < fb.theta.size() && fb.theta[k] < th) ++k;
    if (k >= fb.theta.size()) k = fb.theta.size() - 1;
    censored = fb.censored[k - 1] != 0 || fb.censored[k] != 0;
    const double w = (th - fb.theta[k - 1]) / (fb.theta[k] - fb.theta[k - 1]);
    s_hat = (1.0 - w) * fb.s[k - 1] + w * fb.s[k];
  }
  return {p.strike * std::exp(s_hat), censored};
}

}  // namespace indiff
