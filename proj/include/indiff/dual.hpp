#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "indiff/model.hpp"
#include "indiff/pricing.hpp"

namespace indiff {

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Piecewise-constant control phi on (log-price, theta) buckets; lookups are
/// nearest-bucket and clamp to the table edges.
struct DualControl {
  GridSpec grid;               ///< bucket lattice in log price x theta
  std::vector<double> values;  ///< (n_theta+1) x n_x
  std::string description;

  static DualControl constant(double value, double theta_max) {
    DualControl c;
    c.grid = GridSpec{-1.0, 1.0, 3, 1, theta_max};
    c.values.assign(2 * 3, value);
    c.description = "constant " + std::to_string(value);
    return c;
  }

  /// First-order-condition control gamma c sqrt(1-rho^2) y dP/dy read off the
  /// solver gradient, bucketed on the pricing lattice.
  static DualControl plugin(const PriceModel& model) {
    const ModelParams& p = model.params();
    const GridSpec& g = model.log_gradient().grid();
    DualControl c;
    c.grid = g;
    c.grid.x_min += std::log(p.strike);
    c.grid.x_max += std::log(p.strike);
    c.values.resize(model.log_gradient().rows() * g.n_x);
    const double coef = p.gamma * p.c * std::sqrt(1.0 - p.rho * p.rho) * p.strike;
    for (std::size_t j = 0; j < model.log_gradient().rows(); ++j)
      for (std::size_t i = 0; i < g.n_x; ++i)
        c.values[j * g.n_x + i] = coef * model.log_gradient().at(j, i);
    c.description = "plugin gradient control";
    return c;
  }

  double eval(double y, double theta) const {
    const double x = std::log(y);
    const std::size_t i = grid.nearest_index(x);
    double rt = theta / grid.dtheta();
    if (rt < 0.0) rt = 0.0;
    const double max_j = static_cast<double>(grid.n_theta);
    if (rt > max_j) rt = max_j;
    const std::size_t j = static_cast<std::size_t>(std::llround(rt));
    return values[j * grid.n_x + i];
  }
};

/// Exercise rule used by the simulation.
struct StoppingRule {
  enum class Kind { immediate, at_maturity, boundary };
  Kind kind = Kind::at_maturity;
  // boundary samples in forward time, currency units; +infinity when censored
  std::vector<double> theta;
  std::vector<double> y_star;
  double y_star_theta0 = 0.0;  ///< short-maturity limit e^{x0}

  static StoppingRule immediate() { return {Kind::immediate, {}, {}, 0.0}; }
  static StoppingRule at_maturity() { return {Kind::at_maturity, {}, {}, 0.0}; }

  static StoppingRule from_model(const PriceModel& model) {
    const FreeBoundary& fb = model.boundary();
    const double strike = model.params().strike;
    StoppingRule r;
    r.kind = Kind::boundary;
    r.theta = fb.theta;
    r.y_star.resize(fb.s.size());
    for (std::size_t k = 0; k < fb.s.size(); ++k)
      r.y_star[k] = fb.censored[k] ? std::numeric_limits<double>::infinity()
                                   : strike * std::exp(fb.s[k]);
    r.y_star_theta0 = strike * std::exp(fb.x0);
    return r;
  }

  /// Exercise threshold at forward time theta (+infinity where censored or
  /// for the maturity-only rule).
  double threshold(double th) const {
    if (kind != Kind::boundary) return std::numeric_limits<double>::infinity();
    if (th <= 0.0 || theta.empty()) return y_star_theta0;
    if (th <= theta.front()) {
      if (!std::isfinite(y_star.front())) return std::numeric_limits<double>::infinity();
      const double w = th / theta.front();
      return (1.0 - w) * y_star_theta0 + w * y_star.front();
    }
    std::size_t k = 1;
    while (k < theta.size() && theta[k] < th) ++k;
    if (k >= theta.size()) return y_star.back();
    if (!std::isfinite(y_star[k - 1]) || !std::isfinite(y_star[k]))
      return std::numeric_limits<double>::infinity();
    const double w = (th - theta[k - 1]) / (theta[k] - theta[k - 1]);
    return (1.0 - w) * y_star[k - 1] + w * y_star[k];
  }
};

struct McSettings {
  std::size_t n_paths = 100000;
  std::size_t n_steps = 400;
  std::uint64_t seed = 12345;
};

/// Simulated batch of controlled spot paths.
struct PathBatch {
  double y0 = 0.0;
  double dt = 0.0;
  std::size_t n_steps = 0;
  std::vector<double> paths;  ///< n_paths x (n_steps+1), row-major

  double at(std::size_t path, std::size_t step) const {
    return paths[path * (n_steps + 1) + step];
  }
  std::size_t n_paths() const { return n_steps == 0 ? 0 : paths.size() / (n_steps + 1); }
};

namespace detail {

/// Walks one controlled path with exact lognormal increments per step; the
/// control is evaluated at step starts. visit(k, t, y, phi) returns false to
/// stop the walk early. Returns the spot at the last visited time (maturity
/// when never stopped).
template <typename Engine, typename Visit>
inline double walk_path(Engine& eng, double y0, const DualControl& phi,
                        const ModelParams& p, std::size_t n_steps, Visit&& visit) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double dt = p.maturity / static_cast<double>(n_steps);
  const double root_dt = std::sqrt(dt);
  const double orth = p.c * std::sqrt(1.0 - p.rho * p.rho);
  double x = std::log(y0);
  for (std::size_t k = 0; k < n_steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    const double y = std::exp(x);
    const double f = phi.eval(y, p.maturity - t);
    if (!visit(k, t, y, f)) return y;
    const double drift = p.b - p.c * p.rho * p.lambda - orth * f;
    x += (drift - 0.5 * p.c * p.c) * dt + p.c * root_dt * normal(eng);
  }
  return std::exp(x);
}

}  // namespace detail

/// Log-Euler paths of the controlled spot; deterministic in (seed, path index)
/// so partitioning cannot change the draws.
inline PathBatch simulate_y_under_control(double y0, const DualControl& phi,
                                          const ModelParams& p, std::size_t n_paths,
                                          std::size_t n_steps, std::uint64_t seed) {
  if (!(y0 > 0.0)) throw validation_error("simulate: spot must be positive");
  if (n_steps < 1) throw validation_error("simulate: need at least one step");
  PathBatch batch;
  batch.y0 = y0;
  batch.n_steps = n_steps;
  batch.dt = p.maturity / static_cast<double>(n_steps);
  batch.paths.resize(n_paths * (n_steps + 1));
  for (std::size_t path = 0; path < n_paths; ++path) {
    std::mt19937_64 eng(detail::mix64(seed + path));
    double* row = batch.paths.data() + path * (n_steps + 1);
    const double terminal = detail::walk_path(
        eng, y0, phi, p, n_steps, [&](std::size_t k, double, double y, double) {
          row[k] = y;
          return true;
        });
    row[n_steps] = terminal;
  }
  return batch;
}

/// MC average of (1/2) int_0^tau phi^2 along stored paths.
inline double entropy_penalty(const DualControl& phi, const PathBatch& batch,
                              const StoppingRule& rule, const ModelParams& p) {
  if (batch.n_paths() == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t path = 0; path < batch.n_paths(); ++path) {
    if (rule.kind == StoppingRule::Kind::immediate) continue;
    double h = 0.0;
    for (std::size_t k = 0; k < batch.n_steps; ++k) {
      const double t = static_cast<double>(k) * batch.dt;
      const double y = batch.at(path, k);
      if (rule.kind == StoppingRule::Kind::boundary &&
          y >= rule.threshold(p.maturity - t))
        break;
      const double f = phi.eval(y, p.maturity - t);
      h += 0.5 * f * f * batch.dt;
    }
    acc += h;
  }
  return acc / static_cast<double>(batch.n_paths());
}

/// Payoff-plus-entropy estimate of the dual objective.
struct DualEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_paths = 0;
  double payoff_term = 0.0;
  double entropy_term = 0.0;  ///< already divided by gamma
};

/// E[g(Y_tau)] + (1/gamma) E[(1/2) int_0^tau phi^2] under the controlled
/// dynamics, with the pooled standard error of the per-path totals.
inline DualEstimate dual_value(double y0, const DualControl& phi, const StoppingRule& rule,
                               const ModelParams& p, const McSettings& mc) {
  if (!(y0 > 0.0)) throw validation_error("dual: spot must be positive");
  DualEstimate est;
  est.n_paths = mc.n_paths;

  if (rule.kind == StoppingRule::Kind::immediate) {
    est.value = est.payoff_term = std::max(y0 - p.strike, 0.0);
    return est;
  }
  if (mc.n_paths == 0 || mc.n_steps == 0)
    throw validation_error("dual: need paths and steps");

  double sum = 0.0, sum_sq = 0.0, sum_payoff = 0.0, sum_entropy = 0.0;
  const double dt = p.maturity / static_cast<double>(mc.n_steps);
  for (std::size_t path = 0; path < mc.n_paths; ++path) {
    std::mt19937_64 eng(detail::mix64(mc.seed + path));
    double entropy = 0.0;
    const double y_stop = detail::walk_path(
        eng, y0, phi, p, mc.n_steps, [&](std::size_t, double t, double y, double f) {
          if (rule.kind == StoppingRule::Kind::boundary &&
              y >= rule.threshold(p.maturity - t))
            return false;
          entropy += 0.5 * f * f * dt;
          return true;
        });
    const double pay = std::max(y_stop - p.strike, 0.0);
    const double total = pay + entropy / p.gamma;
    sum += total;
    sum_sq += total * total;
    sum_payoff += pay;
    sum_entropy += entropy / p.gamma;
  }
  const double n = static_cast<double>(mc.n_paths);
  est.value = sum / n;
  est.payoff_term = sum_payoff / n;
  est.entropy_term = sum_entropy / n;
  const double var = std::max(sum_sq / n - est.value * est.value, 0.0);
  est.std_error = std::sqrt(var / n);
  return est;
}

}  // namespace indiff
