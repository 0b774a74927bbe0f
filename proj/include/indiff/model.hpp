#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace indiff {

/// Raised when inputs violate a documented precondition (bad parameters,
/// malformed configs, out-of-window queries). The CLI maps it to exit code 1.
class validation_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a numerical routine fails (non-convergence, non-finite
/// intermediates, envelope violations). The CLI maps it to exit code 2.
class solver_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Market and preference constants.
///
/// The non-traded asset follows dY = b Y dt + c Y (rho dB + sqrt(1-rho^2) dW),
/// the traded one dS = S sigma (lambda dt + dB); gamma is the absolute risk
/// aversion of the exponential forward criterion, strike/maturity describe the
/// American call.
struct ModelParams {
  double b = 0.0;         ///< drift of the non-traded asset (1/time)
  double c = 0.0;         ///< volatility of the non-traded asset (1/sqrt time)
  double rho = 0.0;       ///< correlation, in [0,1)
  double lambda = 0.0;    ///< Sharpe ratio of the traded asset
  double sigma = 0.0;     ///< volatility of the traded asset
  double gamma = 0.0;     ///< absolute risk aversion
  double strike = 0.0;    ///< call strike K
  double maturity = 0.0;  ///< horizon T

  /// Drift of the non-traded asset under the minimal martingale measure.
  double effective_drift() const { return b - rho * c * lambda; }

  /// Coefficient of the squared-gradient term, gamma (1-rho^2) c^2.
  double gradient_coeff() const { return gamma * (1.0 - rho * rho) * c * c; }
};

/// Checks positivity constraints and the incomplete-market requirement
/// rho in [0,1). Returns its argument unchanged when everything holds.
inline const ModelParams& validate_params(const ModelParams& p) {
  if (!(p.c > 0.0)) throw validation_error("model: c must be positive");
  if (!(p.sigma > 0.0)) throw validation_error("model: sigma must be positive");
  if (!(p.gamma > 0.0)) throw validation_error("model: gamma must be positive");
  if (!(p.strike > 0.0)) throw validation_error("model: strike must be positive");
  if (!(p.maturity > 0.0)) throw validation_error("model: maturity must be positive");
  if (p.rho < 0.0) throw validation_error("model: rho must be non-negative");
  if (p.rho >= 1.0)
    throw validation_error(
        "model: rho = 1 complete market excluded (price reduces to a "
        "Black-Scholes problem); require rho in [0,1)");
  if (!std::isfinite(p.b) || !std::isfinite(p.lambda))
    throw validation_error("model: b and lambda must be finite");
  return p;
}

/// Uniform lattice in log price x and forward time theta = T - t.
struct GridSpec {
  double x_min = 0.0;
  double x_max = 0.0;
  std::size_t n_x = 0;      ///< spatial node count (>= 3)
  std::size_t n_theta = 0;  ///< number of time steps (>= 1)
  double theta_max = 0.0;   ///< forward-time horizon

  double dx() const { return (x_max - x_min) / static_cast<double>(n_x - 1); }
  double dtheta() const { return theta_max / static_cast<double>(n_theta); }
  double x(std::size_t i) const { return x_min + static_cast<double>(i) * dx(); }
  double theta(std::size_t j) const { return static_cast<double>(j) * dtheta(); }

  bool contains(double xq, double thq) const {
    const double sx = 1e-12 * (1.0 + std::abs(x_max) + std::abs(x_min));
    const double st = 1e-12 * (1.0 + theta_max);
    return xq >= x_min - sx && xq <= x_max + sx && thq >= -st && thq <= theta_max + st;
  }

  std::size_t nearest_index(double xq) const {
    double r = (xq - x_min) / dx();
    if (r < 0.0) r = 0.0;
    const auto last = static_cast<double>(n_x - 1);
    if (r > last) r = last;
    return static_cast<std::size_t>(std::llround(r));
  }
};

inline const GridSpec& validate_grid(const GridSpec& g, double strike) {
  if (g.n_x < 3) throw validation_error("grid: need at least 3 spatial nodes");
  if (g.n_theta < 1) throw validation_error("grid: need at least 1 time step");
  if (!(g.x_min < g.x_max)) throw validation_error("grid: x_min must be below x_max");
  if (!(g.theta_max > 0.0)) throw validation_error("grid: theta_max must be positive");
  const double lk = std::log(strike);
  if (!(g.x_min < lk && lk < g.x_max))
    throw validation_error("grid: log strike must lie strictly inside [x_min, x_max]");
  return g;
}

/// Shifts the lattice so the payoff kink ln K falls exactly on a node. The
/// shift never exceeds dx/2, and the kink stays strictly interior.
inline GridSpec snap_to_strike(GridSpec g, double strike) {
  const double lk = std::log(strike);
  validate_grid(g, strike);
  const double shift = lk - g.x(g.nearest_index(lk));
  g.x_min += shift;
  g.x_max += shift;
  validate_grid(g, strike);
  return g;
}

/// Scalar field sampled on a GridSpec; row j holds the values at theta_j.
class Surface {
 public:
  Surface() = default;
  explicit Surface(const GridSpec& grid)
      : grid_(grid), values_((grid.n_theta + 1) * grid.n_x, 0.0) {}

  const GridSpec& grid() const { return grid_; }
  std::size_t rows() const { return grid_.n_theta + 1; }
  std::size_t cols() const { return grid_.n_x; }

  double& at(std::size_t j, std::size_t i) { return values_[j * grid_.n_x + i]; }
  double at(std::size_t j, std::size_t i) const { return values_[j * grid_.n_x + i]; }

  std::span<double> row(std::size_t j) {
    return std::span<double>(values_.data() + j * grid_.n_x, grid_.n_x);
  }
  std::span<const double> row(std::size_t j) const {
    return std::span<const double>(values_.data() + j * grid_.n_x, grid_.n_x);
  }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  /// Bilinear interpolation at (x, theta). Queries outside the lattice window
  /// are refused rather than extrapolated.
  double interpolate(double xq, double thq) const {
    if (!grid_.contains(xq, thq))
      throw validation_error("surface: query (" + std::to_string(xq) + ", " +
                             std::to_string(thq) + ") outside lattice window");
    const double dx = grid_.dx(), dth = grid_.dtheta();
    double rx = (xq - grid_.x_min) / dx;
    double rt = thq / dth;
    const double max_i = static_cast<double>(grid_.n_x - 1);
    const double max_j = static_cast<double>(grid_.n_theta);
    rx = std::min(std::max(rx, 0.0), max_i);
    rt = std::min(std::max(rt, 0.0), max_j);
    std::size_t i0 = static_cast<std::size_t>(rx);
    std::size_t j0 = static_cast<std::size_t>(rt);
    if (i0 >= grid_.n_x - 1) i0 = grid_.n_x - 2;
    if (j0 >= grid_.n_theta) j0 = grid_.n_theta - 1;
    const double wx = rx - static_cast<double>(i0);
    const double wt = rt - static_cast<double>(j0);
    return (1.0 - wt) * ((1.0 - wx) * at(j0, i0) + wx * at(j0, i0 + 1)) +
           wt * ((1.0 - wx) * at(j0 + 1, i0) + wx * at(j0 + 1, i0 + 1));
  }

 private:
  GridSpec grid_{};
  std::vector<double> values_;
};

/// Point at which price or value function is requested.
struct ValueQuery {
  double w = 0.0;  ///< initial wealth
  double y = 0.0;  ///< spot of the non-traded asset
  double t = 0.0;  ///< valuation time in [0,T]
};

/// (y,t) -> (x,theta) with x = ln y, theta = T - t.
inline std::pair<double, double> to_forward(double y, double t, const ModelParams& p) {
  if (!(y > 0.0)) throw validation_error("to_forward: spot must be positive");
  if (t < 0.0 || t > p.maturity)
    throw validation_error("to_forward: time outside [0, maturity]");
  return {std::log(y), p.maturity - t};
}

/// Inverse transform, y = e^x, t = T - theta.
inline std::pair<double, double> from_forward(double x, double theta,
                                              const ModelParams& p) {
  if (theta < 0.0 || theta > p.maturity)
    throw validation_error("from_forward: theta outside [0, maturity]");
  return {std::exp(x), p.maturity - theta};
}

/// Call payoff in log coordinates, (e^x - K)^+.
inline double payoff(double x, double strike) {
  return std::max(std::exp(x) - strike, 0.0);
}

}  // namespace indiff
