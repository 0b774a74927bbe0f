#include <doctest.h>

#include <cmath>
#include <random>

#include "indiff/eso.hpp"
#include "indiff/model.hpp"
#include "indiff/oracle.hpp"

using namespace indiff;

namespace {

ModelParams rn_params() {
  // martingale underlying for the risk-neutral stages
  return {0.0, 0.3, 0.5, 0.4, 0.25, 1.0, 1.0, 1.0};
}

double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double driftless_call(double y0, double strike, double vol, double T) {
  const double sd = vol * std::sqrt(T);
  const double d1 = (std::log(y0 / strike) + 0.5 * vol * vol * T) / sd;
  return y0 * norm_cdf(d1) - strike * norm_cdf(d1 - sd);
}

GridSpec eso_grid() { return snap_to_strike({-3.0, 3.0, 241, 200, 1.0}, 1.0); }

// boundary pushed to the right lattice edge: no exercise region, every row
// Dirichlet only at the last node
FreeBoundary edge_boundary(const GridSpec& g) {
  FreeBoundary fb;
  fb.x0 = g.x_max;
  for (std::size_t j = 1; j <= g.n_theta; ++j) {
    fb.theta.push_back(g.theta(j));
    fb.s.push_back(g.x_max);
    fb.s_raw.push_back(g.x_max);
    fb.censored.push_back(0);
  }
  return fb;
}

}  // namespace

TEST_CASE("eso spec validation") {
  ESOSpec spec{rn_params(), 0.1, 0.3};
  CHECK_NOTHROW(validate_eso(spec));
  spec.base.b = 0.05;
  CHECK_THROWS_AS(validate_eso(spec), validation_error);
  spec = {rn_params(), -0.1, 0.3};
  CHECK_THROWS_AS(validate_eso(spec), validation_error);
  spec = {rn_params(), 0.1, 1.0};
  CHECK_THROWS_AS(validate_eso(spec), validation_error);
  spec = {rn_params(), 0.1, 0.0};
  CHECK_THROWS_AS(validate_eso(spec), validation_error);
}

TEST_CASE("post-vesting stage") {
  GridSpec grid = eso_grid();
  FreeBoundary fb = edge_boundary(grid);

  SUBCASE("terminal row is the intrinsic value") {
    ESOSpec spec{rn_params(), 0.2, 0.3};
    Surface C = solve_post_vesting(spec, fb, grid);
    for (std::size_t i = 0; i < grid.n_x; ++i) {
      const bool exact = C.at(0, i) == payoff(grid.x(i), 1.0);
      CHECK(exact);
    }
  }

  SUBCASE("no termination, no exercise region: the european value emerges") {
    ESOSpec spec{rn_params(), 0.0, 0.3};
    Surface C = solve_post_vesting(spec, fb, grid);
    // value at the vesting seam prices a call of tenor T - t_v
    const std::size_t j_v = C.grid().n_theta;
    for (double x : {-0.2, 0.0, 0.3}) {
      const double got = C.at(j_v, grid.nearest_index(x));
      const double want = driftless_call(std::exp(x), 1.0, 0.3, C.grid().theta_max);
      CHECK(std::abs(got - want) <= 5e-3 * std::max(want, 1e-3));
    }
  }

  SUBCASE("overwhelming termination pins the cost to intrinsic") {
    ESOSpec spec{rn_params(), 1e4, 0.3};
    Surface C = solve_post_vesting(spec, fb, grid);
    double worst = 0.0;
    for (std::size_t j = 0; j < C.rows(); ++j)
      for (std::size_t i = 0; i < grid.n_x; ++i)
        worst = std::max(worst, std::abs(C.at(j, i) - payoff(grid.x(i), 1.0)));
    CHECK(worst <= 5e-3);
  }

  SUBCASE("censored boundary rows are refused with advice") {
    FreeBoundary bad = fb;
    bad.censored[10] = 1;
    ESOSpec spec{rn_params(), 0.1, 0.3};
    CHECK_THROWS_WITH_AS(solve_post_vesting(spec, bad, grid),
                         doctest::Contains("wider lattice"), solver_error);
  }
}

TEST_CASE("pre-vesting stage identities") {
  GridSpec grid = eso_grid();

  // hand-made flat post-vesting stage: C(., t_v) = kappa
  const double kappa = 0.37;
  GridSpec post_stage = grid;
  post_stage.n_theta = 140;  // t_v = 0.3 on the 200-step lattice
  post_stage.theta_max = 0.7;
  Surface post(post_stage);
  for (std::size_t j = 0; j < post.rows(); ++j)
    for (std::size_t i = 0; i < grid.n_x; ++i) post.at(j, i) = kappa;

  SUBCASE("harmless killing: constants persist") {
    ESOSpec spec{rn_params(), 0.0, 0.3};
    Surface pre = solve_pre_vesting(spec, post);
    for (std::size_t j = 0; j < pre.rows(); ++j)
      for (std::size_t i = 0; i < grid.n_x; ++i)
        CHECK(std::abs(pre.at(j, i) - kappa) <= 1e-12);
  }

  SUBCASE("flat data decays exactly at the termination rate") {
    ESOSpec spec{rn_params(), 0.4, 0.3};
    Surface pre = solve_pre_vesting(spec, post);
    for (std::size_t j = 0; j < pre.rows(); ++j) {
      const double want = kappa * std::exp(-spec.alpha * pre.grid().theta(j));
      for (std::size_t i = 0; i < grid.n_x; ++i)
        CHECK(std::abs(pre.at(j, i) - want) <= 1e-12);
    }
  }
}

TEST_CASE("full pipeline") {
  GridSpec grid = eso_grid();
  std::vector<ViScheduleItem> sched{{5e-3, 3.0}, {2.5e-3, 3.0}};

  SUBCASE("seam continuity and positivity") {
    ESOSpec spec{rn_params(), 0.1, 0.3};
    ESOSolution sol = solve_eso(spec, grid, sched);
    CHECK(sol.t_v_eff == doctest::Approx(0.3).epsilon(1e-12));
    for (double y : {0.5, 1.0, 1.9}) {
      const double from_post = sol.post_vesting.interpolate(std::log(y), 0.7);
      const double from_pre = sol.pre_vesting.interpolate(std::log(y), 0.0);
      CHECK(std::abs(from_post - from_pre) <= 1e-10);
      CHECK(eso_cost(y, sol.t_v_eff, sol) >= 0.0);
    }
    for (std::size_t j = 0; j < sol.pre_vesting.rows(); ++j)
      for (std::size_t i = 0; i < grid.n_x; ++i) {
        CHECK(sol.pre_vesting.at(j, i) >= -1e-14);
        if (j < sol.post_vesting.rows()) CHECK(sol.post_vesting.at(j, i) >= -1e-14);
      }
  }

  SUBCASE("terminal cost is intrinsic at lattice nodes") {
    ESOSpec spec{rn_params(), 0.1, 0.3};
    ESOSolution sol = solve_eso(spec, grid, sched);
    const GridSpec& pg = sol.post_vesting.grid();
    for (std::size_t i : {std::size_t{12}, pg.nearest_index(0.0), pg.n_x - 7}) {
      const double y = std::exp(pg.x(i));
      CHECK(eso_cost(y, 1.0, sol) ==
            doctest::Approx(std::max(y - 1.0, 0.0)).epsilon(1e-12).scale(1.0));
    }
  }

  SUBCASE("termination risk only ever cheapens the option below the boundary") {
    ESOSolution a = solve_eso({rn_params(), 0.0, 0.3}, grid, sched);
    ESOSolution b = solve_eso({rn_params(), 0.1, 0.3}, grid, sched);
    ESOSolution c = solve_eso({rn_params(), 0.5, 0.3}, grid, sched);
    for (std::size_t j = 0; j < a.pre_vesting.rows(); ++j)
      for (std::size_t i = 0; i < grid.n_x; ++i) {
        CHECK(b.pre_vesting.at(j, i) <= a.pre_vesting.at(j, i) + 1e-8);
        CHECK(c.pre_vesting.at(j, i) <= b.pre_vesting.at(j, i) + 1e-8);
      }
  }

  SUBCASE("with immediate vesting and no termination the cost is sandwiched") {
    // The employee exercises at the indifference boundary, which for a
    // driftless call can only give up time value: the cost sits between the
    // intrinsic envelope and the optimal-stopping value from the lattice
    // oracle (which here coincides with the European value).
    ESOSpec spec{rn_params(), 0.0, 2.0 / 200.0};  // vest after two time steps
    ESOSolution sol = solve_eso(spec, grid, sched);
    TreeSpec tree{2000, 0.0, spec.base.c, 1.0, 1.0};
    for (double y : {0.8, 1.0, 1.25, 1.6}) {
      const double cost = eso_cost(y, 0.0, sol);
      CHECK(cost >= std::max(y - 1.0, 0.0) - 1e-10);
      CHECK(cost <= binomial_american(tree, y) + 5e-3);
    }
  }

  SUBCASE("costs are multiples of the strike") {
    ESOSpec unit{rn_params(), 0.2, 0.3};
    ModelParams scaled_p = rn_params();
    scaled_p.strike = 2.0;
    scaled_p.gamma = 0.5;  // keeps gamma K fixed, so the boundary scales exactly
    ESOSpec scaled{scaled_p, 0.2, 0.3};
    GridSpec grid2 = grid;
    grid2.x_min += std::log(2.0);
    grid2.x_max += std::log(2.0);
    ESOSolution a = solve_eso(unit, grid, sched);
    ESOSolution b = solve_eso(scaled, grid2, sched);
    for (double y : {0.7, 1.0, 1.4})
      for (double t : {0.0, 0.4, 0.9})
        CHECK(eso_cost(2.0 * y, t, b) ==
              doctest::Approx(2.0 * eso_cost(y, t, a)).epsilon(1e-11));
  }

  SUBCASE("pre-vesting value matches a lognormal resimulation") {
    ESOSpec spec{rn_params(), 0.3, 0.3};
    ESOSolution sol = solve_eso(spec, grid, sched);
    const double y0 = 1.1;
    const double pde = eso_cost(y0, 0.0, sol);

    std::mt19937_64 rng(4242);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double c = spec.base.c, tv = sol.t_v_eff;
    const std::size_t n_paths = 40000;
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t k = 0; k < n_paths; ++k) {
      const double yv = y0 * std::exp(-0.5 * c * c * tv + c * std::sqrt(tv) * normal(rng));
      const double v = std::exp(-spec.alpha * tv) *
                       sol.post_vesting.interpolate(std::log(yv), 0.7);
      sum += v;
      sum_sq += v * v;
    }
    const double mean = sum / n_paths;
    const double se = std::sqrt((sum_sq / n_paths - mean * mean) / n_paths);
    CHECK(std::abs(pde - mean) <= 3.0 * se + 2e-3);
  }
}
