#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>

#include "indiff/config.hpp"
#include "indiff/io.hpp"

using namespace indiff;

TEST_CASE("defaults resolve to the reference configuration") {
  RunConfig cfg;
  CHECK(cfg.model.gamma == 1.0);
  GridSpec g = cfg.resolved_grid();
  CHECK(g.x_min == doctest::Approx(-4.0));
  CHECK(g.x_max == doctest::Approx(4.0));
  CHECK(g.n_x == 401);
  CHECK(g.n_theta == 400);
  CHECK(g.theta_max == doctest::Approx(1.0));
  auto sched = cfg.resolved_schedule();
  REQUIRE(sched.size() == 4);
  CHECK(sched.back().epsilon == doctest::Approx(1.25e-3));
  CHECK(sched.back().n_trunc == doctest::Approx(4.0));
  auto times = cfg.resolved_query_times();
  REQUIRE(times.size() == 3);
  CHECK(times.back() == doctest::Approx(1.0));
}

TEST_CASE("flat key=value parsing with comments and whitespace") {
  const std::string text = R"(
# comment line
model.gamma = 2.5
model.strike=1.2   # trailing comment
grid.n_x = 101
penalty.epsilons = 1e-2, 5e-3
sweep.param = model.lambda
sweep.values = 0.1,0.2
)";
  RunConfig cfg = parse_config(text);
  CHECK(cfg.model.gamma == 2.5);
  CHECK(cfg.model.strike == 1.2);
  CHECK(cfg.grid_n_x == 101);
  REQUIRE(cfg.penalty_epsilons.size() == 2);
  CHECK(cfg.penalty_epsilons[1] == 5e-3);
  CHECK(cfg.sweep_param == "model.lambda");
  CHECK(cfg.sweep_values == std::vector<double>{0.1, 0.2});
}

TEST_CASE("JSON configurations, nested or flat, are accepted") {
  RunConfig nested = parse_config(R"({"model": {"gamma": 3.0, "rho": 0.2},
                                      "grid": {"n_theta": 50},
                                      "penalty": {"epsilons": [1e-2, 5e-3]}})");
  CHECK(nested.model.gamma == 3.0);
  CHECK(nested.model.rho == 0.2);
  CHECK(nested.grid_n_theta == 50);
  CHECK(nested.penalty_epsilons.size() == 2);

  RunConfig flat = parse_config(R"({"model.gamma": 3.0, "dual.seed": 42})");
  CHECK(flat.model.gamma == 3.0);
  CHECK(flat.dual_seed == 42);
}

TEST_CASE("config rejections") {
  CHECK_THROWS_AS(parse_config("model.gamm = 1.0\n"), validation_error);
  CHECK_THROWS_AS(parse_config("model.gamma = abc\n"), validation_error);
  CHECK_THROWS_AS(parse_config("model.gamma\n"), validation_error);
  CHECK_THROWS_AS(parse_config("model.rho = 1.0\n"), validation_error);
  CHECK_THROWS_AS(parse_config("{ broken json"), validation_error);
  CHECK_THROWS_AS(parse_config("grid.n_x = -3\n"), validation_error);
}

TEST_CASE("serialization round-trips losslessly") {
  RunConfig cfg;
  cfg.model.gamma = 0.731234567890123;
  cfg.model.strike = 1.37;
  cfg.penalty_epsilons = {1e-2, 3.3e-3, 1.1e-3};
  cfg.query_times = {0.0, 0.25};
  cfg.query_spots = {0.9, 1.0, 1.1};
  cfg.dual_seed = 987654321;
  cfg.sweep_values = {0.5, 1.0, 2.0};
  cfg.sweep_threads = 4;

  const std::string text = serialize_config(cfg);
  RunConfig back = parse_config(text);
  CHECK(serialize_config(back) == text);
  CHECK(back.model.gamma == cfg.model.gamma);
  CHECK(back.model.strike == cfg.model.strike);
  CHECK(back.penalty_epsilons == cfg.penalty_epsilons);
  CHECK(back.query_spots == cfg.query_spots);
  CHECK(back.dual_seed == cfg.dual_seed);
  CHECK(back.sweep_threads == cfg.sweep_threads);
  GridSpec a = cfg.resolved_grid(), b = back.resolved_grid();
  CHECK(a.x_min == b.x_min);
  CHECK(a.x_max == b.x_max);
}

TEST_CASE("shortest round-trip double formatting") {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> mant(-1.0, 1.0);
  std::uniform_int_distribution<int> expo(-12, 12);
  for (int k = 0; k < 2000; ++k) {
    const double v = mant(rng) * std::pow(10.0, expo(rng));
    const std::string s = format_double(v);
    CHECK(std::stod(s) == v);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
}

TEST_CASE("csv builder and atomic file writes") {
  CsvBuilder csv({"a", "b"});
  csv.row({1.5, 2.0});
  csv.row({0.1, -3.25});
  CHECK(csv.str() == "a,b\n1.5,2\n0.1,-3.25\n");
  CHECK_THROWS_AS(csv.row({1.0}), validation_error);

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "indiff_io_test";
  fs::create_directories(dir);
  const fs::path target = dir / "out.csv";
  write_file_atomic(target, csv.str());
  CHECK(read_file(target) == csv.str());
  CHECK(!fs::exists(dir / "out.csv.tmp"));
  fs::remove_all(dir);
}
