#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "indiff/config.hpp"
#include "indiff/dual.hpp"
#include "indiff/eso.hpp"
#include "indiff/io.hpp"
#include "indiff/model.hpp"
#include "indiff/oracle.hpp"
#include "indiff/pricing.hpp"
#include "indiff/selftest.hpp"
#include "indiff/vi.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace indiff;

namespace {

// Every command stages its outputs here and writes them only after all
// computation succeeded, so failures leave no partial files behind.
struct OutputSet {
  fs::path dir;
  std::vector<std::pair<fs::path, std::string>> files;

  void add(const std::string& name, std::string content) {
    files.emplace_back(dir / name, std::move(content));
  }
  void commit() const {
    fs::create_directories(dir);
    for (const auto& [path, content] : files) write_file_atomic(path, content);
  }
};

std::vector<double> query_spots(const RunConfig& cfg, const PriceModel& model) {
  if (!cfg.query_spots.empty()) return cfg.query_spots;
  const GridSpec& g = model.vi().surface.grid();
  std::vector<double> ys(g.n_x);
  for (std::size_t i = 0; i < g.n_x; ++i)
    ys[i] = cfg.model.strike * std::exp(g.x(i));
  return ys;
}

ordered_json params_json(const ModelParams& p) {
  return ordered_json{{"b", p.b},           {"c", p.c},          {"rho", p.rho},
                      {"lambda", p.lambda}, {"sigma", p.sigma},  {"gamma", p.gamma},
                      {"strike", p.strike}, {"maturity", p.maturity}};
}

ordered_json grid_json(const GridSpec& g) {
  return ordered_json{{"x_min", g.x_min},
                      {"x_max", g.x_max},
                      {"n_x", g.n_x},
                      {"n_theta", g.n_theta},
                      {"theta_max", g.theta_max}};
}

ordered_json diagnostics_json(const RunConfig& cfg, const PriceModel& model) {
  const ViSolution& vi = model.vi();
  ordered_json diffs = ordered_json::array();
  for (const auto& [eps, d] : vi.diagnostics.schedule_diffs)
    diffs.push_back(ordered_json{{"epsilon", eps}, {"sup_diff", d}});

  const auto [pn, ngrid] = normalized_problem(cfg.model, cfg.resolved_grid());
  const SurfaceEnvelope env = measure_envelope(vi.surface, pn);

  double max_residual = 0.0;
  for (const auto& s : vi.diagnostics.final_steps)
    max_residual = std::max(max_residual, s.residual);

  ordered_json censored = ordered_json::array();
  const FreeBoundary& fb = model.boundary();
  for (std::size_t k = 0; k < fb.censored.size(); ++k)
    if (fb.censored[k]) censored.push_back(fb.theta[k]);

  return ordered_json{
      {"schedule_diffs", diffs},
      {"cauchy_ok", vi.diagnostics.cauchy_ok},
      {"complementarity_max", vi.diagnostics.complementarity_max},
      {"max_newton_residual", max_residual},
      {"contact_tol", vi.contact_tol},
      {"envelope",
       ordered_json{{"terminal_gap", env.terminal_gap},
                    {"obstacle_margin", env.obstacle_margin},
                    {"upper_barrier_excess", env.upper_excess},
                    {"gradient_min", env.gradient_min},
                    {"gradient_excess", env.gradient_excess},
                    {"min_theta_increment", env.min_theta_increment}}},
      {"boundary_censored_thetas", censored}};
}

ordered_json schedule_json(const std::vector<ViScheduleItem>& sched) {
  ordered_json out = ordered_json::array();
  for (const auto& s : sched)
    out.push_back(ordered_json{{"epsilon", s.epsilon}, {"n_trunc", s.n_trunc}});
  return out;
}

int cmd_price(const RunConfig& cfg, OutputSet& out) {
  PriceModel model = build_price_model(cfg.model, cfg.resolved_grid(), cfg.resolved_schedule());
  CsvBuilder csv({"y", "t", "P"});
  for (double t : cfg.resolved_query_times())
    for (double y : query_spots(cfg, model)) csv.row({y, t, model.price(y, t)});

  ordered_json meta{{"command", "price"},
                    {"params", params_json(cfg.model)},
                    {"grid", grid_json(cfg.resolved_grid())},
                    {"schedule", schedule_json(cfg.resolved_schedule())},
                    {"diagnostics", diagnostics_json(cfg, model)}};
  out.add("price.csv", csv.str());
  out.add("price_meta.json", meta.dump(2) + "\n");
  return 0;
}

int cmd_boundary(const RunConfig& cfg, OutputSet& out) {
  PriceModel model = build_price_model(cfg.model, cfg.resolved_grid(), cfg.resolved_schedule());
  const FreeBoundary& fb = model.boundary();
  const double strike = cfg.model.strike;
  const double T = cfg.model.maturity;
  CsvBuilder csv({"t", "y_star"});
  for (std::size_t k = fb.theta.size(); k-- > 0;) {
    if (fb.censored[k]) continue;
    csv.row({T - fb.theta[k], strike * std::exp(fb.s[k])});
  }
  ordered_json meta{{"command", "boundary"},
                    {"params", params_json(cfg.model)},
                    {"grid", grid_json(cfg.resolved_grid())},
                    {"x0", fb.x0 + std::log(strike)},
                    {"raw_monotonicity_violations", fb.raw_violations},
                    {"diagnostics", diagnostics_json(cfg, model)}};
  out.add("boundary.csv", csv.str());
  out.add("boundary_meta.json", meta.dump(2) + "\n");
  return 0;
}

int cmd_hedge(const RunConfig& cfg, OutputSet& out) {
  PriceModel model = build_price_model(cfg.model, cfg.resolved_grid(), cfg.resolved_schedule());
  CsvBuilder csv({"y", "t", "pi"});
  for (double t : cfg.resolved_query_times())
    for (double y : query_spots(cfg, model)) csv.row({y, t, hedge_ratio(y, t, model)});
  ordered_json meta{{"command", "hedge"},
                    {"params", params_json(cfg.model)},
                    {"merton_allocation",
                     cfg.model.lambda / (cfg.model.sigma * cfg.model.gamma)},
                    {"diagnostics", diagnostics_json(cfg, model)}};
  out.add("hedge.csv", csv.str());
  out.add("hedge_meta.json", meta.dump(2) + "\n");
  return 0;
}

int cmd_eso(const RunConfig& cfg, OutputSet& out) {
  ESOSpec spec{cfg.model, cfg.eso_alpha, cfg.eso_t_v};
  ESOSolution sol = solve_eso(spec, cfg.resolved_grid(), cfg.resolved_schedule());

  std::vector<double> spots = cfg.query_spots;
  if (spots.empty()) {
    // stage lattices live in ln(y/K)
    const GridSpec& g = sol.post_vesting.grid();
    for (std::size_t i = 0; i < g.n_x; ++i)
      spots.push_back(sol.strike * std::exp(g.x(i)));
  }
  CsvBuilder csv({"y", "t", "C"});
  for (double t : cfg.resolved_query_times())
    for (double y : spots) csv.row({y, t, eso_cost(y, t, sol)});

  ordered_json censored = ordered_json::array();
  for (std::size_t k = 0; k < sol.boundary.censored.size(); ++k)
    if (sol.boundary.censored[k]) censored.push_back(sol.boundary.theta[k]);
  ordered_json meta{{"command", "eso"},
                    {"params", params_json(cfg.model)},
                    {"alpha", cfg.eso_alpha},
                    {"t_v_requested", cfg.eso_t_v},
                    {"t_v_effective", sol.t_v_eff},
                    {"boundary_censored_thetas", censored}};
  out.add("eso.csv", csv.str());
  out.add("eso_meta.json", meta.dump(2) + "\n");
  return 0;
}

int cmd_dualcheck(const RunConfig& cfg, OutputSet& out) {
  PriceModel model = build_price_model(cfg.model, cfg.resolved_grid(), cfg.resolved_schedule());
  const ModelParams& p = cfg.model;
  const double y0 = p.strike;
  const double price_atm = model.price(y0, 0.0);
  const GridSpec grid = cfg.resolved_grid();
  const double slack = 10.0 * (grid.dx() + grid.dtheta());
  const McSettings mc{cfg.dual_n_paths, cfg.dual_n_steps, cfg.dual_seed};
  const StoppingRule boundary = StoppingRule::from_model(model);

  ordered_json report{{"command", "dual-check"},
                      {"params", params_json(p)},
                      {"y0", y0},
                      {"price", price_atm},
                      {"n_paths", cfg.dual_n_paths},
                      {"n_steps", cfg.dual_n_steps},
                      {"seed", cfg.dual_seed}};

  bool all_ok = true;

  {
    const double g0 = std::max(y0 - p.strike, 0.0);
    const bool ok = g0 <= price_atm + 1e-10;
    all_ok = all_ok && ok;
    report["immediate_exercise"] =
        ordered_json{{"value", g0}, {"upper", price_atm + 1e-10}, {"ok", ok}};
  }
  {
    DualControl star = DualControl::plugin(model);
    DualEstimate e = dual_value(y0, star, boundary, p, mc);
    const double gap = std::abs(e.value - price_atm);
    const double tol = 0.01 * price_atm + 3.0 * e.std_error;
    const bool ok = gap <= tol;
    all_ok = all_ok && ok;
    report["plugin_control"] = ordered_json{{"value", e.value},
                                            {"payoff_term", e.payoff_term},
                                            {"entropy_term", e.entropy_term},
                                            {"std_error", e.std_error},
                                            {"gap", gap},
                                            {"tolerance", tol},
                                            {"ok", ok}};
  }
  {
    ordered_json rows = ordered_json::array();
    for (double m : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
      DualControl ctl = DualControl::constant(m, p.maturity);
      DualEstimate e = dual_value(y0, ctl, boundary, p, mc);
      const bool ok = e.value >= price_atm - 3.0 * e.std_error - slack;
      all_ok = all_ok && ok;
      rows.push_back(ordered_json{{"phi", m},
                                  {"value", e.value},
                                  {"std_error", e.std_error},
                                  {"lower", price_atm - 3.0 * e.std_error - slack},
                                  {"ok", ok}});
    }
    report["constant_controls"] = rows;
  }
  report["all_ok"] = all_ok;
  out.add("dualcheck.json", report.dump(2) + "\n");
  return 0;
}

int cmd_sweep(const RunConfig& cfg, OutputSet& out) {
  int threads = cfg.sweep_threads;
  if (const char* env = std::getenv("INDIFF_THREADS")) {
    threads = std::max(1, std::atoi(env));
  }
  threads = std::max(1, std::min<int>(threads, static_cast<int>(cfg.sweep_values.size())));

  struct SliceResult {
    std::vector<std::vector<double>> rows;
    std::string error;
  };
  std::vector<SliceResult> results(cfg.sweep_values.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= cfg.sweep_values.size()) return;
      try {
        RunConfig local = cfg;
        set_config_key(local, cfg.sweep_param, format_double(cfg.sweep_values[k]));
        validate_params(local.model);
        PriceModel model =
            build_price_model(local.model, local.resolved_grid(), local.resolved_schedule());
        for (double t : cfg.sweep_times)
          for (double y : query_spots(local, model))
            results[k].rows.push_back({cfg.sweep_values[k], y, t, model.price(y, t)});
      } catch (const std::exception& e) {
        results[k].error = e.what();
      }
    }
  };

  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  for (const auto& r : results)
    if (!r.error.empty()) throw solver_error("sweep: " + r.error);

  CsvBuilder csv({cfg.sweep_param, "y", "t", "P"});
  for (const auto& r : results)
    for (const auto& row : r.rows) csv.row(row);

  ordered_json meta{{"command", "sweep"},
                    {"param", cfg.sweep_param},
                    {"values", cfg.sweep_values},
                    {"times", cfg.sweep_times},
                    {"threads", threads}};
  out.add("sweep.csv", csv.str());
  out.add("sweep_meta.json", meta.dump(2) + "\n");
  return 0;
}

int cmd_selftest(const RunConfig& cfg, OutputSet& out) {
  SelftestReport report = run_selftest(cfg);
  const std::string text = format_report(report);
  std::cout << text;
  out.add("selftest_report.txt", text);
  return report.all_pass() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"utility-indifference pricing of American calls on a non-traded asset"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"price", "indifference price table (CSV + JSON metadata)"},
      {"boundary", "optimal exercise boundary y*(t)"},
      {"hedge", "optimal traded-asset position pi*(y,t)"},
      {"eso", "employee stock option cost with vesting and termination"},
      {"dual-check", "Monte-Carlo verification of the dual representation"},
      {"sweep", "price surfaces over a parameter range"},
      {"selftest", "run the full invariant suite"},
  };
  for (const auto& [name, desc] : commands) {
    auto* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", config_path, "run configuration (key=value or JSON)")
        ->required();
    sub->add_option("--out", out_dir, "output directory (default .)");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = load_config_file(config_path);
    OutputSet out;
    out.dir = out_dir;
    int rc = 0;
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "price") rc = cmd_price(cfg, out);
    else if (cmd == "boundary") rc = cmd_boundary(cfg, out);
    else if (cmd == "hedge") rc = cmd_hedge(cfg, out);
    else if (cmd == "eso") rc = cmd_eso(cfg, out);
    else if (cmd == "dual-check") rc = cmd_dualcheck(cfg, out);
    else if (cmd == "sweep") rc = cmd_sweep(cfg, out);
    else if (cmd == "selftest") rc = cmd_selftest(cfg, out);
    out.commit();
    return rc;
  } catch (const validation_error& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const solver_error& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
