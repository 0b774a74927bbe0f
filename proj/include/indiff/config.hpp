#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "indiff/io.hpp"
#include "indiff/model.hpp"
#include "indiff/vi.hpp"

namespace indiff {

/// One run of the CLI: model constants, lattice, continuation schedule and
/// per-command options. Defaults reproduce the reference configuration.
struct RunConfig {
  ModelParams model{0.05, 0.3, 0.5, 0.4, 0.25, 1.0, 1.0, 1.0};

  // lattice in log price; NaN bounds resolve to ln K -/+ 4
  double grid_x_min = std::numeric_limits<double>::quiet_NaN();
  double grid_x_max = std::numeric_limits<double>::quiet_NaN();
  std::size_t grid_n_x = 401;
  std::size_t grid_n_theta = 400;

  std::vector<double> penalty_epsilons{1e-2, 5e-3, 2.5e-3, 1.25e-3};
  double penalty_n_trunc = std::numeric_limits<double>::quiet_NaN();  // auto
  double newton_tol = 1e-12;
  int newton_max_iter = 30;

  std::vector<double> query_times;  // empty: {0, T/2, T}
  std::vector<double> query_spots;  // empty: lattice nodes

  double eso_alpha = 0.1;
  double eso_t_v = 0.3;

  std::uint64_t dual_seed = 12345;
  std::size_t dual_n_paths = 100000;
  std::size_t dual_n_steps = 400;

  std::string sweep_param = "model.gamma";
  std::vector<double> sweep_values{0.5, 1.0, 2.0};
  std::vector<double> sweep_times{0.0};
  int sweep_threads = 1;

  /// Lattice with auto bounds resolved and the kink snapped to a node.
  GridSpec resolved_grid() const {
    const double lk = std::log(model.strike);
    GridSpec g;
    g.x_min = std::isnan(grid_x_min) ? lk - 4.0 : grid_x_min;
    g.x_max = std::isnan(grid_x_max) ? lk + 4.0 : grid_x_max;
    g.n_x = grid_n_x;
    g.n_theta = grid_n_theta;
    g.theta_max = model.maturity;
    return snap_to_strike(g, model.strike);
  }

  std::vector<ViScheduleItem> resolved_schedule() const {
    GridSpec g = resolved_grid();
    const double lk = std::log(model.strike);
    const double n = std::isnan(penalty_n_trunc)
                         ? std::max(std::abs(g.x_min - lk), std::abs(g.x_max - lk))
                         : penalty_n_trunc;
    std::vector<ViScheduleItem> sched;
    for (double eps : penalty_epsilons) sched.push_back({eps, n});
    return sched;
  }

  std::vector<double> resolved_query_times() const {
    if (!query_times.empty()) return query_times;
    return {0.0, 0.5 * model.maturity, model.maturity};
  }
};

namespace detail {

inline double parse_number(const std::string& text, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    if (pos != text.size()) throw validation_error("");
    return v;
  } catch (const std::exception&) {
    throw validation_error("config: bad number for " + what + ": '" + text + "'");
  }
}

inline std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(parse_number(item, "list entry"));
  }
  return out;
}

}  // namespace detail

/// Applies one dotted key; unknown keys are rejected.
inline void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto num = [&] { return detail::parse_number(value, key); };
  auto integer = [&] {
    const double v = num();
    if (v < 0 || v != std::floor(v))
      throw validation_error("config: " + key + " must be a non-negative integer");
    return v;
  };

  if (key == "model.b") cfg.model.b = num();
  else if (key == "model.c") cfg.model.c = num();
  else if (key == "model.rho") cfg.model.rho = num();
  else if (key == "model.lambda") cfg.model.lambda = num();
  else if (key == "model.sigma") cfg.model.sigma = num();
  else if (key == "model.gamma") cfg.model.gamma = num();
  else if (key == "model.strike") cfg.model.strike = num();
  else if (key == "model.maturity") cfg.model.maturity = num();
  else if (key == "grid.x_min") cfg.grid_x_min = num();
  else if (key == "grid.x_max") cfg.grid_x_max = num();
  else if (key == "grid.n_x") cfg.grid_n_x = static_cast<std::size_t>(integer());
  else if (key == "grid.n_theta") cfg.grid_n_theta = static_cast<std::size_t>(integer());
  else if (key == "penalty.epsilons") cfg.penalty_epsilons = detail::parse_list(value);
  else if (key == "penalty.n_trunc") cfg.penalty_n_trunc = num();
  else if (key == "penalty.newton_tol") cfg.newton_tol = num();
  else if (key == "penalty.newton_max_iter") cfg.newton_max_iter = static_cast<int>(integer());
  else if (key == "query.times") cfg.query_times = detail::parse_list(value);
  else if (key == "query.spots") cfg.query_spots = detail::parse_list(value);
  else if (key == "eso.alpha") cfg.eso_alpha = num();
  else if (key == "eso.t_v") cfg.eso_t_v = num();
  else if (key == "dual.seed") cfg.dual_seed = static_cast<std::uint64_t>(integer());
  else if (key == "dual.n_paths") cfg.dual_n_paths = static_cast<std::size_t>(integer());
  else if (key == "dual.n_steps") cfg.dual_n_steps = static_cast<std::size_t>(integer());
  else if (key == "sweep.param") cfg.sweep_param = value;
  else if (key == "sweep.values") cfg.sweep_values = detail::parse_list(value);
  else if (key == "sweep.times") cfg.sweep_times = detail::parse_list(value);
  else if (key == "sweep.threads") cfg.sweep_threads = static_cast<int>(integer());
  else throw validation_error("config: unknown key " + key);
}

namespace detail {

inline void flatten_json(const nlohmann::json& j, const std::string& prefix, RunConfig& cfg) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten_json(*it, key, cfg);
    } else if (it->is_array()) {
      std::string list;
      for (const auto& e : *it) {
        if (!list.empty()) list += ",";
        list += e.dump();
      }
      set_config_key(cfg, key, list);
    } else if (it->is_string()) {
      set_config_key(cfg, key, it->get<std::string>());
    } else {
      set_config_key(cfg, key, it->dump());
    }
  }
}

}  // namespace detail

/// Parses either the flat key=value format ('#' comments) or a JSON object.
inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  const std::size_t first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw validation_error("config: malformed JSON");
    detail::flatten_json(j, "", cfg);
  } else {
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
      ++line_no;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const std::size_t a = line.find_first_not_of(" \t\r");
      if (a == std::string::npos) continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw validation_error("config: expected key=value at line " +
                               std::to_string(line_no));
      auto trim = [](std::string s) {
        const std::size_t b = s.find_first_not_of(" \t\r");
        const std::size_t e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      set_config_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }
  validate_params(cfg.model);
  return cfg;
}

inline RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("config: cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

/// Canonical key=value rendering; parse(serialize(c)) reproduces c exactly.
inline std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  auto put = [&](const std::string& key, const std::string& value) {
    out += key;
    out += "=";
    out += value;
    out += "\n";
  };
  auto putd = [&](const std::string& key, double v) { put(key, format_double(v)); };
  auto putlist = [&](const std::string& key, const std::vector<double>& vs) {
    std::string s;
    for (std::size_t i = 0; i < vs.size(); ++i) {
      if (i) s += ",";
      s += format_double(vs[i]);
    }
    put(key, s);
  };

  putd("model.b", cfg.model.b);
  putd("model.c", cfg.model.c);
  putd("model.rho", cfg.model.rho);
  putd("model.lambda", cfg.model.lambda);
  putd("model.sigma", cfg.model.sigma);
  putd("model.gamma", cfg.model.gamma);
  putd("model.strike", cfg.model.strike);
  putd("model.maturity", cfg.model.maturity);
  GridSpec g = cfg.resolved_grid();
  putd("grid.x_min", g.x_min);
  putd("grid.x_max", g.x_max);
  put("grid.n_x", std::to_string(cfg.grid_n_x));
  put("grid.n_theta", std::to_string(cfg.grid_n_theta));
  putlist("penalty.epsilons", cfg.penalty_epsilons);
  putd("penalty.n_trunc", cfg.resolved_schedule().front().n_trunc);
  putd("penalty.newton_tol", cfg.newton_tol);
  put("penalty.newton_max_iter", std::to_string(cfg.newton_max_iter));
  if (!cfg.query_times.empty()) putlist("query.times", cfg.query_times);
  if (!cfg.query_spots.empty()) putlist("query.spots", cfg.query_spots);
  putd("eso.alpha", cfg.eso_alpha);
  putd("eso.t_v", cfg.eso_t_v);
  put("dual.seed", std::to_string(cfg.dual_seed));
  put("dual.n_paths", std::to_string(cfg.dual_n_paths));
  put("dual.n_steps", std::to_string(cfg.dual_n_steps));
  put("sweep.param", cfg.sweep_param);
  putlist("sweep.values", cfg.sweep_values);
  putlist("sweep.times", cfg.sweep_times);
  put("sweep.threads", std::to_string(cfg.sweep_threads));
  return out;
}

}  // namespace indiff
