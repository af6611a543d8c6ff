// Command-line front end: simulate, estimate, identify, predict, compare,
// sweep and reproduce.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "abmkoop/pipeline.hpp"
#include "abmkoop/reproduce.hpp"

namespace {

using namespace abmkoop;

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitTolerance = 4;

bool is_config_key(const std::string& dotted) {
  static const Json defaults = default_config_json();
  const Json* node = &defaults;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!node->is_object() || !node->contains(part)) return false;
    node = &node->at(part);
  }
  return true;
}

/// Removes `--dotted.key value` and `--dotted.key=value` pairs naming config
/// keys from argv and returns them in order.
std::vector<std::pair<std::string, std::string>> extract_overrides(std::vector<std::string>& args) {
  std::vector<std::pair<std::string, std::string>> out;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) == 0 && a.size() > 2) {
      std::string key = a.substr(2), value;
      const auto eq = key.find('=');
      bool inline_value = eq != std::string::npos;
      if (inline_value) {
        value = key.substr(eq + 1);
        key = key.substr(0, eq);
      }
      if (is_config_key(key)) {
        if (!inline_value) {
          if (i + 1 >= args.size()) throw ConfigError("override --" + key + " needs a value");
          value = args[++i];
        }
        out.emplace_back(key, value);
        continue;
      }
    }
    rest.push_back(a);
  }
  args = std::move(rest);
  return out;
}

struct Common {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;

  Json user_json() const {
    Json user = Json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot open config file '" + config_path + "'");
      try {
        user = Json::parse(in);
      } catch (const Json::parse_error& e) {
        throw ConfigError("config file '" + config_path + "' is not valid JSON: " + e.what());
      }
    }
    for (const auto& [k, v] : overrides) apply_override(user, k, v);
    if (!user.contains("kind")) throw ConfigError("no experiment kind given (config file or --kind)");
    return user;
  }
  ExperimentConfig config() const { return load_config(user_json()); }
};

void print_warnings(const std::vector<std::string>& ws) {
  for (const auto& w : ws) std::cerr << "warning: " << w << '\n';
}

int cmd_simulate(const Common& c, bool extinction) {
  const auto cfg = c.config();
  const fs::path dir = cfg.output_dir();
  fs::create_directories(dir);
  const Experiment exp(cfg);
  const EmConfig em = cfg.integrator();
  const auto times = save_times(em);
  std::vector<std::vector<Vector>> paths(static_cast<std::size_t>(em.num_paths));
  parallel_for(paths.size(), [&](std::size_t p) {
    exp.abm_path_full(static_cast<long>(p), em, [&](long slot, const Vector& x) {
      auto& v = paths[p];
      if (v.size() <= static_cast<std::size_t>(slot)) v.resize(static_cast<std::size_t>(slot) + 1);
      v[static_cast<std::size_t>(slot)] = x;
    }, false);
  });
  write_text_file(dir / "abm_trajectories.csv", [&](std::ostream& o) {
    o << std::setprecision(std::numeric_limits<double>::max_digits10);
    o << "path,t";
    const auto dim = paths.empty() || paths.front().empty() ? 0 : paths.front().front().size();
    for (Eigen::Index i = 0; i < dim; ++i) o << ",x" << i + 1;
    o << '\n';
    for (std::size_t p = 0; p < paths.size(); ++p)
      for (std::size_t s = 0; s < paths[p].size(); ++s) {
        o << p << ',' << times[s];
        for (Eigen::Index i = 0; i < paths[p][s].size(); ++i) o << ',' << paths[p][s](i);
        o << '\n';
      }
  });
  std::cout << "wrote " << (dir / "abm_trajectories.csv").string() << '\n';
  if (extinction) {
    if (exp.kind() != ExperimentKind::ppm) throw ConfigError("--extinction applies to the predator-prey model only");
    const auto st = ppm_extinction(cfg, cfg.ppm_trajectories());
    write_json_file(dir / "extinction.json", {{"runs", st.runs},
                                              {"predators_extinct_first", st.predators_first},
                                              {"prey_extinct_first", st.prey_first},
                                              {"capped", st.capped},
                                              {"fraction", st.fraction()}});
    std::cout << "predators died out first in " << st.predators_first << " of " << st.runs << " runs\n";
  }
  return 0;
}

int cmd_estimate(const Common& c) {
  const auto cfg = c.config();
  const fs::path dir = cfg.output_dir();
  fs::create_directories(dir);
  std::map<std::string, double> timings;
  const Experiment exp(cfg);
  auto raw = detail::run_stage("estimate", timings, [&] { return exp.estimate(); });
  auto ms = detail::run_stage("reduce", timings, [&] { return exp.normalize(raw); });
  write_text_file(dir / "measurements.csv", [&](std::ostream& o) { write_measurements(o, ms); });
  write_json_file(dir / "manifest.json", manifest_json(cfg, {"estimate", "reduce"}, {}, std::nullopt));
  write_json_file(dir / "timings.json", Json(timings));
  std::cout << "wrote " << ms.size() << " measurements to " << (dir / "measurements.csv").string() << '\n';
  return 0;
}

int cmd_identify(const Common& c, const std::string& measurements) {
  const auto cfg = c.config();
  if (measurements.empty()) {
    const auto art = run_pipeline(cfg);
    print_warnings(art.result.warnings);
    std::cout << "wrote " << (art.directory / "model.json").string() << '\n';
    return 0;
  }
  std::ifstream in(measurements);
  if (!in) throw ConfigError("cannot open measurement file '" + measurements + "'");
  auto ms = read_measurements(in);
  const Experiment exp(cfg);
  const auto res = identify_from(exp, std::move(ms));
  print_warnings(res.warnings);
  const fs::path dir = cfg.output_dir();
  fs::create_directories(dir);
  write_text_file(dir / "generator.csv", [&](std::ostream& o) { write_generator(o, res.generator); });
  write_model_file(dir / "model.json", res.model);
  write_json_file(dir / "manifest.json", manifest_json(cfg, {"fit", "extract"}, res.warnings, std::nullopt));
  write_json_file(dir / "timings.json", Json(res.timings));
  std::cout << "wrote " << (dir / "model.json").string() << '\n';
  return 0;
}

int cmd_predict(const Common& c, const std::string& model_path, bool trajectories) {
  const auto cfg = c.config();
  const IdentifiedSde model = read_model_file(model_path);
  const Experiment exp(cfg);
  const EmConfig em = cfg.integrator();
  const Vector x0 = exp.initial_model_state();
  if (model.dim() != x0.size()) throw ContractError("model dimension does not match the experiment");
  const fs::path dir = cfg.output_dir();
  fs::create_directories(dir);
  const auto st = ensemble_moments(model, x0, em);
  write_text_file(dir / "learned_ensemble.csv", [&](std::ostream& o) { write_ensemble(o, st); });
  if (trajectories) {
    write_text_file(dir / "learned_trajectories.csv", [&](std::ostream& o) {
      o << std::setprecision(std::numeric_limits<double>::max_digits10) << "path,t";
      for (int i = 0; i < model.dim(); ++i) o << ",x" << i + 1;
      o << '\n';
      for (long p = 0; p < em.num_paths; ++p) {
        const auto path = euler_maruyama(model, x0, em, p);
        for (std::size_t s = 0; s < path.times.size(); ++s) {
          o << p << ',' << path.times[s];
          for (Eigen::Index i = 0; i < path.states[s].size(); ++i) o << ',' << path.states[s](i);
          o << '\n';
        }
      }
    });
  }
  std::cout << "wrote " << (dir / "learned_ensemble.csv").string() << '\n';
  return 0;
}

int cmd_compare(const Common& c, const std::string& model_path, const std::string& reference) {
  const auto cfg = c.config();
  const IdentifiedSde model = read_model_file(model_path);
  ReferenceKind ref;
  if (reference == "analytic") ref = ReferenceKind::analytic_limit;
  else if (reference == "abm") ref = ReferenceKind::abm_ensemble;
  else throw ConfigError("reference must be 'analytic' or 'abm'");
  const auto report = run_comparison(model, Experiment(cfg), ref);
  write_comparison(cfg.output_dir(), report);
  std::cout << to_json(report).dump(2) << '\n';
  return 0;
}

int cmd_sweep(const Common& c, const std::vector<std::string>& axes, long repeats) {
  const Json user = c.user_json();
  std::vector<std::pair<std::string, std::vector<double>>> parsed;
  for (const auto& a : axes) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("axis must look like NAME=v1,v2,...");
    std::vector<double> values;
    std::stringstream ss(a.substr(eq + 1));
    for (std::string v; std::getline(ss, v, ',');) {
      try {
        values.push_back(std::stod(v));
      } catch (const std::exception&) {
        throw ConfigError("axis value '" + v + "' is not a number");
      }
    }
    parsed.emplace_back(a.substr(0, eq), std::move(values));
  }
  const auto cfg = load_config(user);
  const auto cells = sweep(user, parsed, repeats);
  const fs::path dir = cfg.output_dir();
  fs::create_directories(dir);
  write_text_file(dir / "sweep.csv", [&](std::ostream& o) { write_sweep(o, cells); });
  long failed = 0;
  for (const auto& cell : cells)
    if (cell.status != "ok") ++failed;
  std::cout << "wrote " << cells.size() << " cells (" << failed << " failed) to " << (dir / "sweep.csv").string()
            << '\n';
  return 0;
}

int cmd_reproduce(const std::string& figure, const std::string& out, bool quick, std::uint64_t seed) {
  const auto r = reproduce(figure, out.empty() ? fs::path("results") / figure : fs::path(out), quick, seed);
  for (const auto& c : r.checks)
    std::cout << (c.passed ? "PASS " : "FAIL ") << figure << ": " << c.name << " (" << c.detail << ")\n";
  if (quick) return 0;
  return r.passed() ? 0 : kExitTolerance;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  Common common;
  try {
    common.overrides = extract_overrides(args);
  } catch (const abmkoop::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  CLI::App app{"Coarse-grained SDE models of agent-based dynamics"};
  app.require_subcommand(1);
  app.footer(
      "Config keys can be overridden with --dotted.key value (for example --sampling.k 50).\n"
      "Set ABMKOOP_WORKERS to control the number of worker threads.");

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("config", common.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  };

  bool extinction = false;
  auto* simulate = app.add_subcommand("simulate", "raw ABM trajectories on the integrator grid");
  add_config(simulate);
  simulate->add_flag("--extinction", extinction, "also run the predator-prey extinction statistic");

  auto* estimate = app.add_subcommand("estimate", "Kramers-Moyal measurements only");
  add_config(estimate);

  std::string measurements;
  auto* identify = app.add_subcommand("identify", "fit a model (full pipeline, or from a measurement table)");
  add_config(identify);
  identify->add_option("--measurements", measurements, "persisted measurement table")->check(CLI::ExistingFile);

  std::string model_path;
  bool trajectories = false;
  auto* predict = app.add_subcommand("predict", "integrate a model file");
  add_config(predict);
  predict->add_option("--model", model_path, "model file")->required()->check(CLI::ExistingFile);
  predict->add_flag("--trajectories", trajectories, "also write every path");

  std::string reference = "analytic";
  auto* compare = app.add_subcommand("compare", "learned model vs. analytic limit or ABM ensemble");
  add_config(compare);
  compare->add_option("--model", model_path, "model file")->required()->check(CLI::ExistingFile);
  compare->add_option("--reference", reference, "analytic or abm")->check(CLI::IsMember({"analytic", "abm"}));

  std::vector<std::string> axes;
  long repeats = 1;
  auto* sweep_cmd = app.add_subcommand("sweep", "coefficient error over a grid of N, k, m, p or tau");
  add_config(sweep_cmd);
  sweep_cmd->add_option("--axis", axes, "NAME=v1,v2,... (repeatable)")->required();
  sweep_cmd->add_option("--repeats", repeats, "seeds per cell");

  std::string figure, out_dir;
  bool quick = false;
  auto* repro = app.add_subcommand("reproduce", "canned experiment for one figure");
  repro->add_option("figure", figure, "fig4, fig5a, fig5b, fig6, fig7 or fig8")
      ->required()
      ->check(CLI::IsMember(reproducible_figures()));
  repro->add_option("--out", out_dir, "output directory (default results/<figure>)");
  repro->add_flag("--quick", quick, "reduced sizes; checks are reported but do not set the exit code");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*simulate) return cmd_simulate(common, extinction);
    if (*estimate) return cmd_estimate(common);
    if (*identify) return cmd_identify(common, measurements);
    if (*predict) return cmd_predict(common, model_path, trajectories);
    if (*compare) return cmd_compare(common, model_path, reference);
    if (*sweep_cmd) return cmd_sweep(common, axes, repeats);
    if (*repro) {
      std::uint64_t seed = 1;
      for (const auto& [k, v] : common.overrides) {
        if (k == "seed") seed = std::stoull(v);
        else if (k == "output_dir") out_dir = v;
        else throw ConfigError("reproduce accepts only --seed and --output_dir overrides");
      }
      return cmd_reproduce(figure, out_dir, quick, seed);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitStage;
  }
  return 0;
}
