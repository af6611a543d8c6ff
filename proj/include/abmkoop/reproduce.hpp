#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "abmkoop/pipeline.hpp"

namespace abmkoop {

struct ReproduceCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ReproduceReport {
  std::string figure;
  bool quick = false;
  std::vector<ReproduceCheck> checks;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const ReproduceCheck& c) { return c.passed; });
  }
};

inline const std::vector<std::string>& reproducible_figures() {
  static const std::vector<std::string> ids{"fig4", "fig5a", "fig5b", "fig6", "fig7", "fig8"};
  return ids;
}

inline std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// PPM statistics.

struct ExtinctionStats {
  long runs = 0;
  long predators_first = 0;
  long prey_first = 0;
  long capped = 0;
  double fraction() const { return runs ? static_cast<double>(predators_first) / static_cast<double>(runs) : 0.0; }
};

/// Runs `runs` independent PPM realizations from the configured initial
/// condition up to the configured horizon; run r uses
/// derive_seed(seed, {abm stream, r}).
inline ExtinctionStats ppm_extinction(const ExperimentConfig& cfg, long runs) {
  const PpmParams prm = cfg.ppm_params();
  std::vector<PpmOutcome> outcome(static_cast<std::size_t>(runs));
  const std::uint64_t base = derive_seed(cfg.seed(), {ExperimentConfig::kAbmStream});
  parallel_for(outcome.size(), [&](std::size_t r) {
    Rng rng = make_rng(base, {r});
    PpmState s = ppm_uniform_state(cfg.ppm_initial_prey(), cfg.ppm_initial_predators(), prm, rng);
    outcome[r] = ppm_run(std::move(s), prm, cfg.ppm_horizon(), rng, true).outcome;
  });
  ExtinctionStats st;
  st.runs = runs;
  for (auto o : outcome) {
    if (o == PpmOutcome::predators_extinct_first) ++st.predators_first;
    if (o == PpmOutcome::prey_extinct_first) ++st.prey_first;
    if (o == PpmOutcome::capped) ++st.capped;
  }
  return st;
}

/// Mean of the measurement points (the interior reference point for the
/// predator-prey sign checks).
inline Vector measurement_mean(const std::vector<Measurement>& ms) {
  if (ms.empty()) throw ContractError("no measurements");
  Vector m = Vector::Zero(ms.front().dim());
  for (const auto& x : ms) m += x.point;
  return m / static_cast<double>(ms.size());
}

struct CycleStats {
  long paths = 0;
  long diverged = 0;
  long with_two_cycles = 0;
  Vector center;
  double fraction() const { return paths ? static_cast<double>(with_two_cycles) / static_cast<double>(paths) : 0.0; }
};

/// Integrates `em.num_paths` paths of a planar model from x0 and counts full
/// revolutions of each path around the ensemble mean state (averaged over
/// paths and save times). Diverged paths count as failures.
inline CycleStats cycle_statistics(const IdentifiedSde& model, const Vector& x0, const EmConfig& em,
                                   long min_cycles = 2) {
  if (model.dim() != 2) throw ContractError("cycle statistics need a planar model");
  std::vector<std::optional<SdePath>> paths(static_cast<std::size_t>(em.num_paths));
  parallel_for(paths.size(), [&](std::size_t p) {
    try {
      paths[p] = euler_maruyama(model, x0, em, static_cast<long>(p));
    } catch (const IntegrationError&) {
    }
  });
  CycleStats st;
  st.paths = em.num_paths;
  st.center = Vector::Zero(2);
  long n = 0;
  for (const auto& p : paths) {
    if (!p) {
      ++st.diverged;
      continue;
    }
    for (const auto& x : p->states) st.center += x;
    n += static_cast<long>(p->states.size());
  }
  if (n > 0) st.center /= static_cast<double>(n);
  for (const auto& p : paths)
    if (p && count_cycles(p->states, st.center) >= min_cycles) ++st.with_two_cycles;
  return st;
}

// ---------------------------------------------------------------------------
// Canned experiments.

namespace detail {

inline Json base_config(const std::string& kind, std::uint64_t seed, const fs::path& out) {
  return {{"kind", kind}, {"seed", seed}, {"output_dir", out.string()}};
}

inline ReproduceCheck check(std::string name, bool ok, std::string detail) {
  return {std::move(name), ok, std::move(detail)};
}

/// Cluster-gap series of a two-cluster ensemble mean.
inline std::vector<double> cluster_gap_series(const EnsembleStats& st, int d) {
  std::vector<double> g;
  for (const auto& m : st.mean) g.push_back(cluster_gap(m, d));
  return g;
}

inline double max_over(const std::vector<double>& t, const std::vector<double>& v, double lo, double hi) {
  double m = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i] >= lo - 1e-12 && t[i] <= hi + 1e-12) m = std::max(m, v[i]);
  return m;
}

inline ReproduceReport fig4(const fs::path& out, bool quick, std::uint64_t seed) {
  const std::vector<double> ns = quick ? std::vector<double>{10, 100, 1000}
                                       : std::vector<double>{10, 25, 50, 100, 250, 500, 1000, 2500, 5000};
  const std::vector<double> ks = quick ? std::vector<double>{10, 100}
                                       : std::vector<double>{10, 25, 50, 100, 250, 500, 1000, 2500, 5000};
  const auto cells = sweep(base_config("complete_evm", seed, out), {{"N", ns}, {"k", ks}});
  write_text_file(out / "fig4_sweep.csv", [&](std::ostream& o) { write_sweep(o, cells); });
  auto err = [&](double n, double k) {
    for (const auto& c : cells)
      if (c.values.at("N") == n && c.values.at("k") == k && c.error) return c.error->drift;
    return std::numeric_limits<double>::quiet_NaN();
  };
  ReproduceReport r;
  const double e_small = err(ns.front(), ks.front()), e_large = err(ns.back(), ks.back());
  r.checks.push_back(check("drift error at largest (N, k) below smallest", e_large < e_small,
                           fmt(e_large) + " vs " + fmt(e_small)));
  double row_first = 0.0, row_last = 0.0;
  for (double k : ks) {
    row_first += err(ns.front(), k);
    row_last += err(ns.back(), k);
  }
  r.checks.push_back(check("k-averaged drift error decreases in N", row_last < row_first,
                           fmt(row_last / ks.size()) + " vs " + fmt(row_first / ks.size())));
  return r;
}

inline ReproduceReport fig5a(const fs::path& out, bool quick, std::uint64_t seed) {
  Json u = base_config("complete_evm", seed, out);
  u["population_size"] = quick ? 1000 : 5000;
  u["sampling"] = {{"m", quick ? 2000 : 5000}, {"k", 50}};
  u["integrator"] = {{"paths", quick ? 200 : 1000}, {"t_end", 10}, {"initial_state", {0.2, 0.7, 0.1}}};
  const auto cfg = load_config(u);
  const auto art = run_pipeline(cfg);
  const auto cmp = run_comparison(art.result.model, Experiment(cfg), ReferenceKind::analytic_limit);
  write_comparison(out, cmp);
  ReproduceReport r;
  r.checks.push_back(check("sup mean gap <= 0.02", cmp.mean_sup_gap <= 0.02, fmt(cmp.mean_sup_gap)));
  r.checks.push_back(check("sup std gap <= 0.01", cmp.std_sup_gap <= 0.01, fmt(cmp.std_sup_gap)));
  return r;
}

inline ReproduceReport fig5b(const fs::path& out, bool quick, std::uint64_t seed) {
  const std::vector<double> ms = quick ? std::vector<double>{50, 200, 800}
                                       : std::vector<double>{50, 100, 250, 500, 1000, 2500, 5000};
  ReproduceReport r;
  std::ofstream table(out / "fig5b_sweep.csv");
  for (long k : {10L, 100L}) {
    Json u = base_config("complete_evm", seed, out);
    u["population_size"] = quick ? 1000 : 5000;
    u["sampling"] = {{"k", k}};
    const auto cells = sweep(u, {{"m", ms}}, quick ? 2 : 100);
    std::ostringstream block;
    write_sweep(block, cells);
    std::string text = block.str();
    if (k != 10) text = text.substr(text.find('\n') + 1);
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);)
      table << (line.rfind("m,", 0) == 0 ? "k," : std::to_string(k) + ",") << line << '\n';
    auto mean_at = [&](double m) {
      double s = 0.0;
      long n = 0;
      for (const auto& c : cells)
        if (c.values.at("m") == m && c.error) {
          s += c.error->drift;
          ++n;
        }
      return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
    };
    const double first = mean_at(ms.front()), last = mean_at(ms.back());
    r.checks.push_back(check("k=" + std::to_string(k) + ": drift error decreases in m", last < first,
                             fmt(last) + " vs " + fmt(first)));
  }
  return r;
}

inline ReproduceReport fig6(const fs::path& out, bool quick, std::uint64_t seed) {
  ReproduceReport r;
  for (double p : {0.01, 0.2}) {
    const fs::path dir = out / (p < 0.1 ? "p0.01" : "p0.2");
    Json u = base_config("clustered_evm", seed, dir);
    u["network"] = {{"cluster_sizes", {50, 50}}, {"p", p}};
    u["rates"] = {{"exploration", 0.0}};
    u["sampling"] = {{"m", quick ? 300 : 1000}, {"k", quick ? 100 : 1000}};
    u["integrator"] = {{"paths", quick ? 200 : 1000}, {"t_end", 50}, {"save_every", 0.5}};
    const auto cfg = load_config(u);
    const auto art = run_pipeline(cfg);
    const Experiment exp(cfg);
    const auto cmp = run_comparison(art.result.model, exp, ReferenceKind::abm_ensemble);
    write_comparison(dir, cmp);
    const auto gap = cluster_gap_series(cmp.learned, cfg.num_types());
    if (p > 0.1) {
      const double late = max_over(cmp.learned.times, gap, 30.0, 50.0);
      r.checks.push_back(check("p=0.2: cluster gap <= 0.05 for t >= 30", late <= 0.05, fmt(late)));
    } else {
      const double early = max_over(cmp.learned.times, gap, 0.0, 30.0);
      r.checks.push_back(check("p=0.01: cluster gap > 0.1 in [0, 30]", early > 0.1, fmt(early)));
    }
  }
  return r;
}

inline ReproduceReport fig7(const fs::path& out, bool quick, std::uint64_t seed) {
  Json u = base_config("random_network_evm", seed, out);
  u["population_size"] = quick ? 200 : 500;
  u["network"] = {{"edge_probability", 0.1}};
  u["sampling"] = {{"m", quick ? 300 : 1000}, {"k", quick ? 100 : 1000}};
  u["integrator"] = {{"paths", quick ? 100 : 1000}, {"t_end", 10}};
  const auto cfg = load_config(u);
  const auto art = run_pipeline(cfg);
  const auto cmp = run_comparison(art.result.model, Experiment(cfg), ReferenceKind::abm_ensemble);
  write_comparison(out, cmp);
  std::vector<double> gap;
  for (std::size_t i = 0; i < cmp.learned.times.size(); ++i)
    gap.push_back((cmp.learned.mean[i] - cmp.reference.mean[i]).cwiseAbs().maxCoeff());
  const double t_end = cmp.learned.times.back();
  const double early = max_over(cmp.learned.times, gap, 0.0, 0.1 * t_end);
  const double overall = max_over(cmp.learned.times, gap, 0.0, t_end);
  ReproduceReport r;
  r.checks.push_back(check("early mean gap <= 0.05", early <= 0.05, fmt(early)));
  r.checks.push_back(check("gap grows with t", overall >= early, fmt(early) + " -> " + fmt(overall)));
  return r;
}

inline ReproduceReport fig8(const fs::path& out, bool quick, std::uint64_t seed) {
  Json u = base_config("ppm", seed, out);
  if (quick) {
    u["sampling"] = {{"m", 300}, {"k", 200}};
    u["ppm"] = {{"trajectories", 30}};
  } else {
    u["sampling"] = {{"m", 1000}, {"k", 1000}};
  }
  u["integrator"] = {{"paths", 100}, {"t_end", 500}};
  const auto cfg = load_config(u);
  const auto art = run_pipeline(cfg);
  const Experiment exp(cfg);
  // phase portrait: learned-model mean and ABM mean from the ABM initial state
  const auto cmp = run_comparison(art.result.model, exp, ReferenceKind::abm_ensemble);
  write_comparison(out, cmp);
  const Vector center = measurement_mean(art.result.measurements);
  const double dpx = drift_partial(art.result.model, 0, 1, center);
  const double dxp = drift_partial(art.result.model, 1, 0, center);
  EmConfig em = cfg.integrator();
  const auto cyc = cycle_statistics(art.result.model, center, em);
  ReproduceReport r;
  r.checks.push_back(check("d b_prey / d predators < 0", dpx < 0.0, fmt(dpx)));
  r.checks.push_back(check("d b_pred / d prey > 0", dxp > 0.0, fmt(dxp)));
  r.checks.push_back(check(">= 80% of paths complete two cycles", cyc.fraction() >= 0.8,
                           std::to_string(cyc.with_two_cycles) + "/" + std::to_string(cyc.paths)));
  return r;
}

}  // namespace detail

/// Runs the canned experiment for a figure id and writes its tables to `out`.
inline ReproduceReport reproduce(const std::string& figure, const fs::path& out, bool quick = false,
                                 std::uint64_t seed = 1) {
  fs::create_directories(out);
  ReproduceReport r;
  if (figure == "fig4") r = detail::fig4(out, quick, seed);
  else if (figure == "fig5a") r = detail::fig5a(out, quick, seed);
  else if (figure == "fig5b") r = detail::fig5b(out, quick, seed);
  else if (figure == "fig6") r = detail::fig6(out, quick, seed);
  else if (figure == "fig7") r = detail::fig7(out, quick, seed);
  else if (figure == "fig8") r = detail::fig8(out, quick, seed);
  else throw ConfigError("unknown figure '" + figure + "' (expected fig4, fig5a, fig5b, fig6, fig7 or fig8)");
  r.figure = figure;
  r.quick = quick;
  Json checks = Json::array();
  for (const auto& c : r.checks) checks.push_back({{"check", c.name}, {"passed", c.passed}, {"value", c.detail}});
  write_json_file(out / "checks.json", {{"figure", figure}, {"quick", quick}, {"checks", checks}});
  return r;
}

}  // namespace abmkoop
