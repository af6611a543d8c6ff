#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "abmkoop/config.hpp"
#include "abmkoop/conservation.hpp"
#include "abmkoop/gedmd.hpp"
#include "abmkoop/km.hpp"
#include "abmkoop/mjp.hpp"
#include "abmkoop/prey.hpp"
#include "abmkoop/sde.hpp"
#include "abmkoop/voter.hpp"

namespace abmkoop {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Experiment context: the ABM, samplers and reference model a config implies.

class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)), kind_(cfg_.kind()) {
    switch (kind_) {
      case ExperimentKind::complete_evm:
      case ExperimentKind::custom: {
        model_ = std::make_unique<JumpModel>(cfg_.jump_model());
        for (const auto& r : model_->rules()) {
          long s = 0;
          for (long v : r.net_change()) s += v;
          if (s != 0) throw ConfigError("jump-model experiments need rules that conserve the population");
        }
        break;
      }
      case ExperimentKind::clustered_evm:
        rates_ = cfg_.rates();
        network_ = std::make_unique<Network>(
            make_clustered_network(cfg_.cluster_sizes(), cfg_.inter_cluster_p(), cfg_.network_seed()));
        break;
      case ExperimentKind::random_network_evm:
        rates_ = cfg_.rates();
        network_ = std::make_unique<Network>(make_random_network(static_cast<int>(cfg_.population_size()),
                                                                 cfg_.edge_probability(), cfg_.network_seed()));
        break;
      case ExperimentKind::ppm: ppm_ = cfg_.ppm_params(); break;
    }
  }

  const ExperimentConfig& config() const noexcept { return cfg_; }
  ExperimentKind kind() const noexcept { return kind_; }
  const Network* network() const noexcept { return network_.get(); }
  const JumpModel* jump_model() const noexcept { return model_.get(); }

  /// Scale between ABM coordinates and model coordinates.
  double scale_factor() const {
    if (!cfg_.scale()) return 1.0;
    switch (kind_) {
      case ExperimentKind::complete_evm:
      case ExperimentKind::custom:
      case ExperimentKind::ppm: return static_cast<double>(cfg_.population_size());
      default: return 1.0;  // network samplers already return frequencies
    }
  }

  /// N recorded in the identified model (multiplies the diffusion in
  /// coefficient comparisons).
  long model_population() const {
    if (kind_ == ExperimentKind::ppm) return cfg_.scale() ? cfg_.population_size() : 1;
    return cfg_.population_size();
  }

  DictionaryPtr dictionary() const { return make_dictionary(cfg_.model_dim(), cfg_.degree()); }

  /// Full-coordinate ABM state -> model coordinates.
  Vector to_model(const Vector& full) const {
    Vector x = full / scale_factor();
    const auto layout = cfg_.conservation();
    if (!layout) return x;
    Vector r(layout->reduced_dim());
    for (int i = 0; i < layout->full_dim(); ++i)
      if (!layout->is_dropped(i)) r(layout->reduced_index(i)) = x(i);
    return r;
  }

  /// Initial state of the config in model coordinates. For jump models the
  /// frequencies are first rounded to the integer counts the ABM starts from.
  Vector initial_model_state() const {
    Vector x0 = cfg_.initial_state();
    if (model_) {
      const auto counts = round_counts(x0, model_->population_size());
      Vector c(x0.size());
      for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = static_cast<double>(counts[static_cast<std::size_t>(i)]);
      return to_model(c);
    }
    return to_model(x0);
  }

  // -------------------------------------------------------------------------
  // Measurements.

  std::vector<Measurement> estimate() const {
    const SamplingPlan plan = cfg_.sampling_plan();
    plan.validate();
    const std::uint64_t point_seed = derive_seed(cfg_.seed(), {ExperimentConfig::kPointStream});
    const std::uint64_t sample_seed = derive_seed(cfg_.seed(), {ExperimentConfig::kSampleStream});
    switch (kind_) {
      case ExperimentKind::complete_evm:
      case ExperimentKind::custom: {
        Rng rng = make_rng(point_seed);
        const auto pts = sample_simplex_points(model_->population_size(), model_->num_types(), plan.num_points, rng);
        std::vector<Vector> xs;
        for (const auto& p : pts) {
          Vector v(static_cast<Eigen::Index>(p.size()));
          for (std::size_t i = 0; i < p.size(); ++i) v(static_cast<Eigen::Index>(i)) = static_cast<double>(p[i]);
          xs.push_back(std::move(v));
        }
        return km_estimate_all(ssa_sampler(*model_), xs, plan, sample_seed);
      }
      case ExperimentKind::clustered_evm:
      case ExperimentKind::random_network_evm: {
        const int d = rates_.num_types();
        Rng rng = make_rng(point_seed);
        std::vector<Vector> xs;
        for (long l = 0; l < plan.num_points; ++l) {
          Vector c(network_->num_clusters() * d);
          for (int q = 0; q < network_->num_clusters(); ++q) {
            const long size = network_->cluster_size(q);
            const auto comp = random_composition(size, d, rng);
            for (int i = 0; i < d; ++i)
              c(q * d + i) = static_cast<double>(comp[static_cast<std::size_t>(i)]) / static_cast<double>(size);
          }
          xs.push_back(std::move(c));
        }
        return km_estimate_all(voter_sampler(*network_, rates_), xs, plan, sample_seed);
      }
      case ExperimentKind::ppm: return estimate_ppm(plan, point_seed, sample_seed);
    }
    return {};
  }

  /// Conservation reduction and frequency scaling.
  std::vector<Measurement> normalize(const std::vector<Measurement>& raw) const {
    const double n = kind_ == ExperimentKind::clustered_evm || kind_ == ExperimentKind::random_network_evm
                         ? 1.0
                         : static_cast<double>(cfg_.population_size());
    return reduce_and_scale(raw, n, cfg_.conservation(), cfg_.scale() && n != 1.0);
  }

  // -------------------------------------------------------------------------
  // Reference models and ABM ensembles.

  /// Analytic large-population limit in model coordinates.
  IdentifiedSde analytic_reference() const {
    if (!cfg_.scale()) throw ContractError("the analytic reference is defined in scaled coordinates");
    auto dict = dictionary();
    switch (kind_) {
      case ExperimentKind::complete_evm:
      case ExperimentKind::custom: {
        const int d = model_->num_types();
        auto full = limit_sde(*model_, make_dictionary(d, std::max(cfg_.degree(), model_->max_order() + 1)));
        auto red = reduce_conserved(full, ConservationLayout{1, d}, dict);
        red.metadata["source"] = "limit_sde";
        return red;
      }
      case ExperimentKind::clustered_evm: {
        const auto sizes = cfg_.cluster_sizes();
        if (sizes.size() != 2 || sizes[0] != sizes[1])
          throw ContractError("the analytic two-cluster limit needs two clusters of equal size");
        auto sde = two_cluster_limit_sde(rates_, cfg_.inter_cluster_p(), sizes[0], dict);
        sde.metadata["source"] = "two_cluster_limit_sde";
        return sde;
      }
      case ExperimentKind::random_network_evm: {
        // mean-field approximation: the complete-network limit with the same N
        const int d = rates_.num_types();
        const JumpModel m = make_evm_model(rates_, cfg_.population_size());
        auto red = reduce_conserved(limit_sde(m, make_dictionary(d, std::max(3, cfg_.degree()))),
                                    ConservationLayout{1, d}, dict);
        red.metadata["source"] = "mean_field_limit_sde";
        return red;
      }
      case ExperimentKind::ppm: break;
    }
    throw ContractError("no analytic reference exists for the predator-prey model");
  }

  /// One ABM realization sampled on the integrator's save grid in full ABM
  /// coordinates (counts, or cluster frequencies for network models). Path p
  /// draws from derive_seed(seed, {abm stream, p}). With `surviving_only`,
  /// predator-prey realizations in which the predators die out first, or
  /// that hit the agent cap, emit nothing; otherwise a capped realization is
  /// emitted up to the cap.
  template <typename Save>
  void abm_path_full(long path, const EmConfig& em, Save&& save, bool surviving_only = true) const {
    const double save_dt = em.dt * static_cast<double>(em.save_stride);
    const long slots = em.num_steps() / em.save_stride;
    Rng rng = make_rng(derive_seed(cfg_.seed(), {ExperimentConfig::kAbmStream}), {static_cast<std::uint64_t>(path)});
    const Vector x0 = cfg_.initial_state();
    switch (kind_) {
      case ExperimentKind::complete_evm:
      case ExperimentKind::custom: {
        const auto counts = round_counts(x0, model_->population_size());
        PopulationState s{counts};
        SsaSimulator sim(*model_);
        auto emit = [&](long slot) {
          Vector v(static_cast<Eigen::Index>(s.size()));
          for (std::size_t i = 0; i < s.size(); ++i) v(static_cast<Eigen::Index>(i)) = static_cast<double>(s[i]);
          save(slot, v);
        };
        emit(0);
        for (long k = 1; k <= slots; ++k) {
          sim.advance(s, save_dt, rng);
          emit(k);
        }
        return;
      }
      case ExperimentKind::clustered_evm:
      case ExperimentKind::random_network_evm: {
        const long sweeps = std::lround(save_dt / rates_.step_size);
        if (sweeps < 1 || std::abs(static_cast<double>(sweeps) * rates_.step_size - save_dt) > 1e-9)
          throw ConfigError("integrator save interval must be a multiple of rates.step_size");
        const int d = rates_.num_types();
        AgentTypeState s = lift_macro_to_micro(x0, *network_, d, rng);
        DiscreteVoterStepper stepper(*network_, rates_, cache_);
        save(0, aggregate(*network_, s, d).freqs);
        for (long k = 1; k <= slots; ++k) {
          for (long i = 0; i < sweeps; ++i) stepper.step(s, rng);
          save(k, aggregate(*network_, s, d).freqs);
        }
        return;
      }
      case ExperimentKind::ppm: {
        const long steps = std::lround(save_dt);
        if (steps < 1 || std::abs(static_cast<double>(steps) - save_dt) > 1e-9)
          throw ConfigError("predator-prey save interval must be a whole number of steps");
        PpmState s = ppm_uniform_state(std::lround(x0(0)), std::lround(x0(1)), ppm_, rng);
        PpmStepper stepper(ppm_);
        std::vector<Vector> buffer;
        bool prey_gone = false;
        auto record = [&]() {
          const CountState c = ppm_counts(s);
          Vector v(2);
          v << static_cast<double>(c.prey), static_cast<double>(c.predators);
          buffer.push_back(v);
          if (c.prey == 0) prey_gone = true;
          return prey_gone || c.predators > 0;
        };
        bool keep = record();
        for (long k = 1; k <= slots && (keep || !surviving_only); ++k) {
          try {
            for (long i = 0; i < steps; ++i) stepper.step(s, rng);
          } catch (const CapacityError&) {
            keep = false;
            break;
          }
          keep = record() && keep;
        }
        if (!keep && surviving_only) return;
        for (std::size_t k = 0; k < buffer.size(); ++k) save(static_cast<long>(k), buffer[k]);
        return;
      }
    }
  }

  /// Same realization in model coordinates.
  template <typename Save>
  void abm_path(long path, const EmConfig& em, Save&& save) const {
    abm_path_full(path, em, [&](long slot, const Vector& v) { save(slot, to_model(v)); });
  }

  EnsembleStats abm_ensemble(const EmConfig& em) const {
    return accumulate_ensemble(em.num_paths, save_times(em), cfg_.model_dim(),
                               [&](long p, auto&& save) { abm_path(p, em, save); });
  }

 private:
  std::vector<Measurement> estimate_ppm(const SamplingPlan& plan, std::uint64_t point_seed,
                                        std::uint64_t sample_seed) const {
    // 1. count trajectories from the configured initial condition
    const long runs = cfg_.ppm_trajectories();
    const long horizon = cfg_.ppm_horizon();
    const std::uint64_t traj_seed = derive_seed(cfg_.seed(), {ExperimentConfig::kTrajectoryStream});
    auto initial = [&](Rng& rng) {
      return ppm_uniform_state(cfg_.ppm_initial_prey(), cfg_.ppm_initial_predators(), ppm_, rng);
    };
    std::vector<std::vector<Vector>> counts(static_cast<std::size_t>(runs));
    parallel_for(static_cast<std::size_t>(runs), [&](std::size_t r) {
      Rng rng = make_rng(traj_seed, {r});
      PpmState s = initial(rng);
      const auto res = ppm_run(std::move(s), ppm_, horizon, rng, true);
      for (const auto& c : res.counts) {
        Vector v(2);
        v << static_cast<double>(c.prey), static_cast<double>(c.predators);
        counts[r].push_back(v);
      }
    });
    // 2. distinct states along the trajectories, one per lag multiple
    const auto stride = static_cast<std::size_t>(std::max(1L, std::lround(plan.lag)));
    auto candidates = collect_distinct_states(counts, stride);
    // states without predators or prey are absorbing for one breed; they carry
    // no information about the interaction terms
    std::erase_if(candidates, [](const TrajectoryPoint& p) { return p.state(0) <= 0.0 || p.state(1) <= 0.0; });
    if (static_cast<long>(candidates.size()) < plan.num_points)
      throw CapacityError("only " + std::to_string(candidates.size()) + " distinct states were collected, " +
                          std::to_string(plan.num_points) + " requested");
    Rng pick = make_rng(point_seed);
    for (long i = 0; i < plan.num_points; ++i) {
      const auto j = static_cast<std::size_t>(i) +
                     static_cast<std::size_t>(uniform01(pick) * static_cast<double>(candidates.size() - static_cast<std::size_t>(i)));
      std::swap(candidates[static_cast<std::size_t>(i)], candidates[j]);
    }
    candidates.resize(static_cast<std::size_t>(plan.num_points));
    // 3. replay each trajectory to recover the spatial snapshots
    std::map<std::size_t, std::vector<std::size_t>> by_run;
    for (std::size_t l = 0; l < candidates.size(); ++l) by_run[candidates[l].trajectory].push_back(l);
    std::vector<PpmState> snapshots(candidates.size());
    std::vector<std::size_t> run_ids;
    for (const auto& [r, _] : by_run) run_ids.push_back(r);
    parallel_for(run_ids.size(), [&](std::size_t idx) {
      const std::size_t r = run_ids[idx];
      std::vector<std::size_t> wanted = by_run.at(r);
      std::sort(wanted.begin(), wanted.end(),
                [&](std::size_t a, std::size_t b) { return candidates[a].step < candidates[b].step; });
      Rng rng = make_rng(traj_seed, {r});
      PpmState s = initial(rng);
      PpmStepper stepper(ppm_);
      std::size_t step = 0;
      for (std::size_t l : wanted) {
        while (step < candidates[l].step) {
          stepper.step(s, rng);
          ++step;
        }
        snapshots[l] = s;
      }
    });
    // 4. k independent continuations of length tau from every snapshot
    const long steps = std::max(1L, std::lround(plan.lag));
    std::vector<Measurement> out(candidates.size());
    parallel_for(candidates.size(), [&](std::size_t l) {
      const PpmState& snap = snapshots[l];
      PpmStepper stepper(ppm_);
      auto sampler = [&](const Vector&, double, Rng& rng) {
        PpmState s = snap;
        for (long i = 0; i < steps; ++i) stepper.step(s, rng);
        const CountState c = ppm_counts(s);
        Vector v(2);
        v << static_cast<double>(c.prey), static_cast<double>(c.predators);
        return v;
      };
      out[l] = km_estimate(sampler, candidates[l].state, plan, derive_seed(sample_seed, {l}));
    });
    return out;
  }

  ExperimentConfig cfg_;
  ExperimentKind kind_;
  std::unique_ptr<JumpModel> model_;
  std::unique_ptr<Network> network_;
  VoterRates rates_;
  PpmParams ppm_;
  std::shared_ptr<TransitionCache> cache_ = std::make_shared<TransitionCache>();
};

// ---------------------------------------------------------------------------
// Learning: estimate, reduce, fit, extract.

struct LearnResult {
  std::vector<Measurement> measurements;  ///< reduced and scaled
  GeneratorMatrix generator;
  IdentifiedSde model;
  std::vector<std::string> warnings;
  std::map<std::string, double> timings;  ///< seconds per stage
};

namespace detail {

template <typename Fn>
auto run_stage(const std::string& name, std::map<std::string, double>& timings, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      timings[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } else {
      auto r = fn();
      timings[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return r;
    }
  } catch (const StageError&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace detail

/// Fits and extracts a model from already normalized measurements.
inline LearnResult identify_from(const Experiment& exp, std::vector<Measurement> measurements) {
  LearnResult res;
  res.measurements = std::move(measurements);
  const auto& cfg = exp.config();
  auto dict = exp.dictionary();
  res.generator = detail::run_stage("fit", res.timings,
                                    [&] { return fit_generator(res.measurements, dict, cfg.fit_options()); });
  if (res.generator.underdetermined)
    res.warnings.push_back("fewer measurements (" + std::to_string(res.measurements.size()) +
                           ") than dictionary entries (" + std::to_string(dict->size()) + ")");
  if (res.generator.rank_deficient)
    res.warnings.push_back("data matrix is rank deficient (rank " + std::to_string(res.generator.rank) + ")");
  res.model = detail::run_stage("extract", res.timings, [&] {
    return identify(res.generator, exp.model_population(), ProductPolicy::truncate, cfg.extraction());
  });
  res.model.metadata["kind"] = cfg.json.at("kind").get<std::string>();
  res.model.metadata["m"] = std::to_string(res.measurements.size());
  res.model.metadata["k"] = std::to_string(cfg.sampling_plan().samples_per_point);
  res.model.metadata["tau"] = cfg.json.at("sampling").at("tau").dump();
  res.model.metadata["seed"] = std::to_string(cfg.seed());
  res.model.metadata["config_hash"] = hex64(config_hash(cfg));
  res.model.metadata["source"] = "identified";
  return res;
}

inline LearnResult learn(const Experiment& exp) {
  std::map<std::string, double> timings;
  auto raw = detail::run_stage("estimate", timings, [&] { return exp.estimate(); });
  auto normalized = detail::run_stage("reduce", timings, [&] { return exp.normalize(raw); });
  LearnResult res = identify_from(exp, std::move(normalized));
  res.timings.insert(timings.begin(), timings.end());
  return res;
}

inline LearnResult learn(const ExperimentConfig& cfg) { return learn(Experiment(cfg)); }

// ---------------------------------------------------------------------------
// Artifact persistence.

inline void write_json_file(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

template <typename Writer>
void write_text_file(const fs::path& path, Writer&& w) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  w(out);
}

inline IdentifiedSde read_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file '" + path + "'");
  try {
    return sde_from_json(Json::parse(in));
  } catch (const Json::parse_error& e) {
    throw DataError("model file '" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_model_file(const fs::path& path, const IdentifiedSde& sde) { write_json_file(path, to_json(sde)); }

inline Json manifest_json(const ExperimentConfig& cfg, const std::vector<std::string>& stages,
                          const std::vector<std::string>& warnings, const std::optional<std::string>& failure) {
  Json seeds = {{"master", cfg.seed()},
                {"network", cfg.json.at("network").at("seed")},
                {"points", derive_seed(cfg.seed(), {ExperimentConfig::kPointStream})},
                {"samples", derive_seed(cfg.seed(), {ExperimentConfig::kSampleStream})},
                {"integrator", derive_seed(cfg.seed(), {ExperimentConfig::kIntegratorStream})},
                {"abm", derive_seed(cfg.seed(), {ExperimentConfig::kAbmStream})}};
  Json m = {{"schema", "abmkoop.manifest.v1"},
            {"config", cfg.json},
            {"config_hash", hex64(config_hash(cfg))},
            {"seeds", seeds},
            {"m", cfg.sampling_plan().num_points},
            {"stages_completed", stages},
            {"warnings", warnings}};
  m["status"] = failure ? "failed" : "ok";
  if (failure) m["failure"] = *failure;
  return m;
}

struct PipelineArtifacts {
  fs::path directory;
  LearnResult result;
};

/// Runs the learning pipeline and writes measurements.csv, generator.csv, model.json,
/// manifest.json and timings.json to the output directory. Completed stages
/// are persisted before a failure is rethrown.
inline PipelineArtifacts run_pipeline(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.output_dir();
  fs::create_directories(dir);
  std::vector<std::string> stages;
  std::map<std::string, double> timings;
  std::vector<std::string> warnings;
  auto persist_manifest = [&](const std::optional<std::string>& failure) {
    write_json_file(dir / "manifest.json", manifest_json(cfg, stages, warnings, failure));
    write_json_file(dir / "timings.json", Json(timings));
  };
  try {
    Experiment exp = detail::run_stage("setup", timings, [&] { return Experiment(cfg); });
    auto raw = detail::run_stage("estimate", timings, [&] { return exp.estimate(); });
    stages.push_back("estimate");
    auto normalized = detail::run_stage("reduce", timings, [&] { return exp.normalize(raw); });
    write_text_file(dir / "measurements.csv", [&](std::ostream& o) { write_measurements(o, normalized); });
    stages.push_back("reduce");
    LearnResult res = identify_from(exp, std::move(normalized));
    timings.insert(res.timings.begin(), res.timings.end());
    res.timings = timings;
    warnings = res.warnings;
    write_text_file(dir / "generator.csv", [&](std::ostream& o) { write_generator(o, res.generator); });
    stages.push_back("fit");
    write_model_file(dir / "model.json", res.model);
    stages.push_back("extract");
    persist_manifest(std::nullopt);
    return {dir, std::move(res)};
  } catch (const StageError& e) {
    persist_manifest(std::string(e.what()));
    throw;
  }
}

// ---------------------------------------------------------------------------
// Comparison.

enum class ReferenceKind { analytic_limit, abm_ensemble };

struct ComparisonReport {
  EnsembleStats learned;
  EnsembleStats reference;
  double mean_rmse = 0.0;
  double std_rmse = 0.0;
  double mean_sup_gap = 0.0;
  double std_sup_gap = 0.0;
};

inline ComparisonReport compare_stats(EnsembleStats learned, EnsembleStats reference) {
  if (learned.times.size() != reference.times.size()) throw ContractError("ensembles use different time grids");
  if (!learned.mean.empty() && learned.mean.front().size() != reference.mean.front().size())
    throw ContractError("learned model and reference have different dimensions");
  ComparisonReport r;
  r.mean_rmse = rmse(learned.mean, reference.mean);
  r.std_rmse = rmse(learned.std, reference.std);
  r.mean_sup_gap = sup_gap(learned.mean, reference.mean);
  r.std_sup_gap = sup_gap(learned.std, reference.std);
  r.learned = std::move(learned);
  r.reference = std::move(reference);
  return r;
}

/// Simulates the learned model and the chosen reference from the config's
/// initial state on the integrator grid.
inline ComparisonReport run_comparison(const IdentifiedSde& model, const Experiment& exp, ReferenceKind reference,
                                       std::optional<EmConfig> em_override = std::nullopt) {
  const auto& cfg = exp.config();
  const EmConfig em = em_override ? *em_override : cfg.integrator();
  const Vector x0 = exp.initial_model_state();
  if (model.dim() != x0.size()) throw ContractError("model dimension does not match the experiment");
  EnsembleStats learned = ensemble_moments(model, x0, em);
  EnsembleStats ref;
  if (reference == ReferenceKind::analytic_limit) {
    EmConfig ref_em = em;
    ref_em.seed = derive_seed(em.seed, {1});
    const IdentifiedSde analytic = exp.analytic_reference();
    if (analytic.dim() != model.dim()) throw ContractError("model dimension does not match the reference");
    ref = ensemble_moments(analytic, x0, ref_em);
  } else {
    ref = exp.abm_ensemble(em);
  }
  return compare_stats(std::move(learned), std::move(ref));
}

inline Json to_json(const ComparisonReport& r) {
  return {{"mean_rmse", r.mean_rmse},
          {"std_rmse", r.std_rmse},
          {"mean_sup_gap", r.mean_sup_gap},
          {"std_sup_gap", r.std_sup_gap},
          {"paths", r.learned.num_paths},
          {"t_end", r.learned.times.empty() ? 0.0 : r.learned.times.back()}};
}

inline void write_comparison(const fs::path& dir, const ComparisonReport& r) {
  fs::create_directories(dir);
  write_text_file(dir / "learned_ensemble.csv", [&](std::ostream& o) { write_ensemble(o, r.learned); });
  write_text_file(dir / "reference_ensemble.csv", [&](std::ostream& o) { write_ensemble(o, r.reference); });
  write_json_file(dir / "comparison.json", to_json(r));
}

// ---------------------------------------------------------------------------
// Sweeps.

struct SweepCell {
  std::map<std::string, double> values;  ///< axis name -> value
  long repeat = 0;
  std::optional<CoefficientError> error;
  long m = 0;
  std::string status = "ok";
};

/// Config key an axis name refers to.
inline std::string sweep_axis_key(const std::string& axis) {
  if (axis == "N") return "population_size";
  if (axis == "k") return "sampling.k";
  if (axis == "m") return "sampling.m";
  if (axis == "p") return "network.p";
  if (axis == "tau") return "sampling.tau";
  throw ConfigError("unknown sweep axis '" + axis + "' (expected N, k, m, p or tau)");
}

/// Runs the pipeline on the Cartesian product of the axis values, `repeats`
/// times per cell with seeds derive_seed(seed, {repeat}), and records the
/// coefficient error against the analytic reference. Failed cells are
/// recorded and the sweep continues.
inline std::vector<SweepCell> sweep(const Json& user_template, const std::vector<std::pair<std::string, std::vector<double>>>& axes,
                                    long repeats = 1) {
  if (axes.empty()) throw ConfigError("a sweep needs at least one axis");
  for (const auto& [name, values] : axes) {
    sweep_axis_key(name);
    if (values.empty()) throw ConfigError("sweep axis '" + name + "' has no values");
  }
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  const std::uint64_t base_seed = load_config(user_template).seed();
  std::vector<std::map<std::string, double>> grid{{}};
  for (const auto& [name, values] : axes) {
    std::vector<std::map<std::string, double>> next;
    for (const auto& g : grid)
      for (double v : values) {
        auto c = g;
        c[name] = v;
        next.push_back(std::move(c));
      }
    grid = std::move(next);
  }
  std::vector<SweepCell> cells;
  for (const auto& g : grid) {
    for (long r = 0; r < repeats; ++r) {
      SweepCell cell;
      cell.values = g;
      cell.repeat = r;
      try {
        Json user = user_template;
        for (const auto& [name, v] : g) {
          const bool integral = name != "p" && name != "tau";
          apply_override(user, sweep_axis_key(name), integral ? Json(std::lround(v)).dump() : Json(v).dump());
        }
        user["seed"] = derive_seed(base_seed, {static_cast<std::uint64_t>(r)});
        const ExperimentConfig cfg = load_config(user);
        const Experiment exp(cfg);
        const LearnResult res = learn(exp);
        cell.m = static_cast<long>(res.measurements.size());
        cell.error = coefficient_error(res.model, exp.analytic_reference());
      } catch (const std::exception& e) {
        cell.status = std::string("failed: ") + e.what();
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

inline void write_sweep(std::ostream& out, const std::vector<SweepCell>& cells) {
  if (cells.empty()) return;
  for (const auto& [name, _] : cells.front().values) out << name << ',';
  out << "repeat,m,drift_rmse,diffusion_rmse,status\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& c : cells) {
    for (const auto& [_, v] : c.values) out << v << ',';
    out << c.repeat << ',' << c.m << ',';
    if (c.error)
      out << c.error->drift << ',' << c.error->diffusion << ',';
    else
      out << "nan,nan,";
    std::string status = c.status;
    std::replace(status.begin(), status.end(), ',', ';');
    out << status << '\n';
  }
}

// ---------------------------------------------------------------------------
// Analysis helpers shared by the reproduction commands and tests.

/// max_i |c_{1,i} - c_{2,i}| of a two-cluster state in reduced coordinates
/// (d-1 kept types per cluster; the dropped type is restored).
inline double cluster_gap(const Vector& reduced, int num_types) {
  const int kept = num_types - 1;
  if (reduced.size() != 2 * kept) throw ContractError("state is not a two-cluster reduced state");
  const Vector a = restore_conserved(reduced.head(kept));
  const Vector b = restore_conserved(reduced.tail(kept));
  return (a - b).cwiseAbs().maxCoeff();
}

/// Number of complete revolutions of (x - center) around `center` in the
/// plane: the unwrapped polar angle divided by 2 pi, rounded toward zero.
inline long count_cycles(const std::vector<Vector>& path, const Vector& center) {
  double total = 0.0;
  bool have_prev = false;
  double prev = 0.0;
  for (const auto& x : path) {
    const double dx = x(0) - center(0), dy = x(1) - center(1);
    if (dx == 0.0 && dy == 0.0) continue;
    const double ang = std::atan2(dy, dx);
    if (have_prev) {
      double d = ang - prev;
      if (d > M_PI) d -= 2.0 * M_PI;
      if (d < -M_PI) d += 2.0 * M_PI;
      total += d;
    }
    prev = ang;
    have_prev = true;
  }
  return static_cast<long>(std::abs(total) / (2.0 * M_PI));
}

/// Partial derivative of drift component i with respect to x_j at x.
inline double drift_partial(const IdentifiedSde& sde, int i, int j, const Vector& x) {
  return sde.drift.component(i).derivative(j)(x);
}

}  // namespace abmkoop
