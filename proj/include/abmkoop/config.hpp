#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "abmkoop/errors.hpp"
#include "abmkoop/gedmd.hpp"
#include "abmkoop/km.hpp"
#include "abmkoop/mjp.hpp"
#include "abmkoop/prey.hpp"
#include "abmkoop/sde.hpp"
#include "abmkoop/voter.hpp"

namespace abmkoop {

using Json = nlohmann::json;

enum class ExperimentKind { complete_evm, clustered_evm, random_network_evm, ppm, custom };

inline ExperimentKind parse_kind(const std::string& s) {
  if (s == "complete_evm") return ExperimentKind::complete_evm;
  if (s == "clustered_evm") return ExperimentKind::clustered_evm;
  if (s == "random_network_evm") return ExperimentKind::random_network_evm;
  if (s == "ppm") return ExperimentKind::ppm;
  if (s == "custom") return ExperimentKind::custom;
  throw ConfigError("unknown experiment kind '" + s + "'");
}

/// Every key with its default. Nulls are resolved per experiment kind when
/// the config is loaded.
inline Json default_config_json() {
  return Json::parse(R"({
    "kind": "complete_evm",
    "seed": 1,
    "output_dir": "abmkoop-out",
    "population_size": 10,
    "rates": {
      "imitation": [[0, 2, 1], [1, 0, 2], [2, 1, 0]],
      "exploration": 0.01,
      "inter_cluster_imitation": null,
      "step_size": 0.01
    },
    "network": {"cluster_sizes": [50, 50], "p": 0.2, "edge_probability": 0.1, "seed": null},
    "ppm": {
      "width": 100, "height": 100, "step_variance": 1, "p_rep": 0.03, "p_rep_pred": 0.5,
      "p_death": 0.02, "vision": 3, "max_agents": 1000000,
      "initial_prey": 250, "initial_predators": 30, "trajectories": 100, "horizon": 500
    },
    "custom_model": null,
    "sampling": {"m": null, "k": 100, "tau": null, "estimator": "centered"},
    "identification": {
      "degree": null, "extraction": "projected_products", "rel_cutoff": 1e-10,
      "hard_threshold": 0, "scale": null
    },
    "integrator": {
      "dt": null, "t_end": 10, "paths": 1000, "save_every": null,
      "projection": "simplex_clip", "initial_state": null
    }
  })");
}

/// A fully resolved experiment configuration. `json` is the canonical form:
/// every key present, nulls resolved, keys sorted.
struct ExperimentConfig {
  Json json;

  ExperimentKind kind() const { return parse_kind(json.at("kind").get<std::string>()); }
  std::uint64_t seed() const { return json.at("seed").get<std::uint64_t>(); }
  std::string output_dir() const { return json.at("output_dir").get<std::string>(); }
  long population_size() const { return json.at("population_size").get<long>(); }

  VoterRates rates() const {
    const auto& r = json.at("rates");
    VoterRates v;
    v.imitation = matrix(r.at("imitation"), "rates.imitation");
    const int d = static_cast<int>(v.imitation.rows());
    v.exploration = square_or_scalar(r.at("exploration"), d, "rates.exploration");
    if (!r.at("inter_cluster_imitation").is_null())
      v.inter_cluster_imitation = matrix(r.at("inter_cluster_imitation"), "rates.inter_cluster_imitation");
    v.step_size = r.at("step_size").get<double>();
    try {
      v.validate();
    } catch (const ContractError& e) {
      throw ConfigError(std::string("rates: ") + e.what());
    }
    return v;
  }

  int num_types() const {
    switch (kind()) {
      case ExperimentKind::ppm: return 2;
      case ExperimentKind::custom: return jump_model().num_types();
      default: return rates().num_types();
    }
  }

  std::vector<int> cluster_sizes() const { return json.at("network").at("cluster_sizes").get<std::vector<int>>(); }
  double inter_cluster_p() const { return json.at("network").at("p").get<double>(); }
  double edge_probability() const { return json.at("network").at("edge_probability").get<double>(); }
  std::uint64_t network_seed() const { return json.at("network").at("seed").get<std::uint64_t>(); }

  PpmParams ppm_params() const {
    const auto& p = json.at("ppm");
    PpmParams out;
    out.width = p.at("width").get<double>();
    out.height = p.at("height").get<double>();
    out.step_variance = p.at("step_variance").get<double>();
    out.p_rep = p.at("p_rep").get<double>();
    out.p_rep_pred = p.at("p_rep_pred").get<double>();
    out.p_death = p.at("p_death").get<double>();
    out.vision = p.at("vision").get<double>();
    out.max_agents = p.at("max_agents").get<std::size_t>();
    try {
      out.validate();
    } catch (const ContractError& e) {
      throw ConfigError(std::string("ppm: ") + e.what());
    }
    return out;
  }
  long ppm_initial_prey() const { return json.at("ppm").at("initial_prey").get<long>(); }
  long ppm_initial_predators() const { return json.at("ppm").at("initial_predators").get<long>(); }
  long ppm_trajectories() const { return json.at("ppm").at("trajectories").get<long>(); }
  long ppm_horizon() const { return json.at("ppm").at("horizon").get<long>(); }

  JumpModel jump_model() const {
    if (kind() == ExperimentKind::custom) return jump_model_from_json(json.at("custom_model"));
    return make_evm_model(rates(), population_size());
  }

  SamplingPlan sampling_plan() const {
    const auto& s = json.at("sampling");
    SamplingPlan plan;
    plan.num_points = s.at("m").get<long>();
    plan.samples_per_point = s.at("k").get<long>();
    plan.lag = s.at("tau").get<double>();
    const auto est = s.at("estimator").get<std::string>();
    if (est == "raw")
      plan.estimator = DiffusionEstimator::raw;
    else if (est == "centered")
      plan.estimator = DiffusionEstimator::centered;
    else
      throw ConfigError("sampling.estimator must be 'raw' or 'centered'");
    plan.mode = kind() == ExperimentKind::ppm ? SamplingMode::on_the_fly : SamplingMode::uniform_simplex;
    return plan;
  }

  int degree() const { return json.at("identification").at("degree").get<int>(); }
  bool scale() const { return json.at("identification").at("scale").get<bool>(); }
  DiffusionExtraction extraction() const {
    const auto e = json.at("identification").at("extraction").get<std::string>();
    if (e == "generator_identity") return DiffusionExtraction::generator_identity;
    if (e == "projected_products") return DiffusionExtraction::projected_products;
    throw ConfigError("identification.extraction must be 'generator_identity' or 'projected_products'");
  }
  FitOptions fit_options() const {
    const auto& i = json.at("identification");
    return {i.at("rel_cutoff").get<double>(), i.at("hard_threshold").get<double>()};
  }

  EmConfig integrator() const {
    const auto& i = json.at("integrator");
    EmConfig em;
    em.dt = i.at("dt").get<double>();
    em.t_end = i.at("t_end").get<double>();
    em.num_paths = i.at("paths").get<long>();
    em.seed = derive_seed(seed(), {kIntegratorStream});
    em.save_stride = std::max(1L, std::lround(i.at("save_every").get<double>() / em.dt));
    const auto proj = i.at("projection").get<std::string>();
    if (proj == "none")
      em.projection = Projection::none;
    else if (proj == "simplex_clip")
      em.projection = Projection::simplex_clip;
    else
      throw ConfigError("integrator.projection must be 'none' or 'simplex_clip'");
    if (auto layout = conservation()) em.conserved = layout;
    try {
      em.validate();
    } catch (const ContractError& e) {
      throw ConfigError(std::string("integrator: ") + e.what());
    }
    return em;
  }

  /// Initial state in full coordinates (frequencies, or counts for the PPM).
  Vector initial_state() const {
    const auto v = json.at("integrator").at("initial_state").get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  /// Conserved blocks of the full state, if any.
  std::optional<ConservationLayout> conservation() const {
    switch (kind()) {
      case ExperimentKind::ppm: return std::nullopt;
      case ExperimentKind::clustered_evm:
        return ConservationLayout{static_cast<int>(cluster_sizes().size()), num_types()};
      default: return ConservationLayout{1, num_types()};
    }
  }

  /// Dimension of the identified (reduced) model.
  int model_dim() const {
    auto layout = conservation();
    return layout ? layout->reduced_dim() : num_types();
  }

  static constexpr std::uint64_t kNetworkStream = 1;
  static constexpr std::uint64_t kPointStream = 2;
  static constexpr std::uint64_t kSampleStream = 3;
  static constexpr std::uint64_t kIntegratorStream = 4;
  static constexpr std::uint64_t kAbmStream = 5;
  static constexpr std::uint64_t kTrajectoryStream = 6;

 private:
  static Matrix matrix(const Json& j, const std::string& name) {
    try {
      const auto rows = j.get<std::vector<std::vector<double>>>();
      const auto n = static_cast<Eigen::Index>(rows.size());
      Matrix m(n, n);
      for (Eigen::Index r = 0; r < n; ++r) {
        if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)].size()) != n)
          throw ConfigError(name + " must be a square matrix");
        for (Eigen::Index c = 0; c < n; ++c) m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      }
      return m;
    } catch (const Json::exception&) {
      throw ConfigError(name + " must be a square matrix of numbers");
    }
  }

  static Matrix square_or_scalar(const Json& j, int d, const std::string& name) {
    if (j.is_number()) {
      Matrix m = Matrix::Constant(d, d, j.get<double>());
      m.diagonal().setZero();
      return m;
    }
    Matrix m = matrix(j, name);
    if (m.rows() != d) throw ConfigError(name + " must be " + std::to_string(d) + " x " + std::to_string(d));
    return m;
  }
};

namespace detail {

inline void resolve_null(Json& j, const char* key, const Json& value) {
  if (j.at(key).is_null()) j[key] = value;
}

}  // namespace detail

/// Merges `user` over the defaults, rejects unknown keys, and resolves every
/// kind-dependent default.
inline ExperimentConfig load_config(const Json& user) {
  Json j = default_config_json();
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  // reject keys that are not part of the schema (typos silently change results)
  std::function<void(const Json&, const Json&, const std::string&)> check = [&](const Json& u, const Json& d,
                                                                               const std::string& prefix) {
    for (auto it = u.begin(); it != u.end(); ++it) {
      if (!d.contains(it.key())) throw ConfigError("unknown config key '" + prefix + it.key() + "'");
      const auto& dv = d.at(it.key());
      if (dv.is_object() && it.value().is_object()) check(it.value(), dv, prefix + it.key() + ".");
    }
  };
  check(user, j, "");
  j.merge_patch(user);
  if (!j.at("custom_model").is_null() && j.at("kind") != "custom")
    throw ConfigError("custom_model is only valid with kind 'custom'");

  ExperimentConfig cfg{j};
  const ExperimentKind kind = cfg.kind();
  const bool is_ppm = kind == ExperimentKind::ppm;
  if (kind == ExperimentKind::custom && j.at("custom_model").is_null()) throw ConfigError("kind 'custom' needs custom_model");
  if (kind == ExperimentKind::custom) j["population_size"] = cfg.jump_model().population_size();
  if (kind == ExperimentKind::clustered_evm) {
    const auto sizes = cfg.cluster_sizes();
    if (sizes.empty()) throw ConfigError("network.cluster_sizes must not be empty");
    j["population_size"] = sizes.front();
  }
  if (j.at("population_size").get<long>() < 1) throw ConfigError("population_size must be >= 1");

  auto& net = j["network"];
  detail::resolve_null(net, "seed", derive_seed(cfg.seed(), {ExperimentConfig::kNetworkStream}));

  auto& s = j["sampling"];
  detail::resolve_null(s, "tau", is_ppm ? 1.0 : 0.01);
  if (s.at("m").is_null()) {
    long m = 1000;
    if (kind == ExperimentKind::complete_evm || kind == ExperimentKind::custom)
      m = default_measurement_count(j.at("population_size").get<long>(), cfg.num_types());
    s["m"] = m;
  }

  auto& id = j["identification"];
  if (id.at("degree").is_null()) {
    int order = 2;
    if (kind == ExperimentKind::custom) order = cfg.jump_model().max_order();
    id["degree"] = identification_degree(order);
  }
  detail::resolve_null(id, "scale", !is_ppm);

  auto& in = j["integrator"];
  detail::resolve_null(in, "dt", is_ppm ? 0.1 : 0.001);
  detail::resolve_null(in, "save_every", is_ppm ? 1.0 : 0.1);
  if (in.at("initial_state").is_null()) {
    switch (kind) {
      case ExperimentKind::ppm: in["initial_state"] = {cfg.ppm_initial_prey(), cfg.ppm_initial_predators()}; break;
      case ExperimentKind::clustered_evm: {
        std::vector<double> c;
        for (std::size_t q = 0; q < cfg.cluster_sizes().size(); ++q) {
          const int d = cfg.num_types();
          for (int i = 0; i < d; ++i) c.push_back(1.0 / d);
        }
        if (cfg.cluster_sizes().size() == 2 && cfg.num_types() == 3) c = {0.85, 0.1, 0.05, 0.2, 0.5, 0.3};
        in["initial_state"] = c;
        break;
      }
      default: {
        const int d = cfg.num_types();
        std::vector<double> c(static_cast<std::size_t>(d), 1.0 / d);
        if (d == 3) c = {0.2, 0.7, 0.1};
        in["initial_state"] = c;
      }
    }
  }

  ExperimentConfig out{j};
  // Validate everything eagerly so bad configs fail before any work starts.
  try {
    out.sampling_plan().validate();
    if (!is_ppm) out.rates();
    if (is_ppm) out.ppm_params();
    out.integrator();
    const auto x0 = out.initial_state();
    const int full_dim = out.conservation() ? out.conservation()->full_dim() : out.num_types();
    if (x0.size() != full_dim)
      throw ConfigError("integrator.initial_state must have " + std::to_string(full_dim) + " entries");
    if (out.degree() < 1) throw ConfigError("identification.degree must be >= 1");
  } catch (const ConfigError&) {
    throw;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config has a value of the wrong type: ") + e.what());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return out;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return load_config(Json::parse(in));
  } catch (const Json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

/// Applies a dotted-key override ("sampling.k" = "50"). The value is parsed
/// as JSON when possible and kept as a string otherwise.
inline void apply_override(Json& user, const std::string& dotted, const std::string& value) {
  Json parsed;
  try {
    parsed = Json::parse(value);
  } catch (const Json::parse_error&) {
    parsed = value;
  }
  Json* node = &user;
  std::stringstream ss(dotted);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("empty override key");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    Json& next = (*node)[parts[i]];
    if (next.is_null()) next = Json::object();
    if (!next.is_object()) throw ConfigError("override '" + dotted + "' descends into a non-object");
    node = &next;
  }
  (*node)[parts.back()] = parsed;
}

/// 64-bit FNV-1a over the canonical (sorted-key, compact) config text. The
/// output directory does not affect results and is left out.
inline std::uint64_t config_hash(const ExperimentConfig& cfg) {
  Json j = cfg.json;
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace abmkoop
