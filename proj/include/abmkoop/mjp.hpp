#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "abmkoop/errors.hpp"
#include "abmkoop/linalg.hpp"
#include "abmkoop/polynomial.hpp"
#include "abmkoop/random.hpp"
#include "abmkoop/sde_model.hpp"

namespace abmkoop {

/// Population state: number of agents of each type.
struct PopulationState {
  std::vector<long> counts;

  std::size_t size() const noexcept { return counts.size(); }
  long operator[](std::size_t i) const { return counts[i]; }
  long total() const {
    long s = 0;
    for (long c : counts) s += c;
    return s;
  }
  auto operator<=>(const PopulationState&) const = default;
};

/// a_1 S_1 + ... + a_d S_d -> b_1 S_1 + ... + b_d S_d with rate constant gamma.
struct TransitionRule {
  std::vector<int> reactants;
  std::vector<int> products;
  double rate = 0.0;

  std::vector<long> net_change() const {
    std::vector<long> nu(reactants.size());
    for (std::size_t i = 0; i < nu.size(); ++i) nu[i] = products[i] - reactants[i];
    return nu;
  }

  int order() const {
    int o = 0;
    for (int a : reactants) o += a;
    return o;
  }
};

class JumpModel {
 public:
  JumpModel(int num_types, std::vector<TransitionRule> rules, long population_size)
      : num_types_(num_types), rules_(std::move(rules)), population_size_(population_size) {
    if (num_types_ < 1) throw ContractError("a jump model needs at least one type");
    if (rules_.empty()) throw ContractError("a jump model needs at least one rule");
    if (population_size_ < 1) throw ContractError("population size must be >= 1");
    for (std::size_t k = 0; k < rules_.size(); ++k) {
      const auto& r = rules_[k];
      const std::string tag = "rule " + std::to_string(k);
      if (static_cast<int>(r.reactants.size()) != num_types_ ||
          static_cast<int>(r.products.size()) != num_types_)
        throw ContractError(tag + ": stoichiometry vectors must have length " + std::to_string(num_types_));
      if (std::any_of(r.reactants.begin(), r.reactants.end(), [](int a) { return a < 0; }) ||
          std::any_of(r.products.begin(), r.products.end(), [](int b) { return b < 0; }))
        throw ContractError(tag + ": stoichiometric coefficients must be nonnegative");
      if (!(r.rate > 0.0)) throw ContractError(tag + ": rate constant must be positive");
      auto nu = r.net_change();
      if (std::all_of(nu.begin(), nu.end(), [](long v) { return v == 0; }))
        throw ContractError(tag + ": net change is zero");
      net_changes_.push_back(std::move(nu));
    }
  }

  int num_types() const noexcept { return num_types_; }
  std::size_t num_rules() const noexcept { return rules_.size(); }
  long population_size() const noexcept { return population_size_; }
  const std::vector<TransitionRule>& rules() const noexcept { return rules_; }
  const TransitionRule& rule(std::size_t k) const { return rules_.at(k); }
  const std::vector<long>& net_change(std::size_t k) const { return net_changes_.at(k); }

  int max_order() const {
    int o = 0;
    for (const auto& r : rules_) o = std::max(o, r.order());
    return o;
  }

 private:
  int num_types_;
  std::vector<TransitionRule> rules_;
  long population_size_;
  std::vector<std::vector<long>> net_changes_;
};

namespace detail {

inline double propensity_unchecked(const JumpModel& model, std::size_t k, const long* x) {
  const auto& rule = model.rules()[k];
  const double n = static_cast<double>(model.population_size());
  double value = rule.rate * n;
  for (int i = 0; i < model.num_types(); ++i) {
    const int a = rule.reactants[static_cast<std::size_t>(i)];
    if (a == 0) continue;
    const long xi = x[i];
    if (xi < a) return 0.0;
    // C(x, a) / N^a
    double binom = 1.0;
    for (int r = 0; r < a; ++r) binom *= static_cast<double>(xi - r) / static_cast<double>(r + 1);
    value *= binom / std::pow(n, a);
  }
  return value;
}

}  // namespace detail

/// alpha_k(x) = gamma_k N prod_i N^{-a_ik} C(x_i, a_ik), zero if any x_i < a_ik.
inline double propensity(const JumpModel& model, std::size_t rule_index, const PopulationState& x) {
  if (rule_index >= model.num_rules())
    throw IndexError("rule index " + std::to_string(rule_index) + " out of range (model has " +
                     std::to_string(model.num_rules()) + " rules)");
  if (static_cast<int>(x.size()) != model.num_types())
    throw ContractError("state has " + std::to_string(x.size()) + " components, model has " +
                        std::to_string(model.num_types()) + " types");
  return detail::propensity_unchecked(model, rule_index, x.counts.data());
}

/// Piecewise-constant sample path; states[i] holds on [times[i], times[i+1]).
struct Trajectory {
  std::vector<double> times;
  std::vector<PopulationState> states;

  const PopulationState& state_at(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return states.front();
    return states[static_cast<std::size_t>(std::distance(times.begin(), it) - 1)];
  }
};

/// Gillespie direct-method simulator. Holds scratch buffers, so one instance
/// per thread.
class SsaSimulator {
 public:
  explicit SsaSimulator(const JumpModel& model) : model_(&model), props_(model.num_rules()) {}

  /// Advances x in place by `duration`, without recording intermediate states.
  /// Returns the number of jumps.
  std::size_t advance(PopulationState& x, double duration, Rng& rng) {
    double t = 0.0;
    std::size_t jumps = 0;
    for (;;) {
      const double total = refresh(x);
      if (total <= 0.0) return jumps;
      t += -std::log(uniform01_open_low(rng)) / total;
      if (t >= duration) return jumps;
      apply(x, select(total, rng));
      ++jumps;
    }
  }

  Trajectory simulate(const PopulationState& x0, double t_end, Rng& rng) {
    Trajectory traj;
    traj.times.push_back(0.0);
    traj.states.push_back(x0);
    PopulationState x = x0;
    double t = 0.0;
    for (;;) {
      const double total = refresh(x);
      if (total <= 0.0) break;
      t += -std::log(uniform01_open_low(rng)) / total;
      if (t >= t_end) break;
      apply(x, select(total, rng));
      traj.times.push_back(t);
      traj.states.push_back(x);
    }
    if (traj.times.back() < t_end) {
      traj.times.push_back(t_end);
      traj.states.push_back(x);
    }
    return traj;
  }

 private:
  double refresh(const PopulationState& x) {
    double total = 0.0;
    for (std::size_t k = 0; k < props_.size(); ++k) {
      props_[k] = detail::propensity_unchecked(*model_, k, x.counts.data());
      total += props_[k];
    }
    return total;
  }

  std::size_t select(double total, Rng& rng) const {
    const double target = uniform01(rng) * total;
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t k = 0; k < props_.size(); ++k) {
      if (props_[k] <= 0.0) continue;
      acc += props_[k];
      last_positive = k;
      if (target < acc) return k;
    }
    return last_positive;
  }

  void apply(PopulationState& x, std::size_t k) const {
    const auto& nu = model_->net_change(k);
    for (std::size_t i = 0; i < nu.size(); ++i) x.counts[i] += nu[i];
  }

  const JumpModel* model_;
  std::vector<double> props_;
};

/// Exact sample path on [0, t_end]. Every jump is recorded; the final entry is
/// (t_end, state) unless a jump landed exactly there.
inline Trajectory gillespie_simulate(const JumpModel& model, const PopulationState& x0, double t_end,
                                     std::uint64_t seed) {
  if (!(t_end > 0.0)) throw ContractError("t_end must be positive");
  if (static_cast<int>(x0.size()) != model.num_types())
    throw ContractError("initial state dimension does not match the model");
  for (long c : x0.counts)
    if (c < 0) throw DomainError("initial state has a negative count");
  Rng rng = make_rng(seed);
  SsaSimulator sim(model);
  return sim.simulate(x0, t_end, rng);
}

// ---------------------------------------------------------------------------
// Forward (master) equation on small state spaces.

using Distribution = std::map<PopulationState, double>;

struct CmeGenerator {
  std::vector<PopulationState> states;  ///< lexicographic order
  SparseMatrix rates;                   ///< dp/dt = rates * p, columns sum to zero
};

/// Breadth-first closure of the support of p0 under the transitions with
/// positive propensity, then a lexicographic sort.
inline CmeGenerator build_cme(const JumpModel& model, const std::vector<PopulationState>& support,
                              std::size_t state_cap = 20000) {
  std::set<PopulationState> seen;
  std::deque<PopulationState> queue;
  for (const auto& s : support) {
    if (static_cast<int>(s.size()) != model.num_types())
      throw ContractError("distribution state dimension does not match the model");
    if (seen.insert(s).second) queue.push_back(s);
  }
  while (!queue.empty()) {
    PopulationState x = std::move(queue.front());
    queue.pop_front();
    for (std::size_t k = 0; k < model.num_rules(); ++k) {
      if (detail::propensity_unchecked(model, k, x.counts.data()) <= 0.0) continue;
      PopulationState y = x;
      const auto& nu = model.net_change(k);
      for (std::size_t i = 0; i < nu.size(); ++i) y.counts[i] += nu[i];
      if (seen.insert(y).second) {
        if (seen.size() > state_cap)
          throw CapacityError("reachable state space exceeds the cap of " + std::to_string(state_cap) +
                              " states");
        queue.push_back(std::move(y));
      }
    }
  }
  CmeGenerator gen;
  gen.states.assign(seen.begin(), seen.end());
  std::map<PopulationState, Eigen::Index> index;
  for (std::size_t s = 0; s < gen.states.size(); ++s) index.emplace(gen.states[s], static_cast<Eigen::Index>(s));

  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t s = 0; s < gen.states.size(); ++s) {
    const auto& x = gen.states[s];
    double out = 0.0;
    for (std::size_t k = 0; k < model.num_rules(); ++k) {
      const double a = detail::propensity_unchecked(model, k, x.counts.data());
      if (a <= 0.0) continue;
      PopulationState y = x;
      const auto& nu = model.net_change(k);
      for (std::size_t i = 0; i < nu.size(); ++i) y.counts[i] += nu[i];
      triplets.emplace_back(index.at(y), static_cast<Eigen::Index>(s), a);
      out += a;
    }
    triplets.emplace_back(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s), -out);
  }
  const auto n = static_cast<Eigen::Index>(gen.states.size());
  gen.rates.resize(n, n);
  gen.rates.setFromTriplets(triplets.begin(), triplets.end());
  return gen;
}

/// Solves the forward equation P(., t) = exp(t Q) p0. State spaces up to
/// `dense_limit` use the dense scaling-and-squaring exponential, larger ones
/// apply the exponential to the vector directly.
inline Distribution cme_solve(const JumpModel& model, const Distribution& p0, double t,
                              std::size_t state_cap = 20000, std::size_t dense_limit = 600) {
  if (p0.empty()) throw ContractError("initial distribution is empty");
  double mass = 0.0;
  std::vector<PopulationState> support;
  for (const auto& [x, p] : p0) {
    if (p < 0.0) throw ContractError("initial distribution has negative mass");
    mass += p;
    if (p > 0.0) support.push_back(x);
  }
  if (std::abs(mass - 1.0) > 1e-9) throw ContractError("initial distribution does not sum to 1");
  if (t < 0.0) throw ContractError("time must be nonnegative");

  CmeGenerator gen = build_cme(model, support, state_cap);
  const auto n = static_cast<Eigen::Index>(gen.states.size());
  Vector p = Vector::Zero(n);
  for (Eigen::Index s = 0; s < n; ++s) {
    auto it = p0.find(gen.states[static_cast<std::size_t>(s)]);
    if (it != p0.end()) p(s) = it->second;
  }
  Vector pt;
  if (t == 0.0)
    pt = p;
  else if (static_cast<std::size_t>(n) <= dense_limit)
    pt = expm(Matrix(gen.rates) * t) * p;
  else
    pt = expm_action(gen.rates, t, p);

  Distribution out;
  for (Eigen::Index s = 0; s < n; ++s) out.emplace(gen.states[static_cast<std::size_t>(s)], pt(s));
  return out;
}

// ---------------------------------------------------------------------------
// Limit SDE in frequency coordinates.

/// Rescaled propensity alpha~_k(c) = N^{-1} alpha_k(cN) as an exact polynomial
/// in c, including the finite-N factors (c_i - r/N) of the binomials.
inline Polynomial rescaled_propensity(const JumpModel& model, std::size_t k) {
  const int d = model.num_types();
  const double n = static_cast<double>(model.population_size());
  const auto& rule = model.rule(k);
  Polynomial p = Polynomial::constant(d, rule.rate);
  for (int i = 0; i < d; ++i) {
    const int a = rule.reactants[static_cast<std::size_t>(i)];
    double factorial = 1.0;
    for (int r = 0; r < a; ++r) {
      p = p * (Polynomial::variable(d, i) - Polynomial::constant(d, r / n));
      factorial *= r + 1;
    }
    p *= 1.0 / factorial;
  }
  return p;
}

/// Drift b(c) = sum_k alpha~_k(c) nu_k and diffusion a(c) = (1/N) sum_k
/// alpha~_k(c) nu_k nu_k^T of the chemical Langevin limit, expanded over
/// `dictionary` (which must have dimension d).
inline IdentifiedSde limit_sde(const JumpModel& model, DictionaryPtr dictionary) {
  const int d = model.num_types();
  if (dictionary->dim() != d)
    throw ContractError("dictionary dimension " + std::to_string(dictionary->dim()) +
                        " does not match the number of types " + std::to_string(d));
  const double n = static_cast<double>(model.population_size());
  std::vector<Polynomial> drift(static_cast<std::size_t>(d), Polynomial(d));
  std::vector<Polynomial> diff(static_cast<std::size_t>(pair_count(d)), Polynomial(d));
  for (std::size_t k = 0; k < model.num_rules(); ++k) {
    const Polynomial alpha = rescaled_propensity(model, k);
    const auto& nu = model.net_change(k);
    for (int i = 0; i < d; ++i) {
      if (nu[static_cast<std::size_t>(i)] == 0) continue;
      drift[static_cast<std::size_t>(i)] += alpha * static_cast<double>(nu[static_cast<std::size_t>(i)]);
      for (int j = i; j < d; ++j) {
        if (nu[static_cast<std::size_t>(j)] == 0) continue;
        const double w = static_cast<double>(nu[static_cast<std::size_t>(i)] * nu[static_cast<std::size_t>(j)]) / n;
        diff[static_cast<std::size_t>(pair_index(i, j, d))] += alpha * w;
      }
    }
  }
  IdentifiedSde sde(PolynomialField::from_polynomials(dictionary, drift),
                    PolynomialField::from_polynomials(dictionary, diff), model.population_size());
  sde.metadata["source"] = "limit_sde";
  return sde;
}

// ---------------------------------------------------------------------------
// Structured text configuration.

inline nlohmann::json to_json(const JumpModel& model) {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& r : model.rules())
    rules.push_back({{"reactants", r.reactants}, {"products", r.products}, {"rate", r.rate}});
  return {{"num_types", model.num_types()}, {"population_size", model.population_size()}, {"rules", rules}};
}

inline JumpModel jump_model_from_json(const nlohmann::json& j) {
  try {
    std::vector<TransitionRule> rules;
    for (const auto& r : j.at("rules"))
      rules.push_back({r.at("reactants").get<std::vector<int>>(), r.at("products").get<std::vector<int>>(),
                       r.at("rate").get<double>()});
    return JumpModel(j.at("num_types").get<int>(), std::move(rules), j.at("population_size").get<long>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid jump model config: ") + e.what());
  }
}

}  // namespace abmkoop
