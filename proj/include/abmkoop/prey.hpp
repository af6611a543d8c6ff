#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <random>
#include <utility>
#include <vector>

#include "abmkoop/errors.hpp"
#include "abmkoop/random.hpp"

namespace abmkoop {

struct PpmParams {
  double width = 100.0;
  double height = 100.0;
  double step_variance = 1.0;  ///< h
  double p_rep = 0.03;
  double p_rep_pred = 0.5;
  double p_death = 0.02;
  double vision = 3.0;
  std::size_t max_agents = 1'000'000;

  void validate() const {
    if (!(width > 0.0 && height > 0.0)) throw ContractError("domain size must be positive");
    if (!(step_variance > 0.0)) throw ContractError("step variance must be positive");
    for (double p : {p_rep, p_rep_pred, p_death})
      if (!(p >= 0.0 && p <= 1.0)) throw ContractError("probabilities must lie in [0, 1]");
    if (!(vision > 0.0 && vision < std::min(width, height) / 2.0))
      throw ContractError("vision must be positive and below half the domain size");
  }
};

enum class Breed : std::uint8_t { prey, predator };

struct Agent {
  double x = 0.0;
  double y = 0.0;
  Breed breed = Breed::prey;
};

struct PpmState {
  std::vector<Agent> agents;
};

struct CountState {
  long prey = 0;
  long predators = 0;
  friend bool operator==(const CountState&, const CountState&) = default;
};

inline CountState ppm_counts(const PpmState& state) {
  CountState c;
  for (const auto& a : state.agents) (a.breed == Breed::prey ? c.prey : c.predators) += 1;
  return c;
}

inline double wrap_coordinate(double v, double extent) {
  double r = std::fmod(v, extent);
  if (r < 0.0) r += extent;
  if (r >= extent) r = 0.0;  // fmod of tiny negatives can round up to extent
  return r;
}

/// Euclidean distance under the minimal-image convention in both coordinates.
inline double torus_distance(double ax, double ay, double bx, double by, const PpmParams& params) {
  double dx = std::abs(ax - bx);
  double dy = std::abs(ay - by);
  dx = std::min(dx, params.width - dx);
  dy = std::min(dy, params.height - dy);
  return std::hypot(dx, dy);
}

/// Uniform random placement of the given numbers of prey and predators.
inline PpmState ppm_uniform_state(long prey, long predators, const PpmParams& params, Rng& rng) {
  PpmState s;
  s.agents.reserve(static_cast<std::size_t>(prey + predators));
  for (long i = 0; i < prey + predators; ++i)
    s.agents.push_back({uniform01(rng) * params.width, uniform01(rng) * params.height,
                        i < prey ? Breed::prey : Breed::predator});
  return s;
}

/// Event tally of one step, used to audit count changes.
struct PpmStepEvents {
  long prey_births = 0;
  long kills = 0;
  long predator_births = 0;
  long predator_deaths = 0;
};

/// Advances the spatial predator-prey model one time step.
///
/// Agents present at the start of the step act once each, in a uniformly
/// random joint order. Every agent first takes a Gaussian step (variance h
/// per coordinate, periodic wrap). Prey then reproduce with probability
/// p_rep. Predators pick a uniformly random live prey within the vision
/// radius of their new position; after a kill they reproduce with probability
/// p_rep_pred, without one they die with probability p_death. Offspring are
/// placed uniformly, are visible to predators immediately, and act from the
/// next step on. A prey killed earlier in the step does not act.
///
/// Live prey are binned in a uniform grid with cells no smaller than the
/// vision radius, so a query scans the 3 x 3 block around the predator.
class PpmStepper {
 public:
  explicit PpmStepper(PpmParams params) : params_(params) {
    params_.validate();
    nx_ = std::max(1, static_cast<int>(std::floor(params_.width / params_.vision)));
    ny_ = std::max(1, static_cast<int>(std::floor(params_.height / params_.vision)));
    cell_w_ = params_.width / nx_;
    cell_h_ = params_.height / ny_;
    cells_.resize(static_cast<std::size_t>(nx_ * ny_));
  }

  const PpmParams& params() const noexcept { return params_; }

  PpmStepEvents step(PpmState& state, Rng& rng) {
    PpmStepEvents ev;
    auto& agents = state.agents;
    const std::size_t initial = agents.size();
    alive_.assign(initial, 1);
    cell_of_.assign(initial, -1);
    slot_.assign(initial, 0);
    for (auto& c : cells_) c.clear();
    for (std::size_t i = 0; i < initial; ++i)
      if (agents[i].breed == Breed::prey) insert_prey(i, agents[i]);

    order_.resize(initial);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng);

    const double sd = std::sqrt(params_.step_variance);
    std::normal_distribution<double> normal(0.0, 1.0);
    candidates_.clear();

    for (std::size_t idx : order_) {
      if (!alive_[idx]) continue;
      Agent& a = agents[idx];
      a.x = wrap_coordinate(a.x + sd * normal(rng), params_.width);
      a.y = wrap_coordinate(a.y + sd * normal(rng), params_.height);
      if (a.breed == Breed::prey) {
        move_prey(idx, a);
        if (uniform01(rng) < params_.p_rep) {
          spawn(agents, Breed::prey, rng);
          ++ev.prey_births;
        }
      } else {
        find_prey(agents, a.x, a.y);
        if (!candidates_.empty()) {
          const std::size_t victim = candidates_[static_cast<std::size_t>(uniform01(rng) * candidates_.size())];
          alive_[victim] = 0;
          remove_prey(victim);
          ++ev.kills;
          if (uniform01(rng) < params_.p_rep_pred) {
            spawn(agents, Breed::predator, rng);
            ++ev.predator_births;
          }
        } else if (uniform01(rng) < params_.p_death) {
          alive_[idx] = 0;
          ++ev.predator_deaths;
        }
      }
      if (agents.size() > params_.max_agents)
        throw CapacityError("agent count exceeded the cap of " + std::to_string(params_.max_agents));
    }

    std::size_t w = 0;
    for (std::size_t i = 0; i < agents.size(); ++i)
      if (alive_[i]) agents[w++] = agents[i];
    agents.resize(w);
    return ev;
  }

  /// Brute-force reference for the binned query, used in tests.
  static std::vector<std::size_t> prey_within(const PpmState& state, double x, double y, const PpmParams& params) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < state.agents.size(); ++i) {
      const auto& a = state.agents[i];
      if (a.breed == Breed::prey && torus_distance(x, y, a.x, a.y, params) <= params.vision) out.push_back(i);
    }
    return out;
  }

 private:
  int cell_index(double x, double y) const {
    int cx = std::min(nx_ - 1, static_cast<int>(x / cell_w_));
    int cy = std::min(ny_ - 1, static_cast<int>(y / cell_h_));
    return cy * nx_ + cx;
  }

  void insert_prey(std::size_t i, const Agent& a) {
    const int c = cell_index(a.x, a.y);
    cell_of_[i] = c;
    slot_[i] = cells_[static_cast<std::size_t>(c)].size();
    cells_[static_cast<std::size_t>(c)].push_back(i);
  }

  void remove_prey(std::size_t i) {
    auto& cell = cells_[static_cast<std::size_t>(cell_of_[i])];
    const std::size_t s = slot_[i];
    const std::size_t last = cell.back();
    cell[s] = last;
    slot_[last] = s;
    cell.pop_back();
    cell_of_[i] = -1;
  }

  void move_prey(std::size_t i, const Agent& a) {
    if (cell_index(a.x, a.y) == cell_of_[i]) return;
    remove_prey(i);
    insert_prey(i, a);
  }

  void spawn(std::vector<Agent>& agents, Breed breed, Rng& rng) {
    const std::size_t i = agents.size();
    agents.push_back({uniform01(rng) * params_.width, uniform01(rng) * params_.height, breed});
    alive_.push_back(1);
    cell_of_.push_back(-1);
    slot_.push_back(0);
    if (breed == Breed::prey) insert_prey(i, agents[i]);
  }

  void find_prey(const std::vector<Agent>& agents, double x, double y) {
    candidates_.clear();
    const int cx = std::min(nx_ - 1, static_cast<int>(x / cell_w_));
    const int cy = std::min(ny_ - 1, static_cast<int>(y / cell_h_));
    // With fewer than three cells along an axis the wrapped offsets repeat.
    const int rx = nx_ >= 3 ? 1 : 0, ry = ny_ >= 3 ? 1 : 0;
    const int lx = nx_ >= 3 ? -1 : 0, ly = ny_ >= 3 ? -1 : 0;
    const int ex = nx_ >= 3 ? rx : nx_ - 1, ey = ny_ >= 3 ? ry : ny_ - 1;
    for (int oy = ly; oy <= ey; ++oy) {
      const int yy = ny_ >= 3 ? (cy + oy + ny_) % ny_ : oy;
      for (int ox = lx; ox <= ex; ++ox) {
        const int xx = nx_ >= 3 ? (cx + ox + nx_) % nx_ : ox;
        for (std::size_t i : cells_[static_cast<std::size_t>(yy * nx_ + xx)]) {
          const auto& p = agents[i];
          if (torus_distance(x, y, p.x, p.y, params_) <= params_.vision) candidates_.push_back(i);
        }
      }
    }
    // Cell contents are in insertion order; sort so the victim choice does not
    // depend on the binning history.
    std::sort(candidates_.begin(), candidates_.end());
  }

  PpmParams params_;
  int nx_ = 1, ny_ = 1;
  double cell_w_ = 1.0, cell_h_ = 1.0;
  std::vector<std::vector<std::size_t>> cells_;
  std::vector<char> alive_;
  std::vector<int> cell_of_;
  std::vector<std::size_t> slot_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> candidates_;
};

inline PpmState ppm_step(const PpmState& state, const PpmParams& params, std::uint64_t seed) {
  PpmStepper stepper(params);
  PpmState out = state;
  Rng rng = make_rng(seed);
  stepper.step(out, rng);
  return out;
}

enum class PpmOutcome { predators_extinct_first, prey_extinct_first, survived, capped };

struct PpmRunResult {
  std::vector<CountState> counts;  ///< counts[t] after t steps, counts[0] initial
  PpmOutcome outcome = PpmOutcome::survived;
};

/// Runs until one breed disappears, the agent cap is hit, or max_steps.
inline PpmRunResult ppm_run(PpmState state, const PpmParams& params, long max_steps, Rng& rng,
                            bool stop_at_extinction = true) {
  PpmStepper stepper(params);
  PpmRunResult res;
  res.counts.push_back(ppm_counts(state));
  for (long t = 0; t < max_steps; ++t) {
    try {
      stepper.step(state, rng);
    } catch (const CapacityError&) {
      res.outcome = PpmOutcome::capped;
      return res;
    }
    const CountState c = ppm_counts(state);
    res.counts.push_back(c);
    if (res.outcome == PpmOutcome::survived) {
      if (c.predators == 0 && c.prey > 0)
        res.outcome = PpmOutcome::predators_extinct_first;
      else if (c.prey == 0)
        res.outcome = PpmOutcome::prey_extinct_first;
      if (res.outcome != PpmOutcome::survived && stop_at_extinction) return res;
    }
  }
  return res;
}

inline void write_snapshot(std::ostream& out, const PpmState& state) {
  out << "x,y,breed\n";
  for (const auto& a : state.agents) out << a.x << ',' << a.y << ',' << (a.breed == Breed::prey ? "prey" : "predator") << '\n';
}

}  // namespace abmkoop
