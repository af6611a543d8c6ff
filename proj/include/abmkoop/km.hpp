#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "abmkoop/conservation.hpp"
#include "abmkoop/errors.hpp"
#include "abmkoop/mjp.hpp"
#include "abmkoop/parallel.hpp"
#include "abmkoop/polynomial.hpp"
#include "abmkoop/random.hpp"
#include "abmkoop/voter.hpp"

namespace abmkoop {

/// One gEDMD training row: a state with its pointwise drift and diffusion
/// estimates.
struct Measurement {
  Vector point;
  Vector drift_est;
  Matrix diffusion_est;
  long sample_count = 0;
  double lag = 0.0;

  int dim() const { return static_cast<int>(point.size()); }
};

enum class SamplingMode { uniform_simplex, on_the_fly };

/// Second-moment estimator for the diffusion. `raw` is the uncentered
/// Kramers-Moyal average E[(X_tau - x)(X_tau - x)^T]/tau, which carries an
/// O(tau) bias b b^T tau; `centered` subtracts the sample mean increment.
enum class DiffusionEstimator { raw, centered };

struct SamplingPlan {
  long num_points = 1;         ///< m
  long samples_per_point = 2;  ///< k
  double lag = 0.01;           ///< tau
  SamplingMode mode = SamplingMode::uniform_simplex;
  DiffusionEstimator estimator = DiffusionEstimator::raw;

  void validate() const {
    if (num_points < 1) throw ContractError("m must be >= 1");
    if (samples_per_point < 2) throw ContractError("k must be >= 2");
    if (!(lag > 0.0)) throw ContractError("lag must be positive");
  }
};

// ---------------------------------------------------------------------------
// Measurement points.

inline double binomial(long n, long k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (long i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(r);
}

/// Number of points of the discrete simplex {x in N_0^d : sum x = N}.
inline double simplex_point_count(long n, int d) { return binomial(n + d - 1, d - 1); }

/// All x in N_0^d with sum N, in lexicographically descending order.
inline std::vector<PopulationState> simplex_points(long n, int d, std::size_t cap = 5'000'000) {
  if (n < 1) throw ContractError("N must be >= 1");
  if (d < 2) throw ContractError("d must be >= 2");
  const double count = simplex_point_count(n, d);
  if (count > static_cast<double>(cap))
    throw CapacityError("simplex has " + std::to_string(static_cast<long long>(count)) +
                        " points, above the cap of " + std::to_string(cap) + "; sample instead");
  std::vector<PopulationState> out;
  out.reserve(static_cast<std::size_t>(count));
  std::vector<long> x(static_cast<std::size_t>(d), 0);
  auto rec = [&](auto&& self, int pos, long remaining) -> void {
    if (pos == d - 1) {
      x[static_cast<std::size_t>(pos)] = remaining;
      out.push_back(PopulationState{x});
      return;
    }
    for (long v = remaining; v >= 0; --v) {
      x[static_cast<std::size_t>(pos)] = v;
      self(self, pos + 1, remaining - v);
    }
  };
  rec(rec, 0, n);
  return out;
}

/// min(round(0.1 * C(N+d-1, d-1)), 10000).
inline long default_measurement_count(long n, int d = 3) {
  const double c = simplex_point_count(n, d);
  return static_cast<long>(std::min(std::round(0.1 * c), 10000.0));
}

/// Uniformly random composition of n into d nonnegative parts (stars and bars).
inline PopulationState random_composition(long n, int d, Rng& rng) {
  // choose d-1 distinct bar positions among n+d-1 slots
  const long slots = n + d - 1;
  std::set<long> bars;
  while (static_cast<int>(bars.size()) < d - 1)
    bars.insert(static_cast<long>(uniform01(rng) * static_cast<double>(slots)));
  PopulationState x{std::vector<long>(static_cast<std::size_t>(d), 0)};
  long prev = -1;
  int i = 0;
  for (long b : bars) {
    x.counts[static_cast<std::size_t>(i++)] = b - prev - 1;
    prev = b;
  }
  x.counts[static_cast<std::size_t>(d - 1)] = slots - prev - 1;
  return x;
}

/// m distinct simplex points drawn uniformly without replacement.
inline std::vector<PopulationState> sample_simplex_points(long n, int d, long m, Rng& rng,
                                                          std::size_t enumerate_cap = 2'000'000) {
  const double count = simplex_point_count(n, d);
  if (static_cast<double>(m) > count)
    throw CapacityError("requested " + std::to_string(m) + " distinct points from a simplex with only " +
                        std::to_string(static_cast<long long>(count)));
  if (count <= static_cast<double>(enumerate_cap)) {
    auto all = simplex_points(n, d, enumerate_cap);
    // partial Fisher-Yates
    for (long i = 0; i < m; ++i) {
      const auto j = static_cast<std::size_t>(i) +
                     static_cast<std::size_t>(uniform01(rng) * static_cast<double>(all.size() - static_cast<std::size_t>(i)));
      std::swap(all[static_cast<std::size_t>(i)], all[j]);
    }
    all.resize(static_cast<std::size_t>(m));
    return all;
  }
  std::set<PopulationState> seen;
  std::vector<PopulationState> out;
  while (static_cast<long>(out.size()) < m) {
    PopulationState x = random_composition(n, d, rng);
    if (seen.insert(x).second) out.push_back(std::move(x));
  }
  return out;
}

/// Rounds target frequencies c * size to integer counts summing to size,
/// giving the leftover units to the largest remainders.
inline std::vector<long> round_counts(const Vector& c, long size) {
  const auto d = static_cast<std::size_t>(c.size());
  std::vector<long> counts(d);
  std::vector<std::pair<double, std::size_t>> rem;
  long total = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const double target = std::max(0.0, c(static_cast<Eigen::Index>(i))) * static_cast<double>(size);
    counts[i] = static_cast<long>(std::floor(target));
    total += counts[i];
    rem.emplace_back(target - std::floor(target), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; total < size; ++r, ++total) ++counts[rem[r % d].second];
  while (total > size) {
    // only reachable when the frequencies sum above one
    --*std::max_element(counts.begin(), counts.end());
    --total;
  }
  return counts;
}

/// Agent state with the given per-cluster frequencies (rounded), types placed
/// uniformly at random among the agents of each cluster.
inline AgentTypeState lift_macro_to_micro(const Vector& c, const Network& net, int num_types, Rng& rng) {
  const int q_count = net.num_clusters();
  if (c.size() != q_count * num_types) throw ContractError("frequency vector does not match clusters x types");
  AgentTypeState state{std::vector<int>(static_cast<std::size_t>(net.num_agents()), 0)};
  std::vector<std::vector<int>> members(static_cast<std::size_t>(q_count));
  for (int a = 0; a < net.num_agents(); ++a) members[static_cast<std::size_t>(net.cluster_of(a))].push_back(a);
  for (int q = 0; q < q_count; ++q) {
    auto& m = members[static_cast<std::size_t>(q)];
    if (m.empty()) throw DomainError("cluster " + std::to_string(q + 1) + " is empty");
    const auto counts = round_counts(c.segment(q * num_types, num_types), static_cast<long>(m.size()));
    std::shuffle(m.begin(), m.end(), rng);
    std::size_t pos = 0;
    for (int t = 0; t < num_types; ++t)
      for (long r = 0; r < counts[static_cast<std::size_t>(t)]; ++r) state.types[static_cast<std::size_t>(m[pos++])] = t;
  }
  return state;
}

inline AgentTypeState lift_macro_to_micro(const Vector& c, const Network& net, int num_types, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return lift_macro_to_micro(c, net, num_types, rng);
}

// ---------------------------------------------------------------------------
// Kramers-Moyal estimation.

/// Pointwise drift and diffusion from k independent short runs:
///   b = (1/k) sum (X_tau - x) / tau
///   a = (1/k) sum (X_tau - x)(X_tau - x)^T / tau
/// `sampler(x, tau, rng)` must return one realization of X_tau started at x.
/// Sample i draws from the stream derive_seed(seed, {i}).
template <typename Sampler>
Measurement km_estimate(Sampler&& sampler, const Vector& point, const SamplingPlan& plan, std::uint64_t seed) {
  plan.validate();
  const auto d = point.size();
  Vector sum = Vector::Zero(d);
  Matrix sum2 = Matrix::Zero(d, d);
  for (long i = 0; i < plan.samples_per_point; ++i) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(i)});
    const Vector x_tau = sampler(point, plan.lag, rng);
    if (x_tau.size() != d) throw ContractError("sampler returned a state of the wrong dimension");
    const Vector delta = x_tau - point;
    sum += delta;
    sum2.selfadjointView<Eigen::Lower>().rankUpdate(delta);
  }
  sum2 = sum2.selfadjointView<Eigen::Lower>();
  const double k = static_cast<double>(plan.samples_per_point);
  Measurement m;
  m.point = point;
  m.drift_est = sum / (k * plan.lag);
  if (plan.estimator == DiffusionEstimator::raw) {
    m.diffusion_est = sum2 / (k * plan.lag);
  } else {
    const Vector mean = sum / k;
    m.diffusion_est = (sum2 / k - mean * mean.transpose()) / plan.lag;
  }
  m.sample_count = plan.samples_per_point;
  m.lag = plan.lag;
  return m;
}

/// Estimates every point in parallel; point l uses the stream
/// derive_seed(seed, {l}) as its master.
template <typename Sampler>
std::vector<Measurement> km_estimate_all(const Sampler& sampler, const std::vector<Vector>& points,
                                         const SamplingPlan& plan, std::uint64_t seed) {
  std::vector<Measurement> out(points.size());
  parallel_for(points.size(), [&](std::size_t l) {
    out[l] = km_estimate(sampler, points[l], plan, derive_seed(seed, {static_cast<std::uint64_t>(l)}));
  });
  return out;
}

/// X_tau sampler for a jump model via the Gillespie direct method.
inline auto ssa_sampler(const JumpModel& model) {
  return [&model](const Vector& x, double tau, Rng& rng) {
    PopulationState s{std::vector<long>(static_cast<std::size_t>(x.size()))};
    for (Eigen::Index i = 0; i < x.size(); ++i) s.counts[static_cast<std::size_t>(i)] = std::lround(x(i));
    SsaSimulator sim(model);
    sim.advance(s, tau, rng);
    Vector out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) out(i) = static_cast<double>(s.counts[static_cast<std::size_t>(i)]);
    return out;
  };
}

/// X_tau sampler for the discrete-time voter model on a network: every sample
/// lifts the cluster frequencies to a fresh random agent state and applies
/// round(tau / t_step) sweeps, then aggregates.
inline auto voter_sampler(const Network& net, const VoterRates& rates) {
  auto cache = std::make_shared<TransitionCache>();
  return [&net, rates, cache](const Vector& c, double tau, Rng& rng) {
    const int d = rates.num_types();
    AgentTypeState s = lift_macro_to_micro(c, net, d, rng);
    DiscreteVoterStepper stepper(net, rates, cache);
    const long steps = std::max(1L, std::lround(tau / rates.step_size));
    for (long i = 0; i < steps; ++i) stepper.step(s, rng);
    return aggregate(net, s, d).freqs;
  };
}

// ---------------------------------------------------------------------------
// Normalization.

/// Drops the last coordinate of every conserved block (points, drift rows,
/// diffusion rows and columns) and divides points by n, drift by n and
/// diffusion by n^2. Pass layout = nullopt for data without conservation.
inline std::vector<Measurement> reduce_and_scale(const std::vector<Measurement>& ms, double n,
                                                 const std::optional<ConservationLayout>& layout, bool scale = true,
                                                 double tol = 1e-9) {
  if (!(n > 0.0)) throw ContractError("scale factor must be positive");
  std::vector<Measurement> out;
  out.reserve(ms.size());
  for (const auto& m : ms) {
    std::vector<Eigen::Index> keep;
    if (layout) {
      if (m.dim() != layout->full_dim()) throw ContractError("measurement dimension does not match the layout");
      for (int q = 0; q < layout->blocks; ++q) {
        const double s = m.point.segment(q * layout->block_size, layout->block_size).sum();
        if (std::abs(s - n) > tol * std::max(1.0, n))
          throw DataError("conservation violated: block " + std::to_string(q + 1) + " sums to " + std::to_string(s) +
                          ", expected " + std::to_string(n));
      }
      for (int i = 0; i < layout->full_dim(); ++i)
        if (!layout->is_dropped(i)) keep.push_back(i);
    } else {
      for (Eigen::Index i = 0; i < m.point.size(); ++i) keep.push_back(i);
    }
    const auto r = static_cast<Eigen::Index>(keep.size());
    Measurement o;
    o.point.resize(r);
    o.drift_est.resize(r);
    o.diffusion_est.resize(r, r);
    const double f = scale ? n : 1.0;
    for (Eigen::Index i = 0; i < r; ++i) {
      o.point(i) = m.point(keep[static_cast<std::size_t>(i)]) / f;
      o.drift_est(i) = m.drift_est(keep[static_cast<std::size_t>(i)]) / f;
      for (Eigen::Index j = 0; j < r; ++j)
        o.diffusion_est(i, j) = m.diffusion_est(keep[static_cast<std::size_t>(i)], keep[static_cast<std::size_t>(j)]) / (f * f);
    }
    o.sample_count = m.sample_count;
    o.lag = m.lag;
    out.push_back(std::move(o));
  }
  return out;
}

inline std::vector<Measurement> reduce_and_scale(const std::vector<Measurement>& ms, long n, bool conserved) {
  std::optional<ConservationLayout> layout;
  if (conserved && !ms.empty()) layout = ConservationLayout{1, ms.front().dim()};
  return reduce_and_scale(ms, static_cast<double>(n), layout, true);
}

/// Inverse of the point reduction for one conserved block: appends
/// total - sum(reduced).
inline Vector restore_conserved(const Vector& reduced, double total = 1.0) {
  Vector full(reduced.size() + 1);
  full.head(reduced.size()) = reduced;
  full(reduced.size()) = total - reduced.sum();
  return full;
}

// ---------------------------------------------------------------------------
// On-the-fly collection.

struct TrajectoryPoint {
  std::size_t trajectory = 0;
  std::size_t step = 0;
  Vector state;
};

/// Flattens ensemble trajectories into candidate measurement points (every
/// `stride`-th saved state) and keeps the first occurrence of each distinct
/// state.
inline std::vector<TrajectoryPoint> collect_distinct_states(const std::vector<std::vector<Vector>>& trajectories,
                                                            std::size_t stride = 1) {
  auto less = [](const Vector& a, const Vector& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  };
  std::set<Vector, decltype(less)> seen(less);
  std::vector<TrajectoryPoint> out;
  for (std::size_t r = 0; r < trajectories.size(); ++r)
    for (std::size_t t = 0; t < trajectories[r].size(); t += stride)
      if (seen.insert(trajectories[r][t]).second) out.push_back({r, t, trajectories[r][t]});
  return out;
}

// ---------------------------------------------------------------------------
// Measurement table: one row per measurement with point coordinates, drift
// components, upper-triangular diffusion entries, k and tau.

inline void write_measurements(std::ostream& out, const std::vector<Measurement>& ms) {
  if (ms.empty()) {
    out << "k,tau\n";
    return;
  }
  const int d = ms.front().dim();
  for (int i = 0; i < d; ++i) out << "x" << i + 1 << ',';
  for (int i = 0; i < d; ++i) out << "b" << i + 1 << ',';
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) out << "a" << i + 1 << '_' << j + 1 << ',';
  out << "k,tau\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& m : ms) {
    if (m.dim() != d) throw ContractError("measurements have mixed dimensions");
    for (int i = 0; i < d; ++i) out << m.point(i) << ',';
    for (int i = 0; i < d; ++i) out << m.drift_est(i) << ',';
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) out << m.diffusion_est(i, j) << ',';
    out << m.sample_count << ',' << m.lag << '\n';
  }
}

inline std::vector<Measurement> read_measurements(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw DataError("measurement table is empty");
  const long columns = std::count(header.begin(), header.end(), ',') + 1;
  // columns = d + d + d(d+1)/2 + 2
  int d = 0;
  while (2 * d + pair_count(d) + 2 < columns) ++d;
  if (2 * d + pair_count(d) + 2 != columns) throw DataError("measurement table header has an unexpected width");
  std::vector<Measurement> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw DataError("measurement table: bad number '" + cell + "'");
      }
    }
    if (static_cast<long>(v.size()) != columns) throw DataError("measurement table: ragged row");
    Measurement m;
    m.point = Eigen::Map<Vector>(v.data(), d);
    m.drift_est = Eigen::Map<Vector>(v.data() + d, d);
    m.diffusion_est.resize(d, d);
    std::size_t pos = static_cast<std::size_t>(2 * d);
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) m.diffusion_est(i, j) = m.diffusion_est(j, i) = v[pos++];
    m.sample_count = static_cast<long>(v[pos++]);
    m.lag = v[pos];
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace abmkoop
