#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <shared_mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "abmkoop/conservation.hpp"
#include "abmkoop/errors.hpp"
#include "abmkoop/linalg.hpp"
#include "abmkoop/mjp.hpp"
#include "abmkoop/polynomial.hpp"
#include "abmkoop/random.hpp"
#include "abmkoop/sde_model.hpp"

namespace abmkoop {

/// Undirected simple graph with a cluster label per agent. Agents and
/// clusters are 0-based in memory; files use 1-based cluster ids.
class Network {
 public:
  Network(int num_agents, std::vector<int> cluster_of)
      : neighbors_(static_cast<std::size_t>(num_agents)), cluster_of_(std::move(cluster_of)) {
    if (static_cast<int>(cluster_of_.size()) != num_agents)
      throw ContractError("cluster assignment must cover every agent");
    num_clusters_ = 0;
    for (int c : cluster_of_) {
      if (c < 0) throw ContractError("cluster ids must be nonnegative");
      num_clusters_ = std::max(num_clusters_, c + 1);
    }
    cluster_sizes_.assign(static_cast<std::size_t>(num_clusters_), 0);
    for (int c : cluster_of_) ++cluster_sizes_[static_cast<std::size_t>(c)];
    for (int s : cluster_sizes_)
      if (s == 0) throw ContractError("cluster ids must be contiguous");
  }

  void add_edge(int i, int j) {
    if (i == j) throw ContractError("self-loops are not allowed");
    neighbors_.at(static_cast<std::size_t>(i)).push_back(j);
    neighbors_.at(static_cast<std::size_t>(j)).push_back(i);
  }

  int num_agents() const noexcept { return static_cast<int>(neighbors_.size()); }
  int num_clusters() const noexcept { return num_clusters_; }
  int cluster_of(int agent) const { return cluster_of_[static_cast<std::size_t>(agent)]; }
  const std::vector<int>& clusters() const noexcept { return cluster_of_; }
  int cluster_size(int q) const { return cluster_sizes_.at(static_cast<std::size_t>(q)); }
  const std::vector<int>& neighbors(int agent) const { return neighbors_[static_cast<std::size_t>(agent)]; }

  std::size_t num_edges() const {
    std::size_t e = 0;
    for (const auto& n : neighbors_) e += n.size();
    return e / 2;
  }

  bool has_edge(int i, int j) const {
    const auto& n = neighbors(i);
    return std::find(n.begin(), n.end(), j) != n.end();
  }

  /// Edges between clusters q and r (q != r).
  std::size_t inter_cluster_edges(int q, int r) const {
    std::size_t e = 0;
    for (int i = 0; i < num_agents(); ++i) {
      if (cluster_of(i) != q) continue;
      for (int j : neighbors(i))
        if (cluster_of(j) == r) ++e;
    }
    return e;
  }

  void sort_neighbors() {
    for (auto& n : neighbors_) std::sort(n.begin(), n.end());
  }

 private:
  std::vector<std::vector<int>> neighbors_;
  std::vector<int> cluster_of_;
  std::vector<int> cluster_sizes_;
  int num_clusters_ = 0;
};

/// Complete subgraphs of the given sizes; every inter-cluster pair is linked
/// independently with probability p.
inline Network make_clustered_network(const std::vector<int>& sizes, double p, std::uint64_t seed) {
  if (sizes.empty()) throw ContractError("at least one cluster is required");
  if (!(p >= 0.0 && p <= 1.0)) throw ContractError("edge probability must lie in [0, 1]");
  std::vector<int> cluster_of;
  for (std::size_t q = 0; q < sizes.size(); ++q) {
    if (sizes[q] < 1) throw ContractError("cluster sizes must be >= 1");
    cluster_of.insert(cluster_of.end(), static_cast<std::size_t>(sizes[q]), static_cast<int>(q));
  }
  const int n = static_cast<int>(cluster_of.size());
  Network net(n, cluster_of);
  Rng rng = make_rng(seed);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (cluster_of[static_cast<std::size_t>(i)] == cluster_of[static_cast<std::size_t>(j)]) {
        net.add_edge(i, j);
      } else if (p > 0.0 && uniform01(rng) < p) {
        net.add_edge(i, j);
      }
    }
  }
  return net;
}

/// Erdos-Renyi graph on n agents forming a single cluster.
inline Network make_random_network(int n, double p, std::uint64_t seed) {
  if (n < 1) throw ContractError("network needs at least one agent");
  if (!(p >= 0.0 && p <= 1.0)) throw ContractError("edge probability must lie in [0, 1]");
  Network net(n, std::vector<int>(static_cast<std::size_t>(n), 0));
  Rng rng = make_rng(seed);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (uniform01(rng) < p) net.add_edge(i, j);
  return net;
}

inline void write_network(std::ostream& out, const Network& net) {
  out << "abmkoop-network v1\n";
  out << "num_agents " << net.num_agents() << '\n';
  out << "clusters";
  for (int c : net.clusters()) out << ' ' << (c + 1);
  out << '\n';
  for (int i = 0; i < net.num_agents(); ++i) {
    std::vector<int> nb = net.neighbors(i);
    std::sort(nb.begin(), nb.end());
    for (int j : nb)
      if (j > i) out << "edge " << i << ' ' << j << '\n';
  }
}

inline Network read_network(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "abmkoop-network v1") throw DataError("not an abmkoop network file");
  std::string key;
  int n = 0;
  if (!(in >> key >> n) || key != "num_agents" || n < 1) throw DataError("network file: bad num_agents");
  if (!(in >> key) || key != "clusters") throw DataError("network file: missing clusters line");
  std::vector<int> clusters(static_cast<std::size_t>(n));
  for (auto& c : clusters) {
    if (!(in >> c) || c < 1) throw DataError("network file: bad cluster id");
    --c;
  }
  Network net(n, clusters);
  int i = 0, j = 0;
  while (in >> key) {
    if (key != "edge" || !(in >> i >> j) || i < 0 || j < 0 || i >= n || j >= n)
      throw DataError("network file: bad edge line");
    net.add_edge(i, j);
  }
  return net;
}

/// Dense 0/1 adjacency matrix, one row per line.
inline void write_adjacency(std::ostream& out, const Network& net) {
  const int n = net.num_agents();
  std::vector<char> row(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::fill(row.begin(), row.end(), '0');
    for (int j : net.neighbors(i)) row[static_cast<std::size_t>(j)] = '1';
    for (int j = 0; j < n; ++j) out << (j ? " " : "") << row[static_cast<std::size_t>(j)];
    out << '\n';
  }
}

/// Imitation (gamma_ij), exploration (gamma'_ij) and optional inter-cluster
/// imitation (beta_ij) rates; when beta is absent it equals gamma.
struct VoterRates {
  Matrix imitation;
  Matrix exploration;
  std::optional<Matrix> inter_cluster_imitation;
  double step_size = 0.01;

  int num_types() const { return static_cast<int>(imitation.rows()); }
  const Matrix& inter() const { return inter_cluster_imitation ? *inter_cluster_imitation : imitation; }

  void validate() const {
    const auto d = imitation.rows();
    auto check = [d](const Matrix& m, const char* name) {
      if (m.rows() != d || m.cols() != d) throw ContractError(std::string(name) + " must be d x d");
      for (Eigen::Index i = 0; i < d; ++i) {
        if (m(i, i) != 0.0) throw ContractError(std::string(name) + " must have a zero diagonal");
        for (Eigen::Index j = 0; j < d; ++j)
          if (m(i, j) < 0.0) throw ContractError(std::string(name) + " entries must be nonnegative");
      }
    };
    check(imitation, "imitation");
    check(exploration, "exploration");
    if (inter_cluster_imitation) check(*inter_cluster_imitation, "inter-cluster imitation");
    if (!(step_size >= 0.0)) throw ContractError("step size must be nonnegative");
  }
};

/// gamma_12 = gamma_23 = gamma_31 = 2, gamma_32 = gamma_21 = gamma_13 = 1 and
/// gamma'_ij = exploration for i != j.
inline VoterRates default_voter_rates(double exploration = 0.01) {
  VoterRates r;
  r.imitation = Matrix::Zero(3, 3);
  r.imitation(0, 1) = r.imitation(1, 2) = r.imitation(2, 0) = 2.0;
  r.imitation(2, 1) = r.imitation(1, 0) = r.imitation(0, 2) = 1.0;
  r.exploration = Matrix::Constant(3, 3, exploration);
  r.exploration.diagonal().setZero();
  return r;
}

/// Complete-network voter model as a jump process: S_i + S_j -> 2 S_j with
/// rate gamma_ij and S_i -> S_j with rate gamma'_ij. Zero rates are omitted.
inline JumpModel make_evm_model(const VoterRates& rates, long population_size) {
  rates.validate();
  const int d = rates.num_types();
  std::vector<TransitionRule> rules;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      if (i == j || rates.imitation(i, j) <= 0.0) continue;
      TransitionRule r{std::vector<int>(static_cast<std::size_t>(d), 0), std::vector<int>(static_cast<std::size_t>(d), 0),
                       rates.imitation(i, j)};
      r.reactants[static_cast<std::size_t>(i)] = 1;
      r.reactants[static_cast<std::size_t>(j)] = 1;
      r.products[static_cast<std::size_t>(j)] = 2;
      rules.push_back(std::move(r));
    }
  }
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      if (i == j || rates.exploration(i, j) <= 0.0) continue;
      TransitionRule r{std::vector<int>(static_cast<std::size_t>(d), 0), std::vector<int>(static_cast<std::size_t>(d), 0),
                       rates.exploration(i, j)};
      r.reactants[static_cast<std::size_t>(i)] = 1;
      r.products[static_cast<std::size_t>(j)] = 1;
      rules.push_back(std::move(r));
    }
  }
  return JumpModel(d, std::move(rules), population_size);
}

/// Agent types, 0-based in memory (type i here is S_{i+1}).
struct AgentTypeState {
  std::vector<int> types;
};

/// Per-cluster type frequencies stacked cluster by cluster.
struct ClusterFrequencyState {
  int num_clusters = 1;
  int num_types = 1;
  Vector freqs;
};

inline ClusterFrequencyState aggregate(const Network& net, const AgentTypeState& state, int num_types) {
  if (static_cast<int>(state.types.size()) != net.num_agents())
    throw ContractError("state size does not match the network");
  const int q_count = net.num_clusters();
  ClusterFrequencyState out{q_count, num_types, Vector::Zero(q_count * num_types)};
  std::vector<long> counts(static_cast<std::size_t>(q_count * num_types), 0);
  for (int a = 0; a < net.num_agents(); ++a) {
    const int t = state.types[static_cast<std::size_t>(a)];
    if (t < 0 || t >= num_types) throw DomainError("agent type out of range");
    ++counts[static_cast<std::size_t>(net.cluster_of(a) * num_types + t)];
  }
  for (int q = 0; q < q_count; ++q) {
    const int size = net.cluster_size(q);
    if (size == 0) throw DomainError("empty cluster");
    for (int i = 0; i < num_types; ++i)
      out.freqs(q * num_types + i) = static_cast<double>(counts[static_cast<std::size_t>(q * num_types + i)]) / size;
  }
  return out;
}

/// exp(t_step G) keyed by the neighbor type counts (intra then inter). Safe
/// to share between threads.
class TransitionCache {
 public:
  template <typename Make>
  Matrix get(const std::vector<int>& key, Make&& make) {
    {
      std::shared_lock lock(mutex_);
      auto it = map_.find(key);
      if (it != map_.end()) return it->second;
    }
    Matrix value = make();
    std::unique_lock lock(mutex_);
    if (map_.size() > 200000) map_.clear();
    map_.emplace(key, value);
    return value;
  }

 private:
  std::shared_mutex mutex_;
  std::map<std::vector<int>, Matrix> map_;
};

/// One sweep of the discrete-time voter model. Agents are visited in a
/// uniformly random order and updated in place, so later agents see earlier
/// changes. The per-agent transition matrix exp(t_step G) depends only on the
/// neighbor type counts and is cached by them.
class DiscreteVoterStepper {
 public:
  DiscreteVoterStepper(const Network& net, VoterRates rates,
                       std::shared_ptr<TransitionCache> cache = std::make_shared<TransitionCache>())
      : net_(&net), rates_(std::move(rates)), cache_(std::move(cache)) {
    rates_.validate();
    d_ = rates_.num_types();
    order_.resize(static_cast<std::size_t>(net.num_agents()));
    key_.resize(static_cast<std::size_t>(2 * d_));
  }

  int num_types() const noexcept { return d_; }

  /// Rate matrix for an agent whose neighborhood holds the given intra- and
  /// inter-cluster type counts. Rows sum to zero.
  Matrix rate_matrix(const std::vector<int>& intra, const std::vector<int>& inter) const {
    int total = 0;
    for (int i = 0; i < d_; ++i) total += intra[static_cast<std::size_t>(i)] + inter[static_cast<std::size_t>(i)];
    Matrix g = Matrix::Zero(d_, d_);
    const Matrix& beta = rates_.inter();
    for (int i = 0; i < d_; ++i) {
      double row = 0.0;
      for (int j = 0; j < d_; ++j) {
        if (i == j) continue;
        double v = rates_.exploration(i, j);
        if (total > 0)
          v += (rates_.imitation(i, j) * intra[static_cast<std::size_t>(j)] +
                beta(i, j) * inter[static_cast<std::size_t>(j)]) /
               total;
        g(i, j) = v;
        row += v;
      }
      g(i, i) = -row;
    }
    return g;
  }

  void step(AgentTypeState& state, Rng& rng) {
    const int n = net_->num_agents();
    if (static_cast<int>(state.types.size()) != n) throw ContractError("state size does not match the network");
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng);
    std::vector<int> intra(static_cast<std::size_t>(d_)), inter(static_cast<std::size_t>(d_));
    for (int agent : order_) {
      std::fill(intra.begin(), intra.end(), 0);
      std::fill(inter.begin(), inter.end(), 0);
      const int own = net_->cluster_of(agent);
      for (int nb : net_->neighbors(agent)) {
        const int t = state.types[static_cast<std::size_t>(nb)];
        if (net_->cluster_of(nb) == own)
          ++intra[static_cast<std::size_t>(t)];
        else
          ++inter[static_cast<std::size_t>(t)];
      }
      const Matrix p = transition_matrix(intra, inter);
      const int cur = state.types[static_cast<std::size_t>(agent)];
      const double u = uniform01(rng);
      double acc = 0.0;
      int next = cur;
      for (int j = 0; j < d_; ++j) {
        acc += p(cur, j);
        if (u < acc) {
          next = j;
          break;
        }
      }
      state.types[static_cast<std::size_t>(agent)] = next;
    }
  }

  Matrix transition_matrix(const std::vector<int>& intra, const std::vector<int>& inter) {
    std::copy(intra.begin(), intra.end(), key_.begin());
    std::copy(inter.begin(), inter.end(), key_.begin() + d_);
    return cache_->get(key_, [&] { return expm(rates_.step_size * rate_matrix(intra, inter)); });
  }

 private:
  const Network* net_;
  VoterRates rates_;
  int d_ = 0;
  std::vector<int> order_;
  std::vector<int> key_;
  std::shared_ptr<TransitionCache> cache_;
};

inline AgentTypeState dt_evm_step(const Network& net, const VoterRates& rates, const AgentTypeState& state,
                                  std::uint64_t seed) {
  DiscreteVoterStepper stepper(net, rates);
  AgentTypeState out = state;
  Rng rng = make_rng(seed);
  stepper.step(out, rng);
  return out;
}

/// Two equally sized clusters in coordinates C = (c_1, c_2), 2d-dimensional.
/// Intra-cluster imitation is weighted by 1/(1+p), inter-cluster imitation by
/// p/(1+p), exploration is unweighted, and the diffusion carries 1/N where N
/// is the size of one cluster.
inline IdentifiedSde two_cluster_limit_sde_full(const VoterRates& rates, double p, long cluster_size,
                                                DictionaryPtr dictionary) {
  rates.validate();
  const int d = rates.num_types();
  const int dim = 2 * d;
  if (dictionary->dim() != dim) throw ContractError("dictionary must have dimension 2d");
  if (cluster_size < 1) throw ContractError("cluster size must be >= 1");
  const double intra_w = 1.0 / (1.0 + p);
  const double inter_w = p / (1.0 + p);
  const Matrix& beta = rates.inter();

  std::vector<Polynomial> drift(static_cast<std::size_t>(dim), Polynomial(dim));
  std::vector<Polynomial> diff(static_cast<std::size_t>(pair_count(dim)), Polynomial(dim));
  auto channel = [&](const Polynomial& alpha, int from, int to) {
    drift[static_cast<std::size_t>(from)] -= alpha;
    drift[static_cast<std::size_t>(to)] += alpha;
    const Polynomial w = alpha * (1.0 / static_cast<double>(cluster_size));
    diff[static_cast<std::size_t>(pair_index(from, from, dim))] += w;
    diff[static_cast<std::size_t>(pair_index(to, to, dim))] += w;
    diff[static_cast<std::size_t>(pair_index(from, to, dim))] -= w;
  };
  auto var = [dim](int k) { return Polynomial::variable(dim, k); };
  for (int q = 0; q < 2; ++q) {
    const int other = 1 - q;
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) {
        if (i == j) continue;
        const int from = q * d + i;
        const int to = q * d + j;
        if (rates.imitation(i, j) > 0.0)
          channel(var(from) * var(q * d + j) * (intra_w * rates.imitation(i, j)), from, to);
        if (rates.exploration(i, j) > 0.0) channel(var(from) * rates.exploration(i, j), from, to);
        if (beta(i, j) > 0.0 && inter_w > 0.0)
          channel(var(from) * var(other * d + j) * (inter_w * beta(i, j)), from, to);
      }
    }
  }
  IdentifiedSde sde(PolynomialField::from_polynomials(dictionary, drift),
                    PolynomialField::from_polynomials(dictionary, diff), cluster_size);
  sde.metadata["source"] = "two_cluster_limit_sde";
  return sde;
}

/// Same model restricted to the 2(d-1) reduced coordinates (last type of each
/// cluster eliminated).
inline IdentifiedSde two_cluster_limit_sde(const VoterRates& rates, double p, long cluster_size,
                                           DictionaryPtr reduced_dictionary) {
  const int d = rates.num_types();
  const int degree = std::max(3, reduced_dictionary->max_degree());
  auto full = two_cluster_limit_sde_full(rates, p, cluster_size, make_dictionary(2 * d, degree));
  return reduce_conserved(full, ConservationLayout{2, d}, std::move(reduced_dictionary));
}

}  // namespace abmkoop
