#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "abmkoop/voter.hpp"
#include "oracles.hpp"

using namespace abmkoop;

TEST(Network, ClusteredExtremes) {
  const auto sparse = make_clustered_network({4, 6}, 0.0, 1);
  EXPECT_EQ(sparse.num_edges(), 6u + 15u);
  EXPECT_EQ(sparse.inter_cluster_edges(0, 1), 0u);
  const auto dense = make_clustered_network({4, 6}, 1.0, 1);
  EXPECT_EQ(dense.num_edges(), 45u);
  EXPECT_EQ(dense.inter_cluster_edges(0, 1), 24u);
  EXPECT_EQ(dense.inter_cluster_edges(1, 0), 24u);
}

TEST(Network, InterClusterEdgeCountMatchesExpectation) {
  const int trials = 40;
  double total = 0.0;
  for (int s = 0; s < trials; ++s) total += static_cast<double>(make_clustered_network({50, 50}, 0.2, s).inter_cluster_edges(0, 1));
  const double mean = total / trials;
  const double sd = std::sqrt(2500 * 0.2 * 0.8 / trials);
  EXPECT_NEAR(mean, 500.0, 4.0 * sd);
}

TEST(Network, SimpleGraphInvariants) {
  const auto net = make_random_network(60, 0.3, 8);
  for (int i = 0; i < net.num_agents(); ++i) {
    EXPECT_FALSE(net.has_edge(i, i));
    for (int j : net.neighbors(i)) EXPECT_TRUE(net.has_edge(j, i));
  }
  EXPECT_THROW(make_random_network(10, 1.5, 1), ContractError);
  EXPECT_THROW(make_clustered_network({3, 0}, 0.1, 1), ContractError);
}

TEST(Network, FileRoundTrip) {
  const auto net = make_clustered_network({5, 7, 3}, 0.3, 4);
  std::stringstream ss;
  write_network(ss, net);
  const auto back = read_network(ss);
  EXPECT_EQ(back.num_agents(), 15);
  EXPECT_EQ(back.num_clusters(), 3);
  EXPECT_EQ(back.num_edges(), net.num_edges());
  for (int i = 0; i < 15; ++i) {
    EXPECT_EQ(back.cluster_of(i), net.cluster_of(i));
    for (int j : net.neighbors(i)) EXPECT_TRUE(back.has_edge(i, j));
  }
  std::stringstream bad("not a network\n");
  EXPECT_THROW(read_network(bad), DataError);
}

TEST(Network, AdjacencyIsSymmetric) {
  const auto net = make_random_network(8, 0.5, 2);
  std::stringstream ss;
  write_adjacency(ss, net);
  std::vector<std::vector<int>> a(8, std::vector<int>(8));
  for (auto& row : a)
    for (auto& v : row) ss >> v;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) EXPECT_EQ(a[i][j], a[j][i]);
}

TEST(Aggregate, ClusterFrequencies) {
  const Network net(100, [] {
    std::vector<int> c(100, 0);
    std::fill(c.begin() + 50, c.end(), 1);
    return c;
  }());
  AgentTypeState s;
  auto push = [&](int type, int count) { s.types.insert(s.types.end(), static_cast<std::size_t>(count), type); };
  push(0, 40);
  push(1, 7);
  push(2, 3);
  push(0, 10);
  push(1, 25);
  push(2, 15);
  const auto f = aggregate(net, s, 3);
  const std::vector<double> expected = {0.8, 0.14, 0.06, 0.2, 0.5, 0.3};
  for (int k = 0; k < 6; ++k) EXPECT_NEAR(f.freqs(k), expected[static_cast<std::size_t>(k)], 1e-15);
  s.types[0] = 3;
  EXPECT_THROW(aggregate(net, s, 3), DomainError);
}

TEST(DiscreteStep, NoExplorationKeepsConsensus) {
  const auto net = make_clustered_network({20, 20}, 0.3, 3);
  AgentTypeState s{std::vector<int>(40, 1)};
  const auto out = dt_evm_step(net, default_voter_rates(0.0), s, 9);
  EXPECT_EQ(out.types, s.types);
}

TEST(DiscreteStep, IsolatedAgentSwitchProbability) {
  // No neighbours: only symmetric exploration e between three types acts, so
  // P(stay) = 1/3 + 2/3 exp(-3 e t_step).
  const Network net(1, {0});
  auto rates = default_voter_rates(0.5);
  rates.step_size = 0.3;
  DiscreteVoterStepper stepper(net, rates);
  Rng rng = make_rng(17);
  const int trials = 200000;
  int switched = 0;
  for (int t = 0; t < trials; ++t) {
    AgentTypeState s{{0}};
    stepper.step(s, rng);
    switched += s.types[0] != 0;
  }
  const double p = 2.0 / 3.0 * (1.0 - std::exp(-3.0 * 0.5 * 0.3));
  EXPECT_NEAR(static_cast<double>(switched) / trials, p, 4.0 * std::sqrt(p * (1 - p) / trials));
}

TEST(DiscreteStep, PairSwitchProbabilityMatchesImitationRate) {
  // Agent of type 1 next to one agent of type 2: rate gamma_12 = 2 when it moves first.
  const Network net = [] {
    Network n(2, {0, 0});
    n.add_edge(0, 1);
    return n;
  }();
  auto rates = default_voter_rates(0.0);
  rates.step_size = 0.1;
  DiscreteVoterStepper stepper(net, rates);
  const Matrix p = stepper.transition_matrix({0, 1, 0}, {0, 0, 0});
  EXPECT_NEAR(p(0, 1), 1.0 - std::exp(-0.2), 1e-13);
  EXPECT_NEAR(p(0, 0), std::exp(-0.2), 1e-13);
}

TEST(DiscreteStep, ZeroStepSizeIsIdentity) {
  const auto net = make_clustered_network({10, 10}, 0.5, 1);
  auto rates = default_voter_rates();
  rates.step_size = 0.0;
  Rng rng = make_rng(2);
  AgentTypeState s{std::vector<int>(20)};
  for (auto& t : s.types) t = static_cast<int>(uniform01(rng) * 3);
  EXPECT_EQ(dt_evm_step(net, rates, s, 5).types, s.types);
}

TEST(DiscreteStep, PreservesAgentsAndTypeRange) {
  const auto net = make_clustered_network({30, 30}, 0.2, 1);
  const auto rates = default_voter_rates();
  DiscreteVoterStepper stepper(net, rates);
  Rng rng = make_rng(3);
  AgentTypeState s{std::vector<int>(60, 0)};
  for (int step = 0; step < 50; ++step) {
    stepper.step(s, rng);
    ASSERT_EQ(s.types.size(), 60u);
    for (int t : s.types) ASSERT_TRUE(t >= 0 && t < 3);
    EXPECT_NEAR(aggregate(net, s, 3).freqs.head(3).sum(), 1.0, 1e-14);
  }
}

TEST(DiscreteStep, TransitionMatricesAreStochastic) {
  const auto net = make_random_network(5, 1.0, 1);
  DiscreteVoterStepper stepper(net, default_voter_rates());
  for (int a = 0; a <= 4; ++a)
    for (int b = 0; a + b <= 4; ++b) {
      const Matrix g = stepper.rate_matrix({a, b, 4 - a - b}, {0, 0, 0});
      EXPECT_LT(g.rowwise().sum().cwiseAbs().maxCoeff(), 1e-14);
      const Matrix p = stepper.transition_matrix({a, b, 4 - a - b}, {0, 0, 0});
      EXPECT_LT((p.rowwise().sum() - Vector::Ones(3)).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_GE(p.minCoeff(), -1e-15);
    }
}

TEST(DiscreteStep, RejectsInvalidRates) {
  auto rates = default_voter_rates();
  rates.imitation(0, 0) = 1.0;
  EXPECT_THROW(make_evm_model(rates, 10), ContractError);
  rates = default_voter_rates();
  rates.exploration(0, 1) = -0.1;
  EXPECT_THROW(rates.validate(), ContractError);
}

TEST(TwoCluster, NoCouplingEqualsTwoIndependentComplete) {
  const auto sde = two_cluster_limit_sde(default_voter_rates(), 0.0, 40, make_dictionary(4, 3));
  Rng rng = make_rng(4);
  for (int t = 0; t < 20; ++t) {
    Vector x(4);
    for (int k = 0; k < 4; ++k) x(k) = 0.5 * uniform01(rng);
    oracle::Vec b1, b2;
    oracle::Mat a1, a2;
    oracle::reduced_mean_field(x(0), x(1), oracle::imitation_rates(), oracle::exploration_rates(), 40, b1, a1);
    oracle::reduced_mean_field(x(2), x(3), oracle::imitation_rates(), oracle::exploration_rates(), 40, b2, a2);
    const Vector b = sde.b(x);
    const Matrix a = sde.a(x);
    EXPECT_LT((b.head(2) - b1).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_LT((b.tail(2) - b2).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_LT((a.topLeftCorner(2, 2) - a1).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_LT((a.bottomRightCorner(2, 2) - a2).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_LT(a.topRightCorner(2, 2).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(TwoCluster, FullCouplingUsesPooledNeighbourhood) {
  // p = 1: imitation in cluster 1 is weighted half by own and half by other frequencies.
  const double p = 1.0;
  const auto full = two_cluster_limit_sde_full(default_voter_rates(0.0), p, 10, make_dictionary(6, 3));
  Vector x(6);
  x << 0.2, 0.3, 0.5, 0.6, 0.1, 0.3;
  const auto g = oracle::imitation_rates();
  Vector pooled = 0.5 * (x.head(3) + x.tail(3));
  double b0 = 0.0;
  // inflow: a type-j agent copies a type-0 neighbour; outflow: the reverse
  for (int j = 0; j < 3; ++j) b0 += g(j, 0) * x(j) * pooled(0) - g(0, j) * x(0) * pooled(j);
  EXPECT_NEAR(full.b(x)(0), b0, 1e-14);
}

TEST(TwoCluster, CouplingSynchronisesMeanDynamics) {
  const auto sde = two_cluster_limit_sde(default_voter_rates(), 0.2, 50, make_dictionary(4, 3));
  Vector x(4);
  x << 0.7, 0.1, 0.1, 0.2;
  const double gap0 = (x.head(2) - x.tail(2)).norm();
  for (int step = 0; step < 5000; ++step) x += 0.01 * sde.b(x);
  EXPECT_LT((x.head(2) - x.tail(2)).norm(), 0.1 * gap0);
}

TEST(TwoCluster, DiffusionPsdOnProductSimplex) {
  const auto sde = two_cluster_limit_sde(default_voter_rates(), 0.2, 50, make_dictionary(4, 3));
  Rng rng = make_rng(8);
  for (int t = 0; t < 200; ++t) {
    Vector x(4);
    for (int q = 0; q < 2; ++q) {
      double u = uniform01(rng), v = uniform01(rng);
      if (u + v > 1) {
        u = 1 - u;
        v = 1 - v;
      }
      x(2 * q) = u;
      x(2 * q + 1) = v;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sde.a(x));
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-13);
  }
}
