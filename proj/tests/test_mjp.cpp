#include <gtest/gtest.h>

#include <cmath>

#include "abmkoop/conservation.hpp"
#include "abmkoop/mjp.hpp"
#include "abmkoop/voter.hpp"
#include "oracles.hpp"

using namespace abmkoop;

namespace {

JumpModel voter_model(long n, double exploration = 0.01) { return make_evm_model(default_voter_rates(exploration), n); }

std::size_t find_rule(const JumpModel& m, std::vector<int> reactants, std::vector<int> products) {
  for (std::size_t k = 0; k < m.num_rules(); ++k)
    if (m.rule(k).reactants == reactants && m.rule(k).products == products) return k;
  throw std::runtime_error("rule not found");
}

oracle::Vec empirical_distribution(const JumpModel& m, const CmeGenerator& gen, const PopulationState& x0, long runs,
                                   std::uint64_t seed) {
  std::map<PopulationState, std::size_t> index;
  for (std::size_t s = 0; s < gen.states.size(); ++s) index[gen.states[s]] = s;
  oracle::Vec p = oracle::Vec::Zero(static_cast<Eigen::Index>(gen.states.size()));
  SsaSimulator sim(m);
  for (long r = 0; r < runs; ++r) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(r)});
    PopulationState x = x0;
    sim.advance(x, 1.0, rng);
    p(static_cast<Eigen::Index>(index.at(x))) += 1.0;
  }
  return p / static_cast<double>(runs);
}

}  // namespace

TEST(JumpModel, RejectsInvalidRules) {
  EXPECT_THROW(JumpModel(2, {}, 10), ContractError);
  EXPECT_THROW(JumpModel(2, {{{1, 0}, {1, 0}, 1.0}}, 10), ContractError);   // zero net change
  EXPECT_THROW(JumpModel(2, {{{1, 0}, {0, 1}, 0.0}}, 10), ContractError);   // rate not positive
  EXPECT_THROW(JumpModel(2, {{{1, 0, 0}, {0, 1}, 1.0}}, 10), ContractError); // wrong length
  EXPECT_THROW(JumpModel(2, {{{1, 0}, {0, 1}, 1.0}}, 0), ContractError);
}

TEST(JumpModel, VoterModelHasTwelveRulesOfOrderTwo) {
  const auto m = voter_model(10);
  EXPECT_EQ(m.num_rules(), 12u);
  EXPECT_EQ(m.max_order(), 2);
}

TEST(JumpModel, JsonRoundTrip) {
  const auto m = voter_model(25);
  const auto back = jump_model_from_json(to_json(m));
  ASSERT_EQ(back.num_rules(), m.num_rules());
  EXPECT_EQ(back.population_size(), 25);
  for (std::size_t k = 0; k < m.num_rules(); ++k) {
    EXPECT_EQ(back.rule(k).reactants, m.rule(k).reactants);
    EXPECT_EQ(back.rule(k).products, m.rule(k).products);
    EXPECT_EQ(back.rule(k).rate, m.rule(k).rate);
  }
  EXPECT_THROW(jump_model_from_json({{"num_types", 2}}), ConfigError);
}

TEST(Propensity, ImitationRuleArithmetic) {
  // S1 + S2 -> 2 S2 with rate 2, N = 10, x = (2, 3, 5)
  const auto m = voter_model(10);
  const auto k = find_rule(m, {1, 1, 0}, {0, 2, 0});
  EXPECT_NEAR(propensity(m, k, PopulationState{{2, 3, 5}}), 2.0 * 10 * 0.1 * 2 * 0.1 * 3, 1e-14);
}

TEST(Propensity, ZeroWhenReactantsMissing) {
  const auto m = voter_model(10);
  const auto k = find_rule(m, {1, 1, 0}, {0, 2, 0});
  EXPECT_EQ(propensity(m, k, PopulationState{{0, 5, 5}}), 0.0);
  const JumpModel pair(1, {{{2}, {3}, 1.0}}, 10);
  EXPECT_EQ(propensity(pair, 0, PopulationState{{1}}), 0.0);
  EXPECT_GT(propensity(pair, 0, PopulationState{{2}}), 0.0);
}

TEST(Propensity, ExplorationFirstOrder) {
  const auto m = voter_model(10);
  const auto k = find_rule(m, {1, 0, 0}, {0, 1, 0});
  EXPECT_NEAR(propensity(m, k, PopulationState{{7, 2, 1}}), 0.07, 1e-15);
}

TEST(Propensity, SecondOrderSameSpeciesUsesBinomial) {
  // 2 S1 -> ... with x1 = 5, N = 10: gamma N N^-2 C(5, 2) = 1.5 * 10 / 100 * 10
  const JumpModel m(2, {{{2, 0}, {1, 1}, 1.5}}, 10);
  EXPECT_NEAR(propensity(m, 0, PopulationState{{5, 5}}), 1.5 * 10.0 / 100.0 * 10.0, 1e-14);
}

TEST(Propensity, Errors) {
  const auto m = voter_model(10);
  EXPECT_THROW(propensity(m, 12, PopulationState{{1, 1, 8}}), IndexError);
  EXPECT_THROW(propensity(m, 0, PopulationState{{1, 9}}), ContractError);
}

TEST(Propensity, NonNegativeAndZeroExactlyWhenDepleted) {
  const auto m = voter_model(12);
  for (long a = 0; a <= 12; ++a)
    for (long b = 0; a + b <= 12; ++b) {
      const PopulationState x{{a, b, 12 - a - b}};
      for (std::size_t k = 0; k < m.num_rules(); ++k) {
        const double p = propensity(m, k, x);
        EXPECT_GE(p, 0.0);
        bool depleted = false;
        for (int i = 0; i < 3; ++i) depleted |= x[static_cast<std::size_t>(i)] < m.rule(k).reactants[static_cast<std::size_t>(i)];
        EXPECT_EQ(p == 0.0, depleted);
      }
    }
}

TEST(Gillespie, AbsorbingStateIsConstant) {
  const auto m = voter_model(10, 0.0);
  const auto tr = gillespie_simulate(m, PopulationState{{10, 0, 0}}, 5.0, 1);
  ASSERT_EQ(tr.times.size(), 2u);
  EXPECT_EQ(tr.times[0], 0.0);
  EXPECT_EQ(tr.times[1], 5.0);
  EXPECT_EQ(tr.states[0], tr.states[1]);
}

TEST(Gillespie, MeanFirstJumpTime) {
  const long n = 20;
  const JumpModel m(2, {{{1, 0}, {0, 1}, 1.0}}, n);
  const long runs = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (long r = 0; r < runs; ++r) {
    const auto tr = gillespie_simulate(m, PopulationState{{n, 0}}, 10.0, static_cast<std::uint64_t>(r));
    sum += tr.times[1];
    sum2 += tr.times[1] * tr.times[1];
  }
  const double mean = sum / runs;
  const double se = std::sqrt((sum2 / runs - mean * mean) / runs);
  EXPECT_NEAR(mean, 1.0 / n, 3.0 * se);
}

TEST(Gillespie, PathPropertiesHold) {
  const auto m = voter_model(30);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto tr = gillespie_simulate(m, PopulationState{{10, 15, 5}}, 2.0, seed);
    ASSERT_EQ(tr.times.size(), tr.states.size());
    for (std::size_t i = 1; i < tr.times.size(); ++i) EXPECT_GT(tr.times[i], tr.times[i - 1]);
    EXPECT_GE(tr.times.back(), 2.0);
    for (const auto& s : tr.states) {
      EXPECT_EQ(s.total(), 30);
      for (long c : s.counts) EXPECT_GE(c, 0);
    }
  }
}

TEST(Gillespie, SeededRunsAreReproducible) {
  const auto m = voter_model(30);
  const auto a = gillespie_simulate(m, PopulationState{{10, 15, 5}}, 1.0, 99);
  const auto b = gillespie_simulate(m, PopulationState{{10, 15, 5}}, 1.0, 99);
  EXPECT_EQ(a.times, b.times);
  EXPECT_THROW(gillespie_simulate(m, PopulationState{{10, 15, 5}}, 0.0, 1), ContractError);
}

TEST(Cme, TimeZeroIsIdentity) {
  const auto m = voter_model(4);
  const Distribution p0{{PopulationState{{2, 1, 1}}, 0.25}, {PopulationState{{4, 0, 0}}, 0.75}};
  const auto p = cme_solve(m, p0, 0.0);
  EXPECT_NEAR(p.at(PopulationState{{2, 1, 1}}), 0.25, 1e-15);
  EXPECT_NEAR(p.at(PopulationState{{4, 0, 0}}), 0.75, 1e-15);
}

TEST(Cme, TwoStateClosedForm) {
  const JumpModel m(2, {{{1, 0}, {0, 1}, 1.0}, {{0, 1}, {1, 0}, 1.0}}, 1);
  const auto p = cme_solve(m, {{PopulationState{{1, 0}}, 1.0}}, 1.0);
  EXPECT_NEAR(p.at(PopulationState{{1, 0}}), (1.0 + std::exp(-2.0)) / 2.0, 1e-12);
  EXPECT_NEAR(p.at(PopulationState{{0, 1}}), (1.0 - std::exp(-2.0)) / 2.0, 1e-12);
}

TEST(Cme, ProbabilityIsConserved) {
  const auto m = voter_model(6);
  const auto p = cme_solve(m, {{PopulationState{{1, 2, 3}}, 1.0}}, 2.5);
  double s = 0.0;
  for (const auto& [x, v] : p) s += v;
  EXPECT_NEAR(s, 1.0, 1e-10);
  EXPECT_EQ(p.size(), 28u);  // C(8, 2)
}

TEST(Cme, RateMatrixColumnsSumToZero) {
  const auto gen = build_cme(voter_model(5), {PopulationState{{5, 0, 0}}}, 1000);
  const Matrix q(gen.rates);
  EXPECT_LT(q.colwise().sum().cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Cme, SparsePathMatchesDense) {
  const auto m = voter_model(8);
  const Distribution p0{{PopulationState{{2, 3, 3}}, 1.0}};
  const auto dense = cme_solve(m, p0, 0.7);
  const auto sparse = cme_solve(m, p0, 0.7, 20000, 1);
  for (const auto& [x, v] : dense) EXPECT_NEAR(sparse.at(x), v, 1e-10);
}

TEST(Cme, StateCapEnforced) {
  EXPECT_THROW(cme_solve(voter_model(200), {{PopulationState{{200, 0, 0}}, 1.0}}, 1.0), CapacityError);
  EXPECT_THROW(cme_solve(voter_model(4), {{PopulationState{{4, 0, 0}}, 0.5}}, 1.0), ContractError);
}

TEST(Cme, SsaAgreesAndConvergesWithRuns) {
  const auto m = voter_model(4);
  const PopulationState x0{{2, 1, 1}};
  const auto gen = build_cme(m, {x0}, 1000);
  ASSERT_EQ(gen.states.size(), 15u);
  const auto exact = cme_solve(m, {{x0, 1.0}}, 1.0);
  oracle::Vec p(15);
  for (std::size_t s = 0; s < 15; ++s) p(static_cast<Eigen::Index>(s)) = exact.at(gen.states[s]);
  const double tv_small = oracle::total_variation(empirical_distribution(m, gen, x0, 10000, 5), p);
  const double tv_large = oracle::total_variation(empirical_distribution(m, gen, x0, 200000, 6), p);
  EXPECT_LE(tv_large, 0.02);
  EXPECT_LT(tv_large, tv_small);
}

TEST(LimitSde, ReducedCoefficientsMatchClosedForm) {
  const auto m = voter_model(10);
  auto dict = make_dictionary(2, 3);
  const auto red = reduce_conserved(limit_sde(m, make_dictionary(3, 3)), ConservationLayout{1, 3}, dict);
  const auto b1 = red.drift.component(0);
  EXPECT_NEAR(b1.coefficient({1, 0}), 0.97, 1e-14);
  const auto a12 = red.diffusion_entry(0, 1);
  EXPECT_NEAR(a12.coefficient({1, 1}), -0.3, 1e-14);
  EXPECT_NEAR(a12.coefficient({1, 0}), -0.001, 1e-15);
  EXPECT_NEAR(a12.coefficient({0, 1}), -0.001, 1e-15);
  EXPECT_NEAR(a12.coefficient({0, 0}), 0.0, 1e-15);
}

TEST(LimitSde, MatchesMeanFieldOraclePointwise) {
  const double n = 37;
  const auto m = voter_model(37);
  auto full = limit_sde(m, make_dictionary(3, 3));
  Rng rng = make_rng(21);
  for (int t = 0; t < 50; ++t) {
    double u = uniform01(rng), v = uniform01(rng);
    if (u + v > 1) {
      u = 1 - u;
      v = 1 - v;
    }
    Vector c(3);
    c << u, v, 1 - u - v;
    oracle::Vec b;
    oracle::Mat a;
    oracle::mean_field(c, oracle::imitation_rates(), oracle::exploration_rates(), n, b, a);
    EXPECT_LT((full.b(c) - b).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_LT((full.a(c) - a).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(LimitSde, BarycenterIsFixedPoint) {
  const auto sde = limit_sde(voter_model(10), make_dictionary(3, 3));
  Vector c = Vector::Constant(3, 1.0 / 3.0);
  EXPECT_LT(sde.b(c).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(LimitSde, DiffusionPsdOnSimplex) {
  const auto sde = limit_sde(voter_model(50), make_dictionary(3, 3));
  for (int i = 0; i <= 20; ++i)
    for (int j = 0; i + j <= 20; ++j) {
      Vector c(3);
      c << i / 20.0, j / 20.0, (20 - i - j) / 20.0;
      Eigen::SelfAdjointEigenSolver<Matrix> eig(sde.a(c));
      EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-12);
      EXPECT_LT((sde.a(c) - sde.a(c).transpose()).norm(), 1e-15);
    }
}

TEST(LimitSde, FiniteNCorrectionForSameSpeciesReactants) {
  // 2 S1 -> S1 + S2 at rate 1: alpha~ = c1 (c1 - 1/N) / 2
  const JumpModel m(2, {{{2, 0}, {1, 1}, 1.0}}, 10);
  const auto sde = limit_sde(m, make_dictionary(2, 3));
  const auto b2 = sde.drift.component(1);
  EXPECT_NEAR(b2.coefficient({2, 0}), 0.5, 1e-15);
  EXPECT_NEAR(b2.coefficient({1, 0}), -0.05, 1e-15);
}

TEST(LimitSde, DictionaryTooSmallThrows) {
  EXPECT_THROW(limit_sde(voter_model(10), make_dictionary(3, 1)), RepresentationError);
}
