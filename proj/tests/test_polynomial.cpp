#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <set>

#include "abmkoop/linalg.hpp"
#include "abmkoop/parallel.hpp"
#include "abmkoop/polynomial.hpp"
#include "abmkoop/random.hpp"

using namespace abmkoop;

TEST(Polynomial, ArithmeticAndEvaluation) {
  const Polynomial x = Polynomial::variable(2, 0), y = Polynomial::variable(2, 1);
  const Polynomial p = x * x * 3.0 - x * y + Polynomial::constant(2, 2.0);
  Vector v(2);
  v << 0.5, -2.0;
  EXPECT_DOUBLE_EQ(p(v), 3.0 * 0.25 + 1.0 + 2.0);
  EXPECT_EQ(p.degree(), 2);
  EXPECT_TRUE((p - p).is_zero());
}

TEST(Polynomial, DerivativeByExponent) {
  const Polynomial x = Polynomial::variable(2, 0), y = Polynomial::variable(2, 1);
  const Polynomial p = x * x * y * 2.0 + y;  // d/dx = 4xy, d/dy = 2x^2 + 1
  Vector v(2);
  v << 1.5, 0.25;
  EXPECT_DOUBLE_EQ(p.derivative(0)(v), 4.0 * 1.5 * 0.25);
  EXPECT_DOUBLE_EQ(p.derivative(1)(v), 2.0 * 2.25 + 1.0);
}

TEST(Polynomial, DimensionMismatchThrows) {
  EXPECT_THROW(Polynomial::variable(2, 0) + Polynomial::variable(3, 0), ContractError);
}

TEST(Polynomial, ComposeSubstitutesVariables) {
  // p(x, y) = x y with x = 1 - s, y = s -> s - s^2
  const Polynomial p = Polynomial::variable(2, 0) * Polynomial::variable(2, 1);
  const Polynomial s = Polynomial::variable(1, 0);
  const Polynomial q = compose(p, {Polynomial::constant(1, 1.0) - s, s});
  Vector v(1);
  v << 0.3;
  EXPECT_NEAR(q(v), 0.3 - 0.09, 1e-15);
}

TEST(Dictionary, SizeIsBinomial) {
  for (int dim = 1; dim <= 4; ++dim)
    for (int deg = 1; deg <= 4; ++deg) {
      long expected = 1;
      for (int k = 1; k <= deg; ++k) expected = expected * (dim + k) / k;
      EXPECT_EQ(static_cast<long>(MonomialDictionary(dim, deg).size()), expected) << dim << "," << deg;
    }
  EXPECT_EQ(MonomialDictionary(2, 3).size(), 10u);
}

TEST(Dictionary, GradedLexicographicOrder) {
  const MonomialDictionary d(2, 3);
  const std::vector<MultiIndex> expected = {{0, 0}, {1, 0}, {0, 1}, {2, 0}, {1, 1},
                                            {0, 2}, {3, 0}, {2, 1}, {1, 2}, {0, 3}};
  EXPECT_EQ(d.indices(), expected);
  EXPECT_EQ(d.linear_index(0), 1u);
  EXPECT_EQ(d.quadratic_index(0, 1), 4u);
  EXPECT_EQ(d.quadratic_index(1, 1), 5u);
}

TEST(Dictionary, UnknownMonomialThrows) {
  const MonomialDictionary d(2, 2);
  EXPECT_THROW(d.index_of({3, 0}), RepresentationError);
  EXPECT_THROW(MonomialDictionary(0, 2), ContractError);
  EXPECT_THROW(MonomialDictionary(2, 0), ContractError);
}

TEST(Dictionary, FromIndicesRejectsReordering) {
  auto idx = MonomialDictionary(2, 2).indices();
  EXPECT_NO_THROW(MonomialDictionary::from_indices(2, 2, idx));
  std::swap(idx[1], idx[2]);
  EXPECT_THROW(MonomialDictionary::from_indices(2, 2, idx), DataError);
}

TEST(Dictionary, CoefficientRoundTrip) {
  auto dict = make_dictionary(3, 3);
  Rng rng = make_rng(5);
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(dict->size()));
  for (Eigen::Index k = 0; k < row.size(); ++k) row(k) = uniform01(rng) - 0.5;
  const Polynomial p = from_coefficients(row, *dict);
  EXPECT_EQ((to_coefficients(p, *dict) - row).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Dictionary, TruncationReportsDroppedMass) {
  auto dict = make_dictionary(1, 2);
  const Polynomial x = Polynomial::variable(1, 0);
  const Polynomial p = x * x * x * 0.5 + x;
  EXPECT_THROW(to_coefficients(p, *dict), RepresentationError);
  double dropped = 0.0;
  const auto row = to_coefficients(p, *dict, true, &dropped);
  EXPECT_DOUBLE_EQ(dropped, 0.5);
  EXPECT_DOUBLE_EQ(row(1), 1.0);
}

TEST(PairIndex, UpperTriangularOrder) {
  EXPECT_EQ(pair_count(3), 6);
  EXPECT_EQ(pair_index(0, 0, 3), 0);
  EXPECT_EQ(pair_index(0, 2, 3), 2);
  EXPECT_EQ(pair_index(1, 1, 3), 3);
  EXPECT_EQ(pair_index(2, 1, 3), 4);
  EXPECT_EQ(pair_index(2, 2, 3), 5);
}

TEST(Expm, MatchesClosedFormTwoState) {
  Matrix q(2, 2);
  q << -1, 1, 1, -1;
  const Matrix e = expm(q);
  const double a = (1.0 + std::exp(-2.0)) / 2.0, b = (1.0 - std::exp(-2.0)) / 2.0;
  EXPECT_NEAR(e(0, 0), a, 1e-12);
  EXPECT_NEAR(e(0, 1), b, 1e-12);
  EXPECT_NEAR(e(1, 1), a, 1e-12);
}

TEST(Expm, LargeNormAndZero) {
  Matrix z = Matrix::Zero(3, 3);
  EXPECT_EQ((expm(z) - Matrix::Identity(3, 3)).norm(), 0.0);
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = -20.0;
  d(1, 1) = 3.0;
  const Matrix e = expm(d);
  EXPECT_NEAR(e(0, 0), std::exp(-20.0), 1e-12);
  EXPECT_NEAR(e(1, 1) / std::exp(3.0), 1.0, 1e-12);
}

TEST(Expm, ActionAgreesWithDense) {
  Matrix q(3, 3);
  q << -2, 1, 0.5, 1, -1, 0.5, 1, 0, -1;
  SparseMatrix s = q.sparseView();
  Vector v(3);
  v << 0.2, 0.5, 0.3;
  EXPECT_LT((expm_action(s, 1.7, v) - expm(q * 1.7) * v).norm(), 1e-11);
  EXPECT_EQ((expm_action(s, 0.0, v) - v).norm(), 0.0);
}

TEST(PinvSolve, MinimumNormAndRank) {
  Matrix a(3, 2);
  a << 1, 1, 1, 1, 1, 1;  // rank 1
  Matrix b(3, 1);
  b << 2, 2, 2;
  const auto r = pinv_solve(a, b);
  EXPECT_EQ(r.rank, 1);
  EXPECT_TRUE(r.rank_deficient);
  EXPECT_NEAR(r.solution(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(r.solution(1, 0), 1.0, 1e-12);
  EXPECT_THROW(pinv_solve(a, Matrix::Zero(2, 1)), ContractError);
}

TEST(PsdSigma, IdentityAndRankDeficient) {
  EXPECT_LT((psd_sigma(Matrix::Identity(3, 3)).sigma - Matrix::Identity(3, 3)).norm(), 1e-14);
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 4.0;
  Matrix expected = Matrix::Zero(2, 2);
  expected(0, 0) = 2.0;
  EXPECT_LT((psd_sigma(a).sigma - expected).norm(), 1e-14);
}

TEST(PsdSigma, ClipsSmallNegativeEigenvalue) {
  Matrix v(2, 2);
  v << std::cos(0.3), -std::sin(0.3), std::sin(0.3), std::cos(0.3);
  Vector l(2);
  l << 1.0, -1e-6;
  const Matrix a = v * l.asDiagonal() * v.transpose();
  const auto r = psd_sigma(a);
  EXPECT_LE((r.sigma * r.sigma.transpose() - a).norm(), 1e-6 + 1e-15);
  EXPECT_NEAR(r.clipped_mass, 1e-6, 1e-15);
}

TEST(PsdSigma, RandomMatricesGivePsdProduct) {
  Rng rng = make_rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix a(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) a(i, j) = uniform01(rng) - 0.5;
    a = 0.5 * (a + a.transpose());
    const Matrix s = psd_sigma(a).sigma;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s * s.transpose());
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-12);
  }
}

TEST(Seeds, DerivationIsDeterministicAndDistinct) {
  EXPECT_EQ(derive_seed(7, {1, 2}), derive_seed(7, {1, 2}));
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 50; ++a)
    for (std::uint64_t b = 0; b < 50; ++b) seen.insert(derive_seed(42, {a, b}));
  EXPECT_EQ(seen.size(), 2500u);
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
}

TEST(Seeds, UniformInUnitInterval) {
  Rng rng = make_rng(3);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = uniform01(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 100000.0, 0.5, 0.005);
  EXPECT_GT(uniform01_open_low(rng), 0.0);
}

TEST(Parallel, EveryIndexRunsOnceAndErrorsPropagate) {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; }, 4);
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(100, [](std::size_t i) {
                 if (i == 57) throw DataError("boom");
               }, 3),
               DataError);
}

TEST(Parallel, WorkerCountFromEnvironment) {
  setenv("ABMKOOP_WORKERS", "3", 1);
  EXPECT_EQ(worker_count(), 3u);
  setenv("ABMKOOP_WORKERS", "junk", 1);
  EXPECT_GE(worker_count(), 1u);
  unsetenv("ABMKOOP_WORKERS");
}
