#include <gtest/gtest.h>

#include <random>

#include "ebcl/manifold.hpp"
#include "oracles.hpp"

using namespace ebcl;

namespace {

ConstraintBasis random_basis(std::uint64_t seed, std::size_t d, std::size_t k) {
  if (k == 0) return ConstraintBasis::empty(d);
  Rng rng(seed);
  return ConstraintBasis(orthonormalize(rng.normal_matrix(d, k)));
}

DenseMatrix canonical_columns(std::size_t d, std::size_t first, std::size_t count) {
  DenseMatrix m(d, count);
  for (std::size_t j = 0; j < count; ++j) m(first + j, j) = 1.0;
  return m;
}

}  // namespace

TEST(ConstraintBasis, RejectsNonOrthonormal) {
  EXPECT_THROW(ConstraintBasis(DenseMatrix::from_rows({{1, 1}, {0, 1}})), Error);
  EXPECT_EQ(ConstraintBasis::empty(5).k(), 0u);
  EXPECT_EQ(ConstraintBasis::empty(5).d(), 5u);
}

TEST(ComplementProject, Cases) {
  Rng rng(1);
  const DenseMatrix z = rng.normal_matrix(6, 3);
  EXPECT_EQ(complement_project(ConstraintBasis::empty(6), z), z);

  const ConstraintBasis g = random_basis(2, 6, 2);
  const DenseMatrix inside = matmul(g.matrix(), rng.normal_matrix(2, 3));
  EXPECT_LT(fro_norm(complement_project(g, inside)), 1e-12);

  const ConstraintBasis e1(canonical_columns(6, 0, 1));
  const DenseMatrix p = complement_project(e1, z);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(p(0, j), 0.0);
    for (std::size_t i = 1; i < 6; ++i) EXPECT_EQ(p(i, j), z(i, j));
  }

  const DenseMatrix once = complement_project(g, z);
  EXPECT_LT(fro_norm(complement_project(g, once) - once), 1e-10 * fro_norm(z));
  EXPECT_LT(fro_norm(matmul_tn(g.matrix(), once)), 1e-10 * fro_norm(z));
  EXPECT_THROW(complement_project(g, DenseMatrix(5, 1)), Error);
}

TEST(RestrictedStiefelPoint, ValidationAndDimensions) {
  const ConstraintBasis g(canonical_columns(4, 0, 2));
  EXPECT_NO_THROW(RestrictedStiefelPoint::make(g, canonical_columns(4, 2, 2)));
  try {
    RestrictedStiefelPoint::make(g, canonical_columns(4, 1, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InfeasiblePoint);
  }
  try {
    RestrictedStiefelPoint::make(g, canonical_columns(4, 0, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InfeasibleDimensions);
  }
}

TEST(RestrictedStiefelPoint, AdoptRepairsSmallDrift) {
  const ConstraintBasis g = random_basis(3, 8, 2);
  const auto p = random_feasible(g, 8, 3, 4);
  const auto before = diagnostics().drift_repairs.load();

  DenseMatrix tiny = p.u();
  tiny(0, 0) += 1e-7;
  const auto a = RestrictedStiefelPoint::adopt(g, tiny);
  EXPECT_TRUE(is_feasible(g, a.u()));
  EXPECT_EQ(diagnostics().drift_repairs.load(), before);

  DenseMatrix drifted = p.u();
  drifted(0, 0) += 1e-4;
  const auto b = RestrictedStiefelPoint::adopt(g, drifted);
  EXPECT_TRUE(is_feasible(g, b.u()));
  EXPECT_EQ(diagnostics().drift_repairs.load(), before + 1);

  DenseMatrix broken = p.u() * 2.0;
  EXPECT_THROW(RestrictedStiefelPoint::adopt(g, broken), Error);
}

TEST(Feasibility, Predicates) {
  const ConstraintBasis empty = ConstraintBasis::empty(5);
  EXPECT_TRUE(is_feasible(empty, DenseMatrix::eye(5, 2)));
  const auto p = random_feasible(random_basis(5, 7, 2), 7, 2, 6);
  Rng rng(7);
  EXPECT_TRUE(is_tangent(p, tangent_project(p, rng.normal_matrix(7, 2))));
  const DenseMatrix s = DenseMatrix::from_rows({{1, 0.5}, {0.5, 2}});
  EXPECT_FALSE(is_tangent(p, matmul(p.u(), s)));
}

TEST(TangentProject, FixedPointAndNormalSpace) {
  const auto p = random_feasible(random_basis(8, 9, 2), 9, 3, 9);
  std::mt19937_64 gen(10);
  const auto t = oracle::from_eigen(
      oracle::random_tangent(gen, oracle::to_eigen(p.u()), oracle::to_eigen(p.basis().matrix())));
  EXPECT_LT(fro_norm(tangent_project(p, t) - t), 1e-10 * std::max(1.0, fro_norm(t)));

  const auto q = random_feasible(ConstraintBasis::empty(6), 6, 2, 11);
  const DenseMatrix s = DenseMatrix::from_rows({{2, -1}, {-1, 0.5}});
  EXPECT_LT(fro_norm(tangent_project(q, matmul(q.u(), s))), 1e-12);
}

TEST(TangentProject, MatchesLeastSquaresOracle) {
  const ConstraintBasis g = random_basis(12, 12, 2);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = random_feasible(g, 12, 3, 100 + seed);
    Rng rng(200 + seed);
    const DenseMatrix z = rng.normal_matrix(12, 3);
    const auto ref = oracle::tangent_least_squares(oracle::to_eigen(p.u()),
                                                   oracle::to_eigen(g.matrix()), oracle::to_eigen(z));
    EXPECT_LT((oracle::to_eigen(tangent_project(p, z)) - ref).norm(), 1e-7);
  }
}

TEST(Retract, FixedPointAndScaleInvariance) {
  const ConstraintBasis g = random_basis(13, 10, 3);
  const auto p = random_feasible(g, 10, 2, 14);
  EXPECT_LT(fro_norm(retract(g, p.u()).u() - p.u()), 1e-10);
  EXPECT_LT(fro_norm(retract(g, p.u() * 2.0).u() - p.u()), 1e-10);
}

TEST(Retract, RoutesAgreeWithEigenPolar) {
  const ConstraintBasis g = random_basis(15, 10, 3);
  Rng rng(16);
  for (int i = 0; i < 10; ++i) {
    const DenseMatrix ut = rng.normal_matrix(10, 2);
    const DenseMatrix polar = retract_polar(g, ut).u();
    const DenseMatrix white = retract_whitening(g, ut).u();
    const DenseMatrix y = complement_project(g, ut);
    EXPECT_LT(fro_norm(polar - white), 1e-8);
    EXPECT_LT((oracle::to_eigen(polar) - oracle::polar(oracle::to_eigen(y))).norm(), 1e-8);
  }
}

TEST(Retract, RankDeficientInput) {
  const ConstraintBasis g(canonical_columns(5, 0, 2));
  DenseMatrix inside = canonical_columns(5, 0, 2);
  try {
    retract(g, inside);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::RankDeficient);
  }
  DenseMatrix dup(5, 2);
  dup(3, 0) = 1.0;
  dup(3, 1) = 1.0;
  EXPECT_THROW(retract_whitening(g, dup), Error);
  EXPECT_THROW(retract_polar(g, dup), Error);
}

TEST(Retract, BeatsRandomCandidates) {
  const ConstraintBasis g = random_basis(17, 10, 3);
  Rng rng(18);
  const DenseMatrix ut = rng.normal_matrix(10, 2);
  const DenseMatrix best = retract(g, ut).u();
  const double dist = fro_norm(best - ut);
  for (std::uint64_t c = 0; c < 200; ++c)
    EXPECT_LT(dist, fro_norm(random_feasible(g, 10, 2, 1000 + c).u() - ut));
}

TEST(RandomFeasible, DeterministicAndFeasible) {
  const auto a = random_feasible(ConstraintBasis::empty(5), 5, 2, 42);
  EXPECT_LT(stiefel_residual(a.u()), 1e-10);
  const ConstraintBasis g = random_basis(19, 5, 3);
  const auto before = diagnostics().degenerate_dimensions.load();
  const auto b = random_feasible(g, 5, 2, 42);
  EXPECT_EQ(diagnostics().degenerate_dimensions.load(), before + 1);
  EXPECT_LT(constraint_residual(g, b.u()), 1e-10);
  EXPECT_EQ(random_feasible(g, 5, 2, 42).u(), b.u());
  try {
    random_feasible(g, 5, 3, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InfeasibleDimensions);
  }
}

TEST(Manifold, ConstraintPreservedOver500Cycles) {
  const ConstraintBasis g = random_basis(20, 12, 3);
  auto p = random_feasible(g, 12, 3, 21);
  Rng rng(22);
  for (int i = 0; i < 500; ++i) {
    const DenseMatrix step = tangent_project(p, rng.normal_matrix(12, 3)) * 0.05;
    p = retract(g, p.u() + step);
    ASSERT_LT(stiefel_residual(p.u()), 1e-8);
    ASSERT_LT(constraint_residual(g, p.u()), 1e-8);
  }
}
