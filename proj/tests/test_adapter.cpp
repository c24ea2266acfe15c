#include <gtest/gtest.h>

#include <sstream>

#include "ebcl/adapter.hpp"
#include "oracles.hpp"

using namespace ebcl;

namespace {

TaskUpdate random_update(std::uint64_t seed, std::size_t d, std::size_t n, std::size_t r, double s,
                         const ConstraintBasis& g) {
  return TaskUpdate{s, random_feasible(g, d, r, seed),
                    random_feasible(ConstraintBasis::empty(n), n, r, seed + 1), 1};
}

}  // namespace

TEST(InitDirections, TopSingularPairsWithEmptyMemory) {
  DenseMatrix snap(4, 3);
  snap(0, 0) = 3.0;
  snap(1, 1) = 2.0;
  snap(2, 2) = 1.0;
  const auto dirs = init_directions(snap, GradientMemory::init(4, 0.95), 2);
  EXPECT_NEAR(std::abs(dirs.u0.u()(0, 0)), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(dirs.u0.u()(1, 1)), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(dirs.v0.u()(0, 0)), 1.0, 1e-14);
  EXPECT_EQ(dirs.padded, 0u);
}

TEST(InitDirections, AvoidsMemoryDirections) {
  Rng rng(1);
  const auto mem = GradientMemory::init(10, 0.9).update(rng.normal_matrix(10, 3)).memory;
  const auto dirs = init_directions(rng.normal_matrix(10, 6), mem, 3);
  EXPECT_LT(constraint_residual(mem.basis(), dirs.u0.u()), 1e-10);
  EXPECT_LT(stiefel_residual(dirs.u0.u()), 1e-10);
  EXPECT_LT(stiefel_residual(dirs.v0.u()), 1e-10);
}

TEST(InitDirections, SpansMatchEigenSvd) {
  Rng rng(2);
  const DenseMatrix snap = rng.normal_matrix(8, 5);
  const auto dirs = init_directions(snap, GradientMemory::init(8, 0.95), 2);
  Eigen::JacobiSVD<oracle::Mat> svd(oracle::to_eigen(snap), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const oracle::Mat ur = svd.matrixU().leftCols(2);
  const oracle::Mat u = oracle::to_eigen(dirs.u0.u());
  EXPECT_LT((u * u.transpose() - ur * ur.transpose()).norm(), 1e-10);
}

TEST(InitDirections, RankDeficientAndPadded) {
  DenseMatrix snap(6, 4);
  snap(0, 0) = 1.0;
  const auto mem = GradientMemory::init(6, 0.95);
  try {
    init_directions(snap, mem, 2);
    FAIL() << "expected RankDeficient";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::RankDeficient);
  }
  const auto dirs = init_directions_padded(snap, mem, 3, 7);
  EXPECT_EQ(dirs.padded, 2u);
  EXPECT_LT(stiefel_residual(dirs.u0.u()), 1e-10);
  EXPECT_NEAR(std::abs(dirs.u0.u()(0, 0)), 1.0, 1e-12);
}

TEST(InitDirections, InfeasibleDimensions) {
  Rng rng(3);
  const auto mem = GradientMemory::init(4, 1.0).update(rng.normal_matrix(4, 3)).memory;
  try {
    init_directions(rng.normal_matrix(4, 4), mem, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InfeasibleDimensions);
  }
}

TEST(InitScale, Endpoints) {
  EXPECT_DOUBLE_EQ(init_scale(1, 5), 0.002);
  EXPECT_DOUBLE_EQ(init_scale(5, 5), 0.010);
  EXPECT_DOUBLE_EQ(init_scale(3, 5), 0.006);
  EXPECT_DOUBLE_EQ(init_scale(1, 1), 0.002);
  for (std::size_t l = 1; l < 8; ++l) EXPECT_LT(init_scale(l, 8), init_scale(l + 1, 8));
  EXPECT_THROW(init_scale(0, 3), Error);
  EXPECT_THROW(init_scale(4, 3), Error);
}

TEST(Materialize, SpectrumIsFlat) {
  const ConstraintBasis g(orthonormalize(Rng(4).normal_matrix(12, 2)));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double s = 0.01 + 0.1 * static_cast<double>(seed);
    const auto up = random_update(10 + seed, 12, 7, 3, s, g);
    const auto sv = oracle::to_eigen(materialize(up)).jacobiSvd().singularValues();
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(sv(i), s, 1e-12 * s);
    for (int i = 3; i < sv.size(); ++i) EXPECT_LT(sv(i), 1e-12 * s);
  }
}

TEST(Apply, SumsUpdates) {
  const ConstraintBasis empty = ConstraintBasis::empty(6);
  Rng rng(5);
  const DenseMatrix w0 = rng.normal_matrix(6, 4);
  const auto a = random_update(20, 6, 4, 2, 0.3, empty);
  const auto b = random_update(30, 6, 4, 1, 0.7, empty);
  const DenseMatrix seq = apply(apply(w0, a), b);
  EXPECT_LT(fro_norm(seq - (w0 + materialize(a) + materialize(b))), 1e-14);
  EXPECT_THROW(apply(DenseMatrix(4, 6), a), Error);
}

TEST(AdapterCheckpoint, BitExactRoundTrip) {
  const ConstraintBasis g(orthonormalize(Rng(6).normal_matrix(9, 2)));
  std::stringstream ss;
  std::vector<TaskUpdate> ups;
  for (std::uint64_t i = 0; i < 3; ++i) {
    ups.push_back(random_update(40 + i, 9, 5, 2, 1.0 / 3.0 + static_cast<double>(i), g));
    ups.back().layer_index = i + 1;
    write_adapter(ss, ups.back());
  }
  const auto recs = read_adapters(ss);
  ASSERT_EQ(recs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(recs[i].layer, i + 1);
    EXPECT_EQ(recs[i].rank, 2u);
    EXPECT_EQ(recs[i].s, ups[i].s);
    EXPECT_EQ(recs[i].u, ups[i].u.u());
    EXPECT_EQ(recs[i].v, ups[i].v.u());
  }
}

TEST(AdapterCheckpoint, MalformedHeader) {
  std::stringstream ss("1 2\n");
  try {
    read_adapters(ss);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
}
