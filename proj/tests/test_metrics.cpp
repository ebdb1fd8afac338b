#include "enot/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace enot;

TEST(Moments, ConstantSamplesHaveZeroCovariance) {
  RowMatrix s = RowMatrix::Constant(10, 3, 2.5);
  auto m = empirical_moments(s);
  EXPECT_EQ(m.cov.norm(), 0.0);
}

TEST(Moments, TwoPointUnbiased) {
  RowMatrix s(2, 1);
  s << -1, 1;
  auto m = empirical_moments(s);
  EXPECT_EQ(m.mean(0), 0.0);
  EXPECT_EQ(m.cov(0, 0), 2.0);
  EXPECT_THROW(empirical_moments(RowMatrix::Zero(1, 2)), std::invalid_argument);
}

TEST(Moments, LargeSampleCovariance) {
  Rng rng(1);
  Matrix sigma = random_covariance(3, rng);
  const std::size_t n = 100000;
  auto m = empirical_moments(sample_gaussian(Vector::Zero(3), sigma, n, rng));
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) {
      double se = std::sqrt((sigma(i, i) * sigma(j, j) + sigma(i, j) * sigma(i, j)) / n);
      EXPECT_NEAR(m.cov(i, j), sigma(i, j), 4.0 * se);
    }
}

TEST(Uvp, Examples) {
  GaussianDist ref(Vector::Zero(1), Matrix::Constant(1, 1, 4.0));
  MomentSummary est{Vector::Zero(1), Matrix::Constant(1, 1, 1.0), 100};
  EXPECT_NEAR(bw2_uvp(est, ref), 50.0, 1e-12);
  MomentSummary same{Vector::Zero(1), Matrix::Constant(1, 1, 4.0), 100};
  EXPECT_NEAR(bw2_uvp(same, ref), 0.0, 1e-12);
  GaussianDist degenerate(Vector::Zero(1), Matrix::Zero(1, 1));
  EXPECT_THROW(bw2_uvp(est, degenerate), std::invalid_argument);
}

TEST(Uvp, PermutationInvariantAndNonnegative) {
  Rng rng(2);
  RowMatrix s = sample_gaussian(Vector::Zero(2), Matrix::Identity(2, 2), 500, rng);
  std::vector<int> perm(500);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937(3));
  RowMatrix p(500, 2);
  for (int i = 0; i < 500; ++i) p.row(i) = s.row(perm[i]);
  auto ref = GaussianDist::standard(2);
  EXPECT_NEAR(bw2_uvp(s, ref), bw2_uvp(p, ref), 1e-10);
  EXPECT_GE(bw2_uvp(s, ref), 0.0);
}

TEST(Uvp, PlanLevelUsesConcatenatedPairs) {
  Rng rng(4);
  auto plan = solve_gaussian_eot(GaussianDist::standard(2), GaussianDist::standard(2), 1.0);
  auto [x, y] = sample_plan(plan, 100000, rng);
  EXPECT_LT(plan_bw2_uvp(x, y, plan), 0.1);
  // Independent pairs have the right marginals but the wrong plan.
  RowMatrix shuffled = y.colwise().reverse();
  EXPECT_GT(plan_bw2_uvp(x, shuffled, plan), 5.0);
}

TEST(EnergyDistance, IdenticalSetsAreZero) {
  Rng rng(5);
  RowMatrix a = sample_gaussian(Vector::Zero(2), Matrix::Identity(2, 2), 300, rng);
  EXPECT_EQ(energy_distance(a, a), 0.0);
}

TEST(EnergyDistance, PointMasses) {
  RowMatrix a = RowMatrix::Zero(5, 3);
  RowMatrix b = RowMatrix::Zero(7, 3);
  b.col(1).setConstant(2.5);
  EXPECT_NEAR(energy_distance(a, b), 5.0, 1e-14);
}

TEST(EnergyDistance, SymmetricExactly) {
  Rng rng(6);
  RowMatrix a = sample_gaussian(Vector::Zero(2), Matrix::Identity(2, 2), 200, rng);
  RowMatrix b = sample_gaussian(Vector::Ones(2), Matrix::Identity(2, 2), 150, rng);
  EXPECT_EQ(energy_distance(a, b), energy_distance(b, a));
  RowMatrix c = sample_gaussian(Vector::Ones(2), Matrix::Identity(2, 2), 200, rng);
  EXPECT_EQ(energy_distance(a, c), energy_distance(c, a));
}

TEST(EnergyDistance, StableAcrossSeeds) {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    RowMatrix a = sample_gaussian(Vector::Zero(1), Matrix::Identity(1, 1), 10000, rng);
    RowMatrix b = sample_gaussian(Vector::Constant(1, 3.0), Matrix::Identity(1, 1), 10000, rng);
    return energy_distance(a, b);
  };
  double e1 = run(7), e2 = run(8);
  EXPECT_GT(e1, 0.0);
  EXPECT_LT(std::abs(e1 - e2) / e1, 0.05);
}

TEST(MetricRecord, Fields) {
  auto j = metric_record("bw2_uvp_plan", 0.5, 1000, 3, 42);
  EXPECT_EQ(j["metric"], "bw2_uvp_plan");
  EXPECT_EQ(j["n_samples"], 1000);
}
