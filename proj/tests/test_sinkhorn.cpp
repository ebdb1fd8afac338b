#include "enot/sinkhorn.hpp"
#include "enot/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace enot;

namespace {
Vector random_simplex(Eigen::Index n, Rng& rng) {
  Vector w(n);
  for (Eigen::Index i = 0; i < n; ++i) w(i) = 0.1 + rng.uniform();
  return w / w.sum();
}

DiscreteEotProblem random_problem(Eigen::Index n, Eigen::Index m, double eps, Rng& rng) {
  RowMatrix xs(n, 2), ys(m, 2);
  for (Eigen::Index i = 0; i < xs.size(); ++i) xs.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < ys.size(); ++i) ys.data()[i] = rng.normal() + 0.5;
  return {squared_cost(xs, ys), random_simplex(n, rng), random_simplex(m, rng), eps};
}

// <M,P> - eps H(P) for the 2x2 family P(q) = [[1/2-q, q], [q, 1/2-q]].
double two_by_two_objective(double q, double eps) {
  double d = 0.5 - q;
  return 2.0 * q + eps * 2.0 * (d * std::log(d) + q * std::log(q));
}

double golden_section_min(double lo, double hi, double eps) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  while (b - a > 1e-14) {
    if (two_by_two_objective(c, eps) < two_by_two_objective(d, eps)) b = d;
    else a = c;
    c = b - r * (b - a);
    d = a + r * (b - a);
  }
  return 0.5 * (a + b);
}
}  // namespace

TEST(Sinkhorn, SinglePoint) {
  DiscreteEotProblem p{Matrix::Constant(1, 1, 3.0), Vector::Ones(1), Vector::Ones(1), 0.5};
  auto c = sinkhorn(p);
  EXPECT_NEAR(c.plan(0, 0), 1.0, 1e-15);
}

TEST(Sinkhorn, ConstantCostGivesProductCoupling) {
  Rng rng(1);
  for (double eps : {0.05, 1.0, 10.0}) {
    Vector a = Vector::Constant(4, 0.25), b = Vector::Constant(3, 1.0 / 3.0);
    auto c = sinkhorn({Matrix::Constant(4, 3, 2.0), a, b, eps});
    EXPECT_LT((c.plan - a * b.transpose()).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Sinkhorn, TwoByTwoMatchesBruteForceScan) {
  for (double eps : {0.25, 1.0, 4.0}) {
    Matrix m(2, 2);
    m << 0, 1, 1, 0;
    auto c = sinkhorn({m, Vector::Constant(2, 0.5), Vector::Constant(2, 0.5), eps}, 1e-14);
    double q = golden_section_min(1e-15, 0.5 - 1e-15, eps);
    EXPECT_NEAR(c.plan(0, 1), q, 1e-8) << "eps=" << eps;
    EXPECT_NEAR(c.plan(1, 0), q, 1e-8);
    EXPECT_NEAR(q, 0.5 / (1.0 + std::exp(1.0 / eps)), 1e-8);
  }
}

TEST(Sinkhorn, RandomInstancesConverge) {
  Rng rng(2);
  for (int k = 0; k < 20; ++k) {
    auto c = sinkhorn(random_problem(50, 50, 0.5, rng));
    EXPECT_TRUE(c.converged);
    EXPECT_LE(c.max_residual(), 1e-9);
  }
}

TEST(Sinkhorn, EntropyNondecreasingInEpsilon) {
  Rng rng(3);
  auto p = random_problem(30, 40, 1.0, rng);
  double prev = -1.0;
  for (double eps : {0.05, 0.1, 0.5, 1.0, 5.0}) {
    p.epsilon = eps;
    double h = discrete_entropy(sinkhorn(p).plan);
    EXPECT_GE(h, prev - 1e-9) << "eps=" << eps;
    prev = h;
  }
}

TEST(Sinkhorn, SwappingMarginalsTransposesPlan) {
  Rng rng(4);
  auto p = random_problem(20, 30, 0.3, rng);
  auto c = sinkhorn(p, 1e-13);
  auto ct = sinkhorn({p.cost.transpose(), p.b, p.a, p.epsilon}, 1e-13);
  EXPECT_LT((c.plan - ct.plan.transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sinkhorn, IdentityCouplingCrossCovariance) {
  Rng rng(5);
  RowMatrix xs(5, 2);
  for (Eigen::Index i = 0; i < xs.size(); ++i) xs.data()[i] = rng.normal();
  Matrix plan = Matrix::Identity(5, 5) / 5.0;
  Matrix c = coupling_cross_covariance(plan, xs, xs);
  RowMatrix centered = xs.rowwise() - xs.colwise().mean();
  Matrix pop = centered.transpose() * centered / 5.0;
  EXPECT_LT((c - pop).norm(), 1e-14);
}

TEST(Sinkhorn, ProductCouplingHasNoCrossCovariance) {
  RowMatrix xs(3, 1), ys(3, 1);
  xs << -1, 0, 1;
  ys << -2, 0, 2;
  Matrix plan = Matrix::Constant(3, 3, 1.0 / 9.0);
  EXPECT_LT(coupling_cross_covariance(plan, xs, ys).norm(), 1e-12);
}

TEST(Sinkhorn, RejectsBadInput) {
  EXPECT_THROW(sinkhorn({Matrix::Zero(2, 2), Vector::Constant(2, 0.5), Vector::Constant(2, 0.5), 0.0}),
               std::invalid_argument);
  EXPECT_THROW(sinkhorn({Matrix::Zero(2, 3), Vector::Constant(2, 0.5), Vector::Constant(2, 0.5), 1.0}),
               std::invalid_argument);
  Vector neg(2);
  neg << 1.5, -0.5;
  EXPECT_THROW(sinkhorn({Matrix::Zero(2, 2), neg, Vector::Constant(2, 0.5), 1.0}), std::invalid_argument);
}

TEST(Sinkhorn, JsonRoundTrip) {
  Rng rng(6);
  auto p = random_problem(4, 3, 0.7, rng);
  auto back = problem_from_json(nlohmann::json::parse(to_json(p).dump()));
  EXPECT_TRUE(back.cost == p.cost);
  EXPECT_TRUE(back.a == p.a);
  EXPECT_EQ(back.epsilon, p.epsilon);
}

TEST(SinkhornGrid, AgreesWithDenseSolverOnSmallGrid) {
  GridEotProblem g;
  g.epsilon = 0.5;
  g.source_axes = {Vector::LinSpaced(7, -2, 2), Vector::LinSpaced(5, -1, 1)};
  g.target_axes = {Vector::LinSpaced(6, -1, 3), Vector::LinSpaced(4, 0, 2)};
  RowMatrix xs = g.source_points(), ys = g.target_points();
  g.a = Vector::Constant(xs.rows(), 1.0 / xs.rows());
  g.b = Vector::Constant(ys.rows(), 1.0 / ys.rows());
  auto grid = sinkhorn_grid(g, 1e-12);
  auto dense = sinkhorn({squared_cost(xs, ys), g.a, g.b, g.epsilon}, 1e-12);
  Matrix cross = coupling_cross_covariance(dense.plan, xs, ys);
  EXPECT_LT((grid.cross_cov - cross).norm(), 1e-9);
}
