#include "enot/autodiff.hpp"
#include "gradcheck_cases.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <limits>

using enot::ad::Tensor;
namespace ad = enot::ad;

TEST(Autodiff, PrimitivesMatchCentralDifferences) {
  enot::Rng rng(11);
  for (std::size_t i = 0; i < 200; ++i) {
    auto c = enot::testing::primitive_case(i, rng);
    auto r = ad::grad_check(c.fn, c.point, 1e-6);
    EXPECT_TRUE(r.finite) << c.name;
    EXPECT_LT(r.max_rel_error, 1e-5) << c.name << " case " << i << " coord " << r.worst_index;
  }
}

TEST(Autodiff, MatmulValues) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {5, 6, 7, 8});
  auto c = ad::matmul(a, b);
  std::vector<double> expect{19, 22, 43, 50};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(c[i], expect[i]);
}

TEST(Autodiff, MatmulShapeMismatchThrows) {
  EXPECT_THROW(ad::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ad::ShapeError);
}

TEST(Autodiff, BroadcastIncompatibleThrows) {
  EXPECT_THROW(ad::add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ad::ShapeError);
}

TEST(Autodiff, SumOfSquaresGradient) {
  Tensor x = Tensor::vector({1, 2, 3}, true);
  ad::sum(ad::square(x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4);
  EXPECT_DOUBLE_EQ(x.grad()[2], 6);
}

TEST(Autodiff, ReluGradientAtZeroIsZero) {
  Tensor x = Tensor::vector({-1, 0, 2}, true);
  ad::sum(ad::relu(x)).backward();
  EXPECT_EQ(x.grad()[0], 0);
  EXPECT_EQ(x.grad()[1], 0);
  EXPECT_EQ(x.grad()[2], 1);
}

TEST(Autodiff, LeafGradientsAccumulateUntilZeroed) {
  Tensor x = Tensor::vector({1, 2}, true);
  ad::sum(x).backward();
  ad::sum(x).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Autodiff, BackwardOnSharedSubgraphCountsEveryPath) {
  Tensor x = Tensor::scalar(3.0, true);
  auto y = ad::mul(x, x);
  auto z = ad::add(y, y);
  z.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Autodiff, RepeatedBackwardOnSameGraphIsStable) {
  Tensor x = Tensor::vector({1, 2}, true);
  auto loss = ad::sum(ad::square(ad::scale(x, 2.0)));
  loss.backward();
  std::vector<double> first(x.grad().begin(), x.grad().end());
  x.zero_grad();
  loss.backward();
  EXPECT_EQ(first, std::vector<double>(x.grad().begin(), x.grad().end()));
}

TEST(Autodiff, NoGradGuardBuildsNoGraph) {
  Tensor x = Tensor::vector({1, 2}, true);
  ad::NoGradGuard ng;
  auto y = ad::square(x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->inputs.empty());
}

TEST(Autodiff, DetachCutsGradient) {
  Tensor x = Tensor::vector({1, 2}, true);
  auto y = ad::add(ad::square(x).detach(), x);
  ad::sum(y).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST(Autodiff, StrictFiniteRaises) {
  ad::StrictFiniteGuard strict(true);
  Tensor x = Tensor::vector({std::numeric_limits<double>::max(), 1});
  EXPECT_THROW(ad::scale(x, 10.0), ad::NonFiniteError);
}

TEST(Autodiff, NonStrictPropagatesNan) {
  Tensor x = Tensor::vector({std::numeric_limits<double>::quiet_NaN(), 1}, true);
  auto y = ad::sum(ad::square(x));
  EXPECT_TRUE(std::isnan(y.item()));
}

TEST(Autodiff, MutableDataRejectsInteriorNodes) {
  Tensor x = Tensor::vector({1, 2}, true);
  auto y = ad::square(x);
  EXPECT_THROW(y.mutable_data(), std::logic_error);
}

TEST(Autodiff, LinearMatchesMatmulPlusBias) {
  enot::Rng rng(3);
  auto x = enot::testing::random_tensor({4, 3}, rng);
  auto w = enot::testing::random_tensor({2, 3}, rng);
  auto b = enot::testing::random_tensor({2}, rng);
  auto fused = ad::linear(x, w, b);
  auto ref = ad::add(ad::matmul(x, ad::transpose(w)), b);
  for (std::size_t i = 0; i < fused.numel(); ++i) EXPECT_NEAR(fused[i], ref[i], 1e-14);
}

TEST(Autodiff, FloatTensorsWork) {
  ad::TensorF x = ad::TensorF::vector({1.f, -2.f}, true);
  ad::sum(ad::square(x)).backward();
  EXPECT_FLOAT_EQ(x.grad()[1], -4.f);
}

TEST(Autodiff, SliceAndConcatRoundTrip) {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  auto parts = ad::concat<double>({ad::slice(x, 1, 0, 1), ad::slice(x, 1, 1, 3)});
  EXPECT_EQ(std::vector<double>(parts.data().begin(), parts.data().end()),
            std::vector<double>(x.data().begin(), x.data().end()));
}

TEST(Autodiff, BuffersAreMaximallyAligned) {
  for (std::size_t n : {1, 3, 7, 100, 1001}) {
    auto t = Tensor::zeros({n});
    auto addr = reinterpret_cast<std::uintptr_t>(t.data().data());
    EXPECT_EQ(addr % EIGEN_MAX_ALIGN_BYTES, 0u) << n;
  }
}

TEST(Autodiff, SingleOutputLinearIsRepeatable) {
  enot::Rng rng(12);
  auto x = enot::testing::random_tensor({37, 100}, rng);
  auto w = enot::testing::random_tensor({1, 100}, rng);
  auto b = enot::testing::random_tensor({1}, rng);
  auto first = ad::linear(x, w, b);
  for (int k = 0; k < 20; ++k) {
    std::vector<Tensor> pad;  // shifts the heap between calls
    for (int j = 0; j <= k; ++j) pad.push_back(Tensor::zeros({static_cast<std::size_t>(j + 1)}));
    auto again = ad::linear(x, w, b);
    for (std::size_t i = 0; i < first.numel(); ++i) ASSERT_EQ(first[i], again[i]);
  }
}
