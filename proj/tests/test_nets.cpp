#include "enot/nets.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>

using namespace enot;
using ad::Tensor;

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMat as_matrix(const Tensor& t) {
  return Eigen::Map<const RowMat>(t.data().data(), static_cast<Eigen::Index>(t.dim(0)),
                                  static_cast<Eigen::Index>(t.numel() / t.dim(0)));
}

// Layer-by-layer replay with plain Eigen arithmetic.
RowMat replay(const Mlp<double>& mlp, RowMat h) {
  const auto& ls = mlp.layers();
  for (std::size_t l = 0; l < ls.size(); ++l) {
    RowMat w = as_matrix(ls[l].weight);
    Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(ls[l].bias.data().data(), ls[l].out());
    h = (h * w.transpose()).rowwise() + b.transpose();
    if (l + 1 < ls.size()) h = mlp.activation() == Activation::relu ? RowMat(h.cwiseMax(0.0)) : RowMat(h.unaryExpr([](double v) { return v > 0 ? v : 0.01 * v; }));
  }
  return h;
}

Tensor random_batch(std::size_t b, std::size_t d, Rng& rng, double scale = 1.0) {
  std::vector<double> v(b * d);
  for (auto& x : v) x = scale * rng.normal();
  return Tensor({b, d}, std::move(v));
}
}  // namespace

TEST(DriftModel, ZeroInitializedLastLayerGivesZeroDrift) {
  Rng rng(1);
  auto f = DriftModel::make(3, {16, 16}, rng);
  auto out = f(random_batch(5, 3, rng), 0.3);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(DriftModel, ResidualIdentityGivesZeroDrift) {
  // g(x, t) = x via a single linear layer [I | 0].
  std::vector<double> w{1, 0, 0, 0, 1, 0};
  Mlp<double> mlp({LinearLayer<double>{Tensor({2, 3}, w, true), Tensor::zeros({2}, true)}});
  DriftModel f(mlp, DriftParam::residual);
  Rng rng(2);
  auto out = f(random_batch(4, 2, rng), 0.5, 0.1);
  for (double v : out.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(DriftModel, MatchesManualReplay) {
  Rng rng(3);
  Mlp<double> mlp({3, 8, 8, 2}, Activation::relu, rng);
  DriftModel f(mlp);
  auto x = random_batch(6, 2, rng);
  auto out = f(x, 0.7);
  RowMat in(6, 3);
  in << as_matrix(x), Eigen::VectorXd::Constant(6, 0.7);
  RowMat ref = replay(mlp, in);
  EXPECT_LT((as_matrix(out) - ref).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(DriftModel, RejectsBadTimeAndShape) {
  Rng rng(4);
  auto f = DriftModel::make(2, {4}, rng);
  EXPECT_THROW(f(random_batch(2, 2, rng), 1.5), std::invalid_argument);
  EXPECT_THROW(f(random_batch(2, 3, rng), 0.5), ad::ShapeError);
}

TEST(PotentialModel, LinearExample) {
  Mlp<double> mlp({LinearLayer<double>{Tensor({1, 2}, {1, 1}, true), Tensor::zeros({1}, true)}});
  PotentialModel beta(mlp);
  auto out = beta(Tensor({1, 2}, {2, 3}));
  EXPECT_DOUBLE_EQ(out[0], 5.0);
}

TEST(PotentialModel, ZeroWeightsGiveZero) {
  Mlp<double> mlp({LinearLayer<double>{Tensor::zeros({4, 2}, true), Tensor::zeros({4}, true)},
                   LinearLayer<double>{Tensor::zeros({1, 4}, true), Tensor::zeros({1}, true)}});
  PotentialModel beta(mlp);
  Rng rng(5);
  auto out = beta(random_batch(3, 2, rng));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(PotentialModel, MatchesManualReplay) {
  Rng rng(6);
  for (auto act : {Activation::relu, Activation::leaky_relu}) {
    auto beta = PotentialModel::make(3, {10, 7}, rng, act);
    auto y = random_batch(5, 3, rng);
    RowMat ref = replay(beta.mlp(), as_matrix(y));
    auto out = beta(y);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(out[i], ref(static_cast<Eigen::Index>(i), 0), 1e-13);
  }
}

TEST(Nets, ParameterGradientsMatchFiniteDifferences) {
  Rng rng(7);
  Mlp<double> mlp({3, 6, 6, 2}, Activation::leaky_relu, rng);
  DriftModel f(mlp);
  auto beta = PotentialModel::make(2, {5}, rng);
  auto x = random_batch(4, 2, rng);
  auto loss = [&] { return ad::add(ad::sum(ad::square(f(x, 0.4))), ad::mean(beta(x))); };
  auto params = f.parameters();
  auto bp = beta.parameters();
  params.insert(params.end(), bp.begin(), bp.end());
  auto r = ad::grad_check_leaves<double>(loss, params, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Nets, LargeInputsStayFinite) {
  Rng rng(8);
  auto beta = PotentialModel::make(4, {64, 64}, rng);
  auto out = beta(random_batch(8, 4, rng, 1e3));
  for (double v : out.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::vector<Tensor> p{Tensor::vector({1.0, -2.0}, true)};
  Adam<double> opt(p, {0.1});
  opt.step(p, {{0.0, 0.0}});
  EXPECT_EQ(p[0][0], 1.0);
  EXPECT_EQ(p[0][1], -2.0);
}

TEST(Adam, FirstStepOnHalfSquare) {
  std::vector<Tensor> p{Tensor::scalar(1.0, true)};
  Adam<double> opt(p, {0.1});
  ad::scale(ad::square(p[0]), 0.5).backward();
  opt.step(p);
  // m_hat / sqrt(v_hat) = 1, so p_1 = 1 - 0.1 / (1 + 1e-8).
  EXPECT_NEAR(p[0].item(), 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, ShapeMismatchThrows) {
  std::vector<Tensor> p{Tensor::zeros({2}, true)};
  Adam<double> opt(p, {});
  std::vector<Tensor> q{Tensor::zeros({3}, true)};
  EXPECT_THROW(opt.step(q, {{0, 0, 0}}), ad::ShapeError);
}

TEST(Adam, DeterministicAcrossRuns) {
  auto run = [] {
    Rng rng(9);
    auto beta = PotentialModel::make(2, {8}, rng);
    auto params = beta.parameters();
    Adam<double> opt(params, {1e-2});
    auto y = random_batch(16, 2, rng);
    for (int i = 0; i < 100; ++i) {
      beta.zero_grad();
      ad::mean(ad::square(beta(y))).backward();
      opt.step(params);
    }
    std::vector<double> out;
    for (auto& p : params) out.insert(out.end(), p.data().begin(), p.data().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(10);
  Mlp<double> mlp({3, 5, 2}, Activation::relu, rng);
  DriftModel f(mlp, DriftParam::residual);
  auto beta = PotentialModel::make(2, {5, 5}, rng);
  auto text = checkpoint_to_json(f, beta, {{"note", "x"}}).dump();
  auto [f2, b2] = checkpoint_from_json<double>(nlohmann::json::parse(text));
  EXPECT_EQ(f2.mode(), DriftParam::residual);
  auto a = f.parameters(), b = f2.parameters();
  for (std::size_t k = 0; k < a.size(); ++k)
    EXPECT_TRUE(std::equal(a[k].data().begin(), a[k].data().end(), b[k].data().begin()));
  EXPECT_EQ(checkpoint_to_json(f2, b2, {{"note", "x"}}).dump(), text);
}

TEST(Checkpoint, RejectsForeignJson) {
  EXPECT_THROW(checkpoint_from_json<double>(nlohmann::json{{"format", "other"}}), std::runtime_error);
}

TEST(Mlp, CloneIsIndependent) {
  Rng rng(11);
  Mlp<double> a({2, 3, 1}, Activation::relu, rng);
  auto b = a.clone();
  b.layers()[0].weight.node()->value[0] += 1.0;
  EXPECT_NE(a.layers()[0].weight[0], b.layers()[0].weight[0]);
}
