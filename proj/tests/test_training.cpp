#include "enot/datagen.hpp"
#include "enot/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

using namespace enot;
using ad::Tensor;

namespace {
PotentialModel linear_potential(std::vector<double> w, double b = 0.0) {
  std::size_t d = w.size();
  return PotentialModel(Mlp<double>({LinearLayer<double>{Tensor({1, d}, std::move(w), true), Tensor({1}, {b}, true)}}));
}

Sampler gaussian_sampler(std::size_t d) {
  return [d](std::size_t n, Rng& rng) { return sample_gaussian(Vector::Zero(d), Matrix::Identity(d, d), n, rng); };
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.epsilon = 1.0;
  c.n_steps = 4;
  c.inner_steps = 2;
  c.lr_f = 1e-3;
  c.lr_beta = 1e-3;
  c.batch_size = 16;
  c.total_outer_iters = 5;
  c.eval_every = 2;
  c.drift_hidden = {8};
  c.potential_hidden = {8};
  return c;
}

auto constant_field(std::vector<double> c) {
  return [c](const Tensor& x, double, double) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = c[i % c.size()];
    return Tensor(x.shape(), std::move(v));
  };
}
}  // namespace

TEST(LossBeta, Examples) {
  auto constant = linear_potential({0.0}, 3.0);
  EXPECT_EQ(loss_beta(Tensor({2, 1}, {1, 3}), Tensor({2, 1}, {7, 9}), constant).item(), 0.0);
  auto identity = linear_potential({1.0});
  EXPECT_DOUBLE_EQ(loss_beta(Tensor({2, 1}, {1, 3}), Tensor({2, 1}, {0, 0}), identity).item(), 2.0);
  EXPECT_DOUBLE_EQ(loss_beta(Tensor({3, 1}, {1, 2, 5}), Tensor({3, 1}, {5, 1, 2}), identity).item(), 0.0);
  EXPECT_THROW(loss_beta(Tensor::zeros({0, 1}), Tensor({1, 1}, {0}), identity), std::invalid_argument);
}

TEST(LossF, Examples) {
  SdeConfig cfg{.epsilon = 0.0, .n_steps = 3};
  auto zero = linear_potential({0.0, 0.0});
  auto t0 = euler_maruyama_keyed(Tensor::zeros({4, 2}), constant_field({0.0}), cfg, 0);
  EXPECT_EQ(loss_f(t0, zero).item(), 0.0);
  auto t1 = euler_maruyama_keyed(Tensor::zeros({4, 2}), constant_field({3.0, 4.0}), cfg, 0);
  EXPECT_DOUBLE_EQ(loss_f(t1, zero).item(), 25.0);
}

TEST(LossF, ZeroDriftLinearPotentialMatchesTrajectory) {
  SdeConfig cfg{.epsilon = 1.0, .n_steps = 5};
  Rng rng(1);
  auto x0 = to_tensor<double>(sample_gaussian(Vector::Zero(2), Matrix::Identity(2, 2), 32, rng));
  auto traj = euler_maruyama_keyed(x0, constant_field({0.0}), cfg, 17);
  auto sum = linear_potential({1.0, 1.0});
  RowMatrix xn = to_matrix(traj.final_state());
  double direct = -xn.rowwise().sum().mean();
  EXPECT_NEAR(loss_f(traj, sum).item(), direct, 1e-13);
}

TEST(LossGradients, MatchFiniteDifferences) {
  Rng rng(2);
  Mlp<double> mlp({3, 8, 2}, Activation::leaky_relu, rng);
  DriftModel drift(mlp);
  auto beta = PotentialModel::make(2, {8}, rng, Activation::leaky_relu);
  auto x0 = to_tensor<double>(sample_gaussian(Vector::Zero(2), Matrix::Identity(2, 2), 8, rng));
  auto y = to_tensor<double>(sample_gaussian(Vector::Ones(2), Matrix::Identity(2, 2), 8, rng));
  SdeConfig cfg{.epsilon = 1.0, .n_steps = 4};
  auto sim = [&] {
    return euler_maruyama_keyed(x0, [&](const Tensor& x, double t, double dt) { return drift(x, t, dt); }, cfg, 9);
  };
  auto rf = ad::grad_check_leaves<double>([&] { return loss_f(sim(), beta); }, drift.parameters(), 1e-6);
  EXPECT_LT(rf.max_rel_error, 1e-4);
  auto xn = sim().final_state().detach();
  auto rb = ad::grad_check_leaves<double>([&] { return loss_beta(xn, y, beta); }, beta.parameters(), 1e-6);
  EXPECT_LT(rb.max_rel_error, 1e-5);
}

TEST(TrainConfig, Validation) {
  auto c = tiny_config();
  c.inner_steps = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(train_enot(gaussian_sampler(2), gaussian_sampler(2), 2, c), std::invalid_argument);
  c = tiny_config();
  c.epsilon = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.epsilon = 0.0;
  EXPECT_NO_THROW(c.validate());
}

TEST(TrainConfig, JsonRoundTripAndUnknownKeys) {
  auto c = tiny_config();
  c.parametrization = DriftParam::residual;
  auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  auto j = to_json(c);
  j["learning_rate"] = 1.0;
  EXPECT_THROW(train_config_from_json(j), std::invalid_argument);
}

TEST(Train, SameSeedGivesIdenticalHistory) {
  auto run = [] {
    auto res = train_enot(gaussian_sampler(2), gaussian_sampler(2), 2, tiny_config());
    std::ostringstream os;
    res.history.write_jsonl(os);
    return os.str() + checkpoint_to_json(res.drift, res.potential).dump();
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, FreshSimulationForEveryStep) {
  auto c = tiny_config();
  auto res = train_enot(gaussian_sampler(2), gaussian_sampler(2), 2, c);
  ASSERT_EQ(res.history.size(), c.total_outer_iters);
  const auto& last = res.history.back();
  EXPECT_EQ(last.simulations, c.total_outer_iters * (1 + c.inner_steps));
  EXPECT_EQ(last.noise_draws, last.simulations * c.batch_size * 2 * c.n_steps);
}

TEST(Train, EvalCallbackCadence) {
  auto c = tiny_config();
  std::vector<std::size_t> seen;
  TrainCallbacks<double> cb;
  cb.on_eval = [&](std::size_t it, const DriftModel&, const PotentialModel&) {
    seen.push_back(it);
    return nlohmann::json{{"it", it}};
  };
  auto res = train_enot(gaussian_sampler(2), gaussian_sampler(2), 2, c, cb);
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 3, 4}));
  EXPECT_TRUE(res.history.records()[1].metrics.has_value());
  EXPECT_FALSE(res.history.records()[0].metrics.has_value());
}

TEST(Train, DivergenceStopsWithHistory) {
  int calls = 0;
  Sampler poisoned = [&](std::size_t n, Rng& rng) {
    RowMatrix m = sample_gaussian(Vector::Zero(2), Matrix::Identity(2, 2), n, rng);
    if (++calls > 4) m(0, 0) = std::numeric_limits<double>::quiet_NaN();
    return m;
  };
  auto res = train_enot(poisoned, gaussian_sampler(2), 2, tiny_config());
  EXPECT_TRUE(res.diverged);
  EXPECT_FALSE(res.error.empty());
  EXPECT_EQ(res.history.size(), 2u);
}

TEST(Train, WrongSamplerShapeRejected) {
  Sampler bad = [](std::size_t n, Rng& rng) {
    return sample_gaussian(Vector::Zero(3), Matrix::Identity(3, 3), n, rng);
  };
  EXPECT_THROW(train_enot(bad, gaussian_sampler(2), 2, tiny_config()), std::invalid_argument);
}

TEST(Train, IdentityTaskAtZeroEpsilonKeepsEnergySmall) {
  auto c = tiny_config();
  c.epsilon = 0.0;
  c.batch_size = 128;
  c.total_outer_iters = 150;
  c.inner_steps = 5;
  c.drift_hidden = {32};
  c.potential_hidden = {32};
  auto res = train_enot(gaussian_sampler(2), gaussian_sampler(2), 2, c);
  ASSERT_FALSE(res.diverged);
  EXPECT_LE(res.history.back().energy, 1e-2);
}

TEST(FunctionalEval, ZeroNetsGiveZero) {
  Rng rng(3);
  auto drift = DriftModel::make(2, {4}, rng);
  auto beta = linear_potential({0.0, 0.0});
  RowMatrix x = sample_gaussian(Vector::Zero(2), Matrix::Identity(2, 2), 64, rng);
  for (double c : {0.5, 1.0, 7.0}) EXPECT_EQ(functional_eval(beta, drift, SdeConfig{.epsilon = 1.0, .n_steps = 4}, c, x, x, 5), 0.0);
  EXPECT_THROW(functional_eval(beta, drift, SdeConfig{.epsilon = 1.0, .n_steps = 4}, 0.0, x, x, 5), std::invalid_argument);
  EXPECT_THROW(functional_eval(beta, drift, SdeConfig{.epsilon = 1.0, .n_steps = 4}, 1.0, RowMatrix(0, 2), x, 5), std::invalid_argument);
}

TEST(FunctionalEval, ScalingIdentity) {
  Rng rng(4);
  Mlp<double> mlp({3, 16, 2}, Activation::relu, rng);
  DriftModel drift(mlp);
  auto beta = PotentialModel::make(2, {16}, rng);
  RowMatrix x = sample_gaussian(Vector::Zero(2), Matrix::Identity(2, 2), 256, rng);
  RowMatrix y = sample_gaussian(Vector::Ones(2), Matrix::Identity(2, 2), 256, rng);
  SdeConfig sde{1.0, 5};
  double base = functional_eval(beta, drift, sde, 1.0, x, y, 11);
  for (double c : {0.5, 2.0, 10.0}) {
    double scaled = functional_eval(scaled_potential(beta, c), drift, sde, c, x, y, 11);
    EXPECT_NEAR(scaled / c, base, 1e-10 * std::abs(base));
  }
}

TEST(FunctionalEval, LinearPotentialZeroDriftExpectation) {
  Rng rng(5);
  auto drift = DriftModel::make(2, {4}, rng);
  auto beta = linear_potential({0.7, -1.3}, 2.0);
  const std::size_t n = 20000;
  RowMatrix x = sample_gaussian(Vector::Zero(2), Matrix::Identity(2, 2), n, rng);
  RowMatrix y = sample_gaussian(Vector::Zero(2), Matrix::Identity(2, 2), n, rng);
  double v = functional_eval(beta, drift, SdeConfig{.epsilon = 1.0, .n_steps = 4}, 1.0, x, y, 3);
  double w2 = 0.7 * 0.7 + 1.3 * 1.3;
  double se = std::sqrt(w2 * (1.0 + 2.0) / n);
  EXPECT_LT(std::abs(v), 3.0 * se);
}
