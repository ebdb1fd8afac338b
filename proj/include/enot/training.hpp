#pragma once

// ENOT saddle-point training: one potential update followed by K_f drift
// updates per outer iteration, each on freshly sampled batches and a fresh
// simulation.

#include "enot/autodiff.hpp"
#include "enot/linalg.hpp"
#include "enot/nets.hpp"
#include "enot/rng.hpp"
#include "enot/sde.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace enot {

struct TrainConfig {
  double epsilon = 1.0;
  std::size_t n_steps = 10;
  std::size_t inner_steps = 10;
  double lr_f = 1e-4;
  double lr_beta = 1e-4;
  // Both learning rates decay linearly to lr * lr_final_factor over the run.
  double lr_final_factor = 1.0;
  std::size_t batch_size = 512;
  std::size_t total_outer_iters = 20000;
  std::uint64_t seed = 0;
  bool strict_finite = true;
  std::size_t eval_every = 500;
  std::vector<std::size_t> drift_hidden{100, 100};
  std::vector<std::size_t> potential_hidden{100, 100};
  Activation activation = Activation::relu;
  DriftParam parametrization = DriftParam::drift;
  bool last_step_noise = true;
  double grad_clip = 0.0;  // 0 = off

  void validate() const {
    auto bad = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) bad("epsilon must be >= 0");
    if (n_steps == 0) bad("n_steps must be >= 1");
    if (inner_steps == 0) bad("inner_steps (K_f) must be >= 1");
    if (!(lr_f > 0.0) || !(lr_beta > 0.0)) bad("learning rates must be > 0");
    if (!(lr_final_factor > 0.0 && lr_final_factor <= 1.0)) bad("lr_final_factor must be in (0, 1]");
    if (batch_size == 0) bad("batch_size must be >= 1");
    if (total_outer_iters == 0) bad("total_outer_iters must be >= 1");
    if (eval_every == 0) bad("eval_every must be >= 1");
    if (!(grad_clip >= 0.0)) bad("grad_clip must be >= 0");
    for (auto h : drift_hidden)
      if (h == 0) bad("zero hidden width");
    for (auto h : potential_hidden)
      if (h == 0) bad("zero hidden width");
  }

  double lr_scale(std::size_t iter) const {
    if (total_outer_iters <= 1) return 1.0;
    double frac = static_cast<double>(iter) / static_cast<double>(total_outer_iters - 1);
    return 1.0 + (lr_final_factor - 1.0) * frac;
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epsilon", c.epsilon},
          {"n_steps", c.n_steps},
          {"inner_steps", c.inner_steps},
          {"lr_f", c.lr_f},
          {"lr_beta", c.lr_beta},
          {"lr_final_factor", c.lr_final_factor},
          {"batch_size", c.batch_size},
          {"total_outer_iters", c.total_outer_iters},
          {"seed", c.seed},
          {"strict_finite", c.strict_finite},
          {"eval_every", c.eval_every},
          {"drift_hidden", c.drift_hidden},
          {"potential_hidden", c.potential_hidden},
          {"activation", to_string(c.activation)},
          {"parametrization", to_string(c.parametrization)},
          {"last_step_noise", c.last_step_noise},
          {"grad_clip", c.grad_clip}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known{
      "epsilon",   "n_steps",          "inner_steps", "lr_f",         "lr_beta",          "lr_final_factor",
      "batch_size", "total_outer_iters", "seed",       "strict_finite", "eval_every",      "drift_hidden",
      "potential_hidden", "activation", "parametrization", "last_step_noise", "grad_clip"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw std::invalid_argument("TrainConfig: unknown key '" + k + "'");
    }
  }
  TrainConfig c;
  c.epsilon = j.value("epsilon", c.epsilon);
  c.n_steps = j.value("n_steps", c.n_steps);
  c.inner_steps = j.value("inner_steps", c.inner_steps);
  c.lr_f = j.value("lr_f", c.lr_f);
  c.lr_beta = j.value("lr_beta", c.lr_beta);
  c.lr_final_factor = j.value("lr_final_factor", c.lr_final_factor);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.total_outer_iters = j.value("total_outer_iters", c.total_outer_iters);
  c.seed = j.value("seed", c.seed);
  c.strict_finite = j.value("strict_finite", c.strict_finite);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.drift_hidden = j.value("drift_hidden", c.drift_hidden);
  c.potential_hidden = j.value("potential_hidden", c.potential_hidden);
  if (j.contains("activation")) c.activation = activation_from_string(j.at("activation"));
  if (j.contains("parametrization")) c.parametrization = drift_param_from_string(j.at("parametrization"));
  c.last_step_noise = j.value("last_step_noise", c.last_step_noise);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.validate();
  return c;
}

struct TrainRecord {
  std::size_t iter = 0;
  double loss_beta = 0.0;
  double loss_f = 0.0;  // last inner step
  double energy = 0.0;  // last inner step
  std::size_t simulations = 0;  // cumulative
  std::uint64_t noise_draws = 0;  // cumulative
  std::optional<nlohmann::json> metrics;
  double wall_seconds = 0.0;
};

// Append-only. The JSON-lines form leaves out wall-clock time so that two runs
// with the same seed serialize byte-identically; timing goes to a separate file.
class TrainHistory {
 public:
  void append(TrainRecord r) { records_.push_back(std::move(r)); }
  const std::vector<TrainRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const TrainRecord& back() const { return records_.back(); }

  static nlohmann::json to_json(const TrainRecord& r) {
    nlohmann::json j{{"iter", r.iter},
                     {"loss_beta", r.loss_beta},
                     {"loss_f", r.loss_f},
                     {"energy", r.energy},
                     {"simulations", r.simulations},
                     {"noise_draws", r.noise_draws}};
    if (r.metrics) j["metrics"] = *r.metrics;
    return j;
  }

  void write_jsonl(std::ostream& os) const {
    for (const auto& r : records_) os << to_json(r).dump() << '\n';
  }

  void write_timing_csv(std::ostream& os) const {
    os << "iter,wall_seconds\n";
    for (const auto& r : records_) os << r.iter << ',' << r.wall_seconds << '\n';
  }

 private:
  std::vector<TrainRecord> records_;
};

// mean beta(X_N) - mean beta(Y). The potential is trained by descent on this
// value: beta is pushed down on simulated endpoints and up on target samples.
template <class T>
ad::BasicTensor<T> loss_beta(const ad::BasicTensor<T>& xn, const ad::BasicTensor<T>& y,
                             const BasicPotentialModel<T>& potential) {
  if (xn.rank() != 2 || y.rank() != 2 || xn.dim(0) == 0 || y.dim(0) == 0) {
    throw std::invalid_argument("loss_beta: empty or malformed batch");
  }
  return ad::sub(ad::mean(potential(xn)), ad::mean(potential(y)));
}

// (relative) drift energy - mean beta(X_N).
template <class T>
ad::BasicTensor<T> loss_f(const BasicTrajectoryBatch<T>& traj, const BasicPotentialModel<T>& potential,
                          const VectorField<T>& prior = {}) {
  if (traj.drifts.empty() || traj.batch() == 0) throw std::invalid_argument("loss_f: empty batch");
  return ad::sub(relative_energy_estimate(traj, prior), ad::mean(potential(traj.final_state())));
}

using Sampler = std::function<RowMatrix(std::size_t n, Rng& rng)>;

template <class T>
struct BasicTrainResult {
  BasicDriftModel<T> drift;
  BasicPotentialModel<T> potential;
  TrainHistory history;
  bool diverged = false;
  std::string error;
};

using TrainResult = BasicTrainResult<double>;

template <class T>
struct TrainCallbacks {
  // Called after iterations where (iter + 1) % eval_every == 0 and after the
  // last one; a non-null return is stored in that iteration's record.
  std::function<nlohmann::json(std::size_t iter, const BasicDriftModel<T>&, const BasicPotentialModel<T>&)> on_eval;
  VectorField<T> prior_drift;
};

// Stream layout of the master seed: 1 = source batches, 2 = target batches,
// 3 = simulation noise keys, 10/11 = drift/potential initialization.
template <class T = double>
BasicTrainResult<T> train_enot(const Sampler& p0, const Sampler& p1, std::size_t dim, const TrainConfig& cfg,
                               const TrainCallbacks<T>& callbacks = {}) {
  cfg.validate();
  if (dim == 0) throw std::invalid_argument("train_enot: dim must be >= 1");
  Rng root(cfg.seed);
  Rng src_rng = root.fork(1), tgt_rng = root.fork(2), noise_rng = root.fork(3);
  Rng drift_init = root.fork(10), pot_init = root.fork(11);

  BasicTrainResult<T> res{BasicDriftModel<T>::make(dim, cfg.drift_hidden, drift_init, cfg.parametrization,
                                                   cfg.activation),
                          BasicPotentialModel<T>::make(dim, cfg.potential_hidden, pot_init, cfg.activation),
                          {}, false, {}};
  BasicSdeConfig<T> sde{cfg.epsilon, cfg.n_steps, cfg.last_step_noise, callbacks.prior_drift};

  auto f_params = res.drift.parameters();
  auto b_params = res.potential.parameters();
  Adam<T> opt_f(f_params, {cfg.lr_f});
  Adam<T> opt_b(b_params, {cfg.lr_beta});

  auto batch = [&](const Sampler& s, Rng& rng) {
    RowMatrix m = s(cfg.batch_size, rng);
    if (m.rows() != static_cast<Eigen::Index>(cfg.batch_size) || m.cols() != static_cast<Eigen::Index>(dim)) {
      throw std::invalid_argument("train_enot: sampler returned " + std::to_string(m.rows()) + "x" +
                                  std::to_string(m.cols()) + " batch");
    }
    return to_tensor<T>(m);
  };
  auto check = [](double v, const char* what) {
    if (!std::isfinite(v)) throw ad::NonFiniteError(std::string("train_enot: non-finite ") + what);
  };

  ad::StrictFiniteGuard strict(cfg.strict_finite);
  const auto start = std::chrono::steady_clock::now();
  std::size_t sims = 0;
  std::uint64_t draws = 0;

  for (std::size_t it = 0; it < cfg.total_outer_iters; ++it) {
    TrainRecord rec;
    rec.iter = it;
    try {
      double s = cfg.lr_scale(it);
      opt_f.set_lr(cfg.lr_f * s);
      opt_b.set_lr(cfg.lr_beta * s);

      auto x0 = batch(p0, src_rng);
      BasicTrajectoryBatch<T> traj;
      {
        ad::NoGradGuard ng;
        traj = euler_maruyama(x0, res.drift, sde, noise_rng);
      }
      ++sims;
      draws += traj.noise_draws;
      auto y = batch(p1, tgt_rng);
      res.potential.zero_grad();
      auto lb = loss_beta(traj.final_state(), y, res.potential);
      rec.loss_beta = static_cast<double>(lb.item());
      check(rec.loss_beta, "loss_beta");
      lb.backward();
      if (cfg.grad_clip > 0.0) clip_grad_norm(b_params, cfg.grad_clip);
      opt_b.step(b_params);

      for (std::size_t k = 0; k < cfg.inner_steps; ++k) {
        auto xf = batch(p0, src_rng);
        auto tr = euler_maruyama(xf, res.drift, sde, noise_rng);
        ++sims;
        draws += tr.noise_draws;
        res.drift.zero_grad();
        auto energy = relative_energy_estimate(tr, sde.prior_drift);
        auto lf = ad::sub(energy, ad::mean(res.potential(tr.final_state())));
        rec.loss_f = static_cast<double>(lf.item());
        rec.energy = static_cast<double>(energy.item());
        check(rec.loss_f, "loss_f");
        lf.backward();
        if (cfg.grad_clip > 0.0) clip_grad_norm(f_params, cfg.grad_clip);
        opt_f.step(f_params);
      }
    } catch (const ad::NonFiniteError& e) {
      res.diverged = true;
      res.error = e.what();
    } catch (const NonFiniteStateError& e) {
      res.diverged = true;
      res.error = e.what();
    }
    rec.simulations = sims;
    rec.noise_draws = draws;
    if (!res.diverged && callbacks.on_eval && ((it + 1) % cfg.eval_every == 0 || it + 1 == cfg.total_outer_iters)) {
      ad::StrictFiniteGuard relaxed(false);
      auto m = callbacks.on_eval(it, res.drift, res.potential);
      if (!m.is_null()) rec.metrics = std::move(m);
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    res.history.append(std::move(rec));
    if (res.diverged) break;
  }
  res.potential.zero_grad();
  res.drift.zero_grad();
  return res;
}

// C * energy + mean beta(Y) - mean beta(X_N), with the potential's output
// multiplied by `beta_scale`, X_N simulated from `x0` under noise key
// `noise_key`, and Y the given target samples.
template <class T>
double functional_eval(const BasicPotentialModel<T>& potential, const BasicDriftModel<T>& drift,
                       const BasicSdeConfig<T>& sde, double scale_c, const RowMatrix& x0, const RowMatrix& y,
                       std::uint64_t noise_key, double beta_scale = 1.0) {
  if (!(scale_c > 0.0)) throw std::invalid_argument("functional_eval: C must be > 0");
  if (x0.rows() == 0 || y.rows() == 0) throw std::invalid_argument("functional_eval: n_mc must be >= 1");
  ad::NoGradGuard ng;
  auto traj = euler_maruyama_keyed(
      to_tensor<T>(x0), [&drift](const ad::BasicTensor<T>& x, double t, double dt) { return drift(x, t, dt); }, sde,
      noise_key);
  double energy = static_cast<double>(relative_energy_estimate(traj, sde.prior_drift).item());
  double by = static_cast<double>(ad::mean(potential(to_tensor<T>(y))).item());
  double bx = static_cast<double>(ad::mean(potential(traj.final_state())).item());
  return scale_c * energy + beta_scale * by - beta_scale * bx;
}

// Copy of `p` whose output is multiplied by c (last layer weights and bias scaled).
template <class T>
BasicPotentialModel<T> scaled_potential(const BasicPotentialModel<T>& p, double c) {
  auto out = p.clone();
  const auto& last = out.mlp().layers().back();
  auto w = last.weight;
  auto b = last.bias;
  for (auto& v : w.mutable_data()) v = static_cast<T>(static_cast<double>(v) * c);
  for (auto& v : b.mutable_data()) v = static_cast<T>(static_cast<double>(v) * c);
  return out;
}

}  // namespace enot
