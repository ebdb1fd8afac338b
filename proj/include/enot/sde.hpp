#pragma once

// Euler-Maruyama simulation of dX_t = f(X_t,t) dt + sqrt(eps) dW_t with the
// whole trajectory kept on the autodiff graph, plus the drift-energy
// estimators used by the training objective.

#include "enot/autodiff.hpp"
#include "enot/nets.hpp"
#include "enot/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace enot {

template <class T>
using VectorField = std::function<ad::BasicTensor<T>(const ad::BasicTensor<T>& x, double t)>;

template <class T>
struct BasicSdeConfig {
  double epsilon = 1.0;
  std::size_t n_steps = 10;
  bool last_step_noise = true;
  // Drift v of a non-Wiener prior Q_v; only the energy term uses it.
  VectorField<T> prior_drift{};

  double dt() const { return 1.0 / static_cast<double>(n_steps); }

  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("SdeConfig: epsilon must be >= 0");
    if (n_steps == 0) throw std::invalid_argument("SdeConfig: n_steps must be >= 1");
  }
};

using SdeConfig = BasicSdeConfig<double>;

template <class T>
struct BasicTrajectoryBatch {
  std::vector<ad::BasicTensor<T>> states;  // N+1 tensors [B,D], X_n at t = n/N
  std::vector<ad::BasicTensor<T>> drifts;  // N tensors [B,D], f(X_n, t_n)
  std::uint64_t noise_key = 0;
  std::uint64_t noise_draws = 0;  // Gaussian variates consumed

  std::size_t n_steps() const { return drifts.size(); }
  std::size_t batch() const { return states.front().dim(0); }
  std::size_t dim() const { return states.front().dim(1); }
  double time(std::size_t n) const { return static_cast<double>(n) / static_cast<double>(n_steps()); }
  const ad::BasicTensor<T>& final_state() const { return states.back(); }

  // States stacked to [N+1, B, D] (values only).
  ad::BasicTensor<T> stacked_states() const { return stack(states); }
  ad::BasicTensor<T> stacked_drifts() const { return stack(drifts); }

 private:
  static ad::BasicTensor<T> stack(const std::vector<ad::BasicTensor<T>>& xs) {
    std::vector<T> v;
    for (const auto& x : xs) v.insert(v.end(), x.data().begin(), x.data().end());
    return ad::BasicTensor<T>({xs.size(), xs.front().dim(0), xs.front().dim(1)}, std::move(v));
  }
};

using TrajectoryBatch = BasicTrajectoryBatch<double>;

class NonFiniteStateError : public std::runtime_error {
 public:
  NonFiniteStateError(std::size_t step, const std::string& what)
      : std::runtime_error("euler_maruyama: non-finite state at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

inline double traj_time(std::size_t n, std::size_t N) { return static_cast<double>(n) / static_cast<double>(N); }

// Noise for (step, sample, coordinate) is CounterNormal(key) at a counter built
// from the global sample id, so a sample's path does not depend on which batch
// it was simulated in. `sample_offset` is the global id of row 0.
inline std::uint64_t noise_counter(std::size_t step, std::uint64_t sample_id, std::size_t dim, std::size_t d) {
  return (static_cast<std::uint64_t>(step) << 40) + sample_id * dim + d;
}

template <class T, class Drift>
BasicTrajectoryBatch<T> euler_maruyama_keyed(const ad::BasicTensor<T>& x0, const Drift& drift,
                                             const BasicSdeConfig<T>& cfg, std::uint64_t noise_key,
                                             std::uint64_t sample_offset = 0) {
  cfg.validate();
  if (x0.rank() != 2) throw ad::ShapeError("euler_maruyama: x0 must be [B,D], got " + ad::shape_str(x0.shape()));
  const std::size_t B = x0.dim(0), D = x0.dim(1), N = cfg.n_steps;
  const double dt = cfg.dt();
  const T noise_scale = static_cast<T>(std::sqrt(cfg.epsilon * dt));
  CounterNormal normal(noise_key);

  BasicTrajectoryBatch<T> traj;
  traj.noise_key = noise_key;
  traj.states.reserve(N + 1);
  traj.drifts.reserve(N);
  traj.states.push_back(x0);
  for (std::size_t n = 0; n < N; ++n) {
    const auto& x = traj.states.back();
    auto f = drift(x, traj_time(n, N), dt);
    if (f.shape() != x.shape()) {
      throw ad::ShapeError("euler_maruyama: drift returned " + ad::shape_str(f.shape()) + " for state " +
                           ad::shape_str(x.shape()));
    }
    auto next = ad::add(x, ad::scale(f, static_cast<T>(dt)));
    bool noisy = cfg.epsilon > 0.0 && (cfg.last_step_noise || n + 1 < N);
    if (noisy) {
      std::vector<T> w(B * D);
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t d = 0; d < D; ++d)
          w[i * D + d] = noise_scale * static_cast<T>(normal(noise_counter(n, sample_offset + i, D, d)));
      traj.noise_draws += B * D;
      next = ad::add(next, ad::BasicTensor<T>({B, D}, std::move(w)));
    }
    if (ad::strict_finite()) {
      for (std::size_t i = 0; i < next.numel(); ++i) {
        if (!std::isfinite(next[i])) throw NonFiniteStateError(n + 1, "batch row " + std::to_string(i / D));
      }
    }
    traj.drifts.push_back(std::move(f));
    traj.states.push_back(std::move(next));
  }
  return traj;
}

// Draws one key from `rng`, so every call simulates with fresh noise.
template <class T>
BasicTrajectoryBatch<T> euler_maruyama(const ad::BasicTensor<T>& x0, const BasicDriftModel<T>& model,
                                       const BasicSdeConfig<T>& cfg, Rng& rng, std::uint64_t sample_offset = 0) {
  if (x0.rank() == 2 && x0.dim(1) != model.dim()) {
    throw ad::ShapeError("euler_maruyama: x0 has dim " + std::to_string(x0.dim(1)) + ", model has " +
                         std::to_string(model.dim()));
  }
  std::uint64_t key = rng.next_u64();
  return euler_maruyama_keyed(
      x0, [&model](const ad::BasicTensor<T>& x, double t, double dt) { return model(x, t, dt); }, cfg, key,
      sample_offset);
}

// (1/N) sum_n mean_m ||f_{n,m}||^2, without the 1/(2 eps) factor.
template <class T>
ad::BasicTensor<T> energy_estimate(const BasicTrajectoryBatch<T>& traj) {
  if (traj.drifts.empty() || traj.drifts.front().dim(0) == 0) throw std::invalid_argument("energy_estimate: empty batch");
  ad::BasicTensor<T> acc = ad::mean(ad::row_sq_norm(traj.drifts[0]));
  for (std::size_t n = 1; n < traj.drifts.size(); ++n) acc = ad::add(acc, ad::mean(ad::row_sq_norm(traj.drifts[n])));
  return ad::scale(acc, static_cast<T>(1.0 / static_cast<double>(traj.drifts.size())));
}

// Same average over ||f - v||^2 with v evaluated at the recorded (X_n, t_n).
template <class T>
ad::BasicTensor<T> relative_energy_estimate(const BasicTrajectoryBatch<T>& traj, const VectorField<T>& prior) {
  if (!prior) return energy_estimate(traj);
  if (traj.drifts.empty() || traj.drifts.front().dim(0) == 0) {
    throw std::invalid_argument("relative_energy_estimate: empty batch");
  }
  ad::BasicTensor<T> acc;
  for (std::size_t n = 0; n < traj.drifts.size(); ++n) {
    auto v = prior(traj.states[n], traj.time(n));
    auto term = ad::mean(ad::row_sq_norm(ad::sub(traj.drifts[n], v)));
    acc = n == 0 ? term : ad::add(acc, term);
  }
  return ad::scale(acc, static_cast<T>(1.0 / static_cast<double>(traj.drifts.size())));
}

// CSV rows `sample_id,step,t,x_0,...,x_{D-1}`, sample-major.
template <class T>
void write_trajectory_csv(std::ostream& os, const BasicTrajectoryBatch<T>& traj, std::uint64_t sample_offset = 0,
                          bool header = true) {
  const std::size_t B = traj.batch(), D = traj.dim(), N = traj.n_steps();
  if (header) {
    os << "sample_id,step,t";
    for (std::size_t d = 0; d < D; ++d) os << ",x_" << d;
    os << '\n';
  }
  auto old = os.precision(17);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t n = 0; n <= N; ++n) {
      os << sample_offset + i << ',' << n << ',' << traj.time(n);
      for (std::size_t d = 0; d < D; ++d) os << ',' << traj.states[n][i * D + d];
      os << '\n';
    }
  }
  os.precision(old);
}

inline nlohmann::json trajectory_metadata(double epsilon, std::size_t n_steps, std::uint64_t seed,
                                          std::uint64_t checkpoint_hash, bool last_step_noise = true) {
  return {{"epsilon", epsilon},
          {"n_steps", n_steps},
          {"seed", seed},
          {"last_step_noise", last_step_noise},
          {"checkpoint_hash", checkpoint_hash}};
}

}  // namespace enot
