#pragma once

// Experiment configuration and evaluation shared by the command-line tool and
// the acceptance runner.

#include "enot/datagen.hpp"
#include "enot/gaussian.hpp"
#include "enot/metrics.hpp"
#include "enot/nets.hpp"
#include "enot/sde.hpp"
#include "enot/training.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace enot {

inline constexpr const char* kVersion = "0.1.0";

// Thrown for configuration problems; the CLI maps it to the usage exit code.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class TaskKind { toy, gauss_bench, custom };

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::toy: return "toy";
    case TaskKind::gauss_bench: return "gauss-bench";
    case TaskKind::custom: return "custom";
  }
  return "?";
}

struct EvalSettings {
  std::size_t n_samples = 100000;
  std::vector<double> t_grid{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::size_t toy_samples = 2000;  // energy distance is O(n^2)
  std::size_t export_trajectories = 0;
  std::size_t during_training_samples = 10000;
  std::uint64_t seed = 7;
  std::size_t chunk = 8192;
};

struct ExperimentConfig {
  TaskKind task = TaskKind::toy;
  ToyDistribution source{ToyKind::gaussian};
  ToyDistribution target{ToyKind::eight_gaussians};
  std::size_t bench_dim = 2;
  std::uint64_t bench_seed = 0;
  std::string instance_path;
  TrainConfig train;
  EvalSettings eval;
  std::string output_dir;
};

inline nlohmann::json to_json(const EvalSettings& e) {
  return {{"n_samples", e.n_samples},
          {"t_grid", e.t_grid},
          {"toy_samples", e.toy_samples},
          {"export_trajectories", e.export_trajectories},
          {"during_training_samples", e.during_training_samples},
          {"seed", e.seed},
          {"chunk", e.chunk}};
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j{{"task", to_string(c.task)}, {"train", to_json(c.train)}, {"eval", to_json(c.eval)}};
  if (c.task == TaskKind::toy) {
    j["source"] = to_json(c.source);
    j["target"] = to_json(c.target);
  } else if (c.task == TaskKind::gauss_bench) {
    j["benchmark"] = {{"D", c.bench_dim}, {"seed", c.bench_seed}};
  } else {
    j["instance"] = c.instance_path;
  }
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
  return j;
}

inline void check_t_grid(const std::vector<double>& grid, std::size_t n_steps) {
  for (double t : grid) {
    double k = t * static_cast<double>(n_steps);
    if (!(t >= 0.0 && t <= 1.0) || std::abs(k - std::round(k)) > 1e-9) {
      throw ConfigError("t_grid value " + std::to_string(t) + " is not a multiple of 1/n_steps (n_steps=" +
                        std::to_string(n_steps) + ")");
    }
  }
}

inline EvalSettings eval_settings_from_json(const nlohmann::json& j) {
  EvalSettings e;
  e.n_samples = j.value("n_samples", e.n_samples);
  e.t_grid = j.value("t_grid", e.t_grid);
  e.toy_samples = j.value("toy_samples", e.toy_samples);
  e.export_trajectories = j.value("export_trajectories", e.export_trajectories);
  e.during_training_samples = j.value("during_training_samples", e.during_training_samples);
  e.seed = j.value("seed", e.seed);
  e.chunk = j.value("chunk", e.chunk);
  if (e.n_samples < 2 || e.toy_samples < 2 || e.during_training_samples < 2 || e.chunk == 0) {
    throw ConfigError("eval: sample counts must be >= 2");
  }
  return e;
}

// Top-level keys: task, source/target (toy), benchmark {D, seed} (gauss-bench),
// instance (custom), train, eval, output_dir, seed (overrides train.seed).
inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  try {
    ExperimentConfig c;
    std::string task = j.at("task").get<std::string>();
    if (task == "toy") {
      c.task = TaskKind::toy;
      if (j.contains("source")) c.source = toy_from_json(j.at("source"));
      if (j.contains("target")) c.target = toy_from_json(j.at("target"));
      if (c.source.dim != c.target.dim) throw ConfigError("source and target dimensions differ");
    } else if (task == "gauss-bench") {
      c.task = TaskKind::gauss_bench;
      const auto& b = j.at("benchmark");
      c.bench_dim = b.at("D").get<std::size_t>();
      c.bench_seed = b.value("seed", std::uint64_t{0});
      if (c.bench_dim == 0) throw ConfigError("benchmark.D must be >= 1");
    } else if (task == "custom") {
      c.task = TaskKind::custom;
      c.instance_path = j.at("instance").get<std::string>();
    } else {
      throw ConfigError("unknown task '" + task + "' (expected toy, gauss-bench or custom)");
    }
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("seed")) c.train.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("eval")) c.eval = eval_settings_from_json(j.at("eval"));
    c.output_dir = j.value("output_dir", std::string{});
    c.train.validate();
    if (c.task != TaskKind::toy) check_t_grid(c.eval.t_grid, c.train.n_steps);
    return c;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

inline GaussianBenchmark load_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open instance file '" + path + "'");
  try {
    return benchmark_from_json(nlohmann::json::parse(in));
  } catch (const std::exception& e) {
    throw ConfigError("instance file '" + path + "': " + e.what());
  }
}

struct Problem {
  std::size_t dim = 0;
  Sampler p0, p1;
  std::optional<GaussianBenchmark> gaussian;
};

inline Problem make_problem(const ExperimentConfig& c) {
  Problem p;
  if (c.task == TaskKind::toy) {
    p.dim = c.source.dim;
    auto src = c.source, tgt = c.target;
    p.p0 = [src](std::size_t n, Rng& rng) { return sample(src, n, rng); };
    p.p1 = [tgt](std::size_t n, Rng& rng) { return sample(tgt, n, rng); };
    return p;
  }
  GaussianBenchmark b = c.task == TaskKind::gauss_bench
                            ? make_gaussian_benchmark(c.bench_dim, c.bench_seed, c.train.epsilon)
                            : load_instance(c.instance_path);
  p.dim = b.dim;
  p.gaussian = b;
  auto g0 = b.p0, g1 = b.p1;
  p.p0 = [g0](std::size_t n, Rng& rng) { return sample_gaussian(g0, n, rng); };
  p.p1 = [g1](std::size_t n, Rng& rng) { return sample_gaussian(g1, n, rng); };
  return p;
}

// ---------------------------------------------------------------------------
// Evaluation

// States X_n at the requested steps for x0 pushed through the learned SDE.
// Simulated in chunks; counter-based noise makes the result independent of
// the chunk size.
template <class T>
std::vector<RowMatrix> simulate_states(const BasicDriftModel<T>& drift, const BasicSdeConfig<T>& sde, const RowMatrix& x0,
                                       std::uint64_t noise_key, const std::vector<std::size_t>& steps,
                                       std::size_t chunk = 8192, TrajectoryBatch* keep_first = nullptr,
                                       std::size_t keep_rows = 0) {
  ad::NoGradGuard ng;
  std::vector<RowMatrix> out(steps.size(), RowMatrix(x0.rows(), x0.cols()));
  for (Eigen::Index begin = 0; begin < x0.rows(); begin += static_cast<Eigen::Index>(chunk)) {
    Eigen::Index rows = std::min<Eigen::Index>(static_cast<Eigen::Index>(chunk), x0.rows() - begin);
    RowMatrix part = x0.middleRows(begin, rows);
    auto traj = euler_maruyama_keyed(
        to_tensor<T>(part), [&drift](const ad::BasicTensor<T>& x, double t, double dt) { return drift(x, t, dt); },
        sde, noise_key, static_cast<std::uint64_t>(begin));
    for (std::size_t k = 0; k < steps.size(); ++k) out[k].middleRows(begin, rows) = to_matrix(traj.states.at(steps[k]));
    if (keep_first && begin == 0) {
      std::size_t r = std::min<std::size_t>(keep_rows, static_cast<std::size_t>(rows));
      TrajectoryBatch head;
      head.noise_key = noise_key;
      for (const auto& s : traj.states) head.states.push_back(ad::slice(s, 0, 0, r));
      for (const auto& f : traj.drifts) head.drifts.push_back(ad::slice(f, 0, 0, r));
      *keep_first = std::move(head);
    }
  }
  return out;
}

struct MarginalMetric {
  double t = 0.0;
  double uvp = 0.0;
};

struct GaussianReport {
  double target_uvp = 0.0;
  double plan_uvp = 0.0;
  std::vector<MarginalMetric> marginals;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
};

inline std::size_t step_of(double t, std::size_t n_steps) {
  return static_cast<std::size_t>(std::llround(t * static_cast<double>(n_steps)));
}

// Target-marginal and plan BW2-UVP against the closed-form plan, and the
// marginal at each t against the exact Gaussian law of the bridge marginal.
template <class T>
GaussianReport evaluate_gaussian(const BasicDriftModel<T>& drift, const GaussianBenchmark& bench,
                                 const BasicSdeConfig<T>& sde, const EvalSettings& s,
                                 TrajectoryBatch* trajectories = nullptr) {
  if (drift.dim() != bench.dim) {
    throw std::invalid_argument("evaluate: checkpoint has dim " + std::to_string(drift.dim()) + ", instance has " +
                                std::to_string(bench.dim));
  }
  check_t_grid(s.t_grid, sde.n_steps);
  GaussianEotPlan plan = solve_gaussian_eot(bench.p0, bench.p1, sde.epsilon);
  Rng rng(s.seed);
  RowMatrix x0 = sample_gaussian(bench.p0, s.n_samples, rng);
  std::vector<std::size_t> steps{sde.n_steps};
  for (double t : s.t_grid) steps.push_back(step_of(t, sde.n_steps));
  auto states = simulate_states(drift, sde, x0, rng.next_u64(), steps, s.chunk, trajectories, s.export_trajectories);

  GaussianReport r;
  r.n_samples = s.n_samples;
  r.seed = s.seed;
  r.target_uvp = bw2_uvp(states[0], bench.p1);
  r.plan_uvp = plan_bw2_uvp(x0, states[0], plan);
  for (std::size_t k = 0; k < s.t_grid.size(); ++k) {
    r.marginals.push_back({s.t_grid[k], bw2_uvp(states[k + 1], bridge_marginal(plan, s.t_grid[k]))});
  }
  return r;
}

// Same metrics with the learned model replaced by exact plan / bridge samples.
inline GaussianReport evaluate_oracle_self(const GaussianBenchmark& bench, double epsilon, const EvalSettings& s) {
  GaussianEotPlan plan = solve_gaussian_eot(bench.p0, bench.p1, epsilon);
  Rng rng(s.seed);
  auto [x, y] = sample_plan(plan, s.n_samples, rng);
  GaussianReport r;
  r.n_samples = s.n_samples;
  r.seed = s.seed;
  r.target_uvp = bw2_uvp(y, bench.p1);
  r.plan_uvp = plan_bw2_uvp(x, y, plan);
  for (double t : s.t_grid) {
    r.marginals.push_back({t, bw2_uvp(bridge_marginal_sample(plan, t, s.n_samples, rng), bridge_marginal(plan, t))});
  }
  return r;
}

inline nlohmann::json to_json(const GaussianReport& r, std::uint64_t config_hash) {
  nlohmann::json records = nlohmann::json::array();
  records.push_back(metric_record("bw2_uvp_target", r.target_uvp, r.n_samples, r.seed, config_hash));
  records.push_back(metric_record("bw2_uvp_plan", r.plan_uvp, r.n_samples, r.seed, config_hash));
  for (const auto& m : r.marginals) {
    auto rec = metric_record("bw2_uvp_marginal", m.uvp, r.n_samples, r.seed, config_hash);
    rec["t"] = m.t;
    records.push_back(rec);
  }
  return records;
}

struct ToyReport {
  double energy_distance = 0.0;
  double identity_baseline = 0.0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  RowMatrix generated;

  double improvement() const { return energy_distance > 0.0 ? identity_baseline / energy_distance : std::numeric_limits<double>::infinity(); }
};

// Energy distance of generated samples to fresh target samples, and of the
// source samples themselves (identity map) to the same target set.
template <class T>
ToyReport evaluate_toy(const BasicDriftModel<T>& drift, const Sampler& p0, const Sampler& p1,
                       const BasicSdeConfig<T>& sde, const EvalSettings& s, TrajectoryBatch* trajectories = nullptr) {
  Rng rng(s.seed);
  RowMatrix x0 = p0(s.toy_samples, rng);
  RowMatrix y = p1(s.toy_samples, rng);
  auto states = simulate_states(drift, sde, x0, rng.next_u64(), {sde.n_steps}, s.chunk, trajectories,
                                s.export_trajectories);
  ToyReport r;
  r.n_samples = s.toy_samples;
  r.seed = s.seed;
  r.generated = states[0];
  r.energy_distance = energy_distance(states[0], y);
  r.identity_baseline = energy_distance(x0, y);
  return r;
}

inline nlohmann::json to_json(const ToyReport& r, std::uint64_t config_hash) {
  nlohmann::json records = nlohmann::json::array();
  records.push_back(metric_record("energy_distance", r.energy_distance, r.n_samples, r.seed, config_hash));
  records.push_back(metric_record("energy_distance_identity", r.identity_baseline, r.n_samples, r.seed, config_hash));
  return records;
}

inline void write_metrics_csv(std::ostream& os, const nlohmann::json& records) {
  os << "metric,t,value,n_samples,seed,config_hash\n";
  auto old = os.precision(17);
  for (const auto& r : records) {
    os << r.at("metric").get<std::string>() << ',';
    if (r.contains("t")) os << r.at("t").get<double>();
    os << ',' << r.at("value").get<double>() << ',' << r.at("n_samples").get<std::size_t>() << ','
       << r.at("seed").get<std::uint64_t>() << ',' << r.at("config_hash").get<std::uint64_t>() << '\n';
  }
  os.precision(old);
}

inline nlohmann::json version_info() {
  return {{"enot", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__}};
}

}  // namespace enot
