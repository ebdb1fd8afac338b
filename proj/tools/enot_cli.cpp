// enot: train, evaluate and validate entropic neural OT models.
//
// Exit codes: 0 success, 1 runtime failure (including divergence and failed
// oracle checks), 2 usage or configuration error.

#include "enot/experiment.hpp"
#include "enot/oracle_check.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace enot;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

constexpr const char* kOutputRootEnv = "ENOT_OUTPUT_ROOT";

fs::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? fs::path(env) : fs::path("runs");
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << s;
}

void write_json(const fs::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

nlohmann::json read_json_file(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

struct Overrides {
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iters;
  std::optional<double> epsilon;
  std::optional<std::size_t> eval_samples;
};

// Precedence: command-line flags > config file > built-in defaults.
void apply_overrides(const Overrides& o, nlohmann::json& j) {
  if (!o.out.empty()) j["output_dir"] = o.out;
  if (o.seed) j["seed"] = *o.seed;
  if (o.iters) j["train"]["total_outer_iters"] = *o.iters;
  if (o.epsilon) j["train"]["epsilon"] = *o.epsilon;
  if (o.eval_samples) j["eval"]["n_samples"] = *o.eval_samples;
}

void add_common_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--out", o.out, std::string("Output directory (default: $") + kOutputRootEnv + "/<name>)");
  cmd->add_option("--seed", o.seed, "Training seed");
  cmd->add_option("--iters", o.iters, "Outer iterations");
  cmd->add_option("--epsilon", o.epsilon, "Entropic regularization");
  cmd->add_option("--eval-samples", o.eval_samples, "Samples for the final Gaussian evaluation");
}

void export_trajectories(const fs::path& dir, const TrajectoryBatch& traj, double eps, std::size_t n_steps,
                         std::uint64_t seed, std::uint64_t ckpt_hash, bool last_step_noise) {
  std::ofstream csv(dir / "trajectories.csv");
  write_trajectory_csv(csv, traj);
  write_json(dir / "trajectories_meta.json", trajectory_metadata(eps, n_steps, seed, ckpt_hash, last_step_noise));
}

void print_gaussian(const GaussianReport& r) {
  std::cout << "bw2_uvp_target  " << r.target_uvp << " %\n";
  std::cout << "bw2_uvp_plan    " << r.plan_uvp << " %\n";
  for (const auto& m : r.marginals) std::cout << "bw2_uvp t=" << m.t << "  " << m.uvp << " %\n";
}

// Runs a full experiment: config echo, training with periodic checkpoints,
// history, final evaluation.
int run_experiment(nlohmann::json raw, const std::string& default_name) {
  ExperimentConfig cfg = experiment_from_json(raw);
  fs::path dir = cfg.output_dir.empty() ? output_root() / default_name : fs::path(cfg.output_dir);
  fs::create_directories(dir);
  Problem prob = make_problem(cfg);

  nlohmann::json resolved = to_json(cfg);
  const std::uint64_t config_hash = fnv1a(resolved.dump());
  write_json(dir / "config.json", raw);
  write_json(dir / "resolved_config.json",
             {{"config", resolved}, {"config_hash", config_hash}, {"versions", version_info()}});
  if (prob.gaussian) write_json(dir / "instance.json", to_json(*prob.gaussian));

  SdeConfig sde;
  sde.epsilon = cfg.train.epsilon;
  sde.n_steps = cfg.train.n_steps;
  sde.last_step_noise = cfg.train.last_step_noise;
  EvalSettings quick = cfg.eval;
  quick.n_samples = quick.during_training_samples;
  quick.toy_samples = std::min(quick.toy_samples, quick.during_training_samples);
  quick.export_trajectories = 0;

  TrainCallbacks<double> cb;
  cb.on_eval = [&](std::size_t iter, const DriftModel& f, const PotentialModel& b) {
    write_json(dir / ("ckpt_" + std::to_string(iter + 1) + ".json"), checkpoint_to_json(f, b, resolved));
    nlohmann::json m;
    if (prob.gaussian) {
      auto r = evaluate_gaussian(f, *prob.gaussian, sde, quick);
      m = {{"bw2_uvp_target", r.target_uvp}, {"bw2_uvp_plan", r.plan_uvp}};
    } else {
      auto r = evaluate_toy(f, prob.p0, prob.p1, sde, quick);
      m = {{"energy_distance", r.energy_distance}, {"energy_distance_identity", r.identity_baseline}};
    }
    std::cout << "iter " << iter + 1 << " " << m.dump() << std::endl;
    return m;
  };

  auto result = train_enot(prob.p0, prob.p1, prob.dim, cfg.train, cb);
  {
    std::ofstream h(dir / "history.jsonl");
    result.history.write_jsonl(h);
    std::ofstream t(dir / "timing.csv");
    result.history.write_timing_csv(t);
  }
  std::string ckpt_text = checkpoint_to_json(result.drift, result.potential, resolved).dump();
  write_text(dir / "ckpt_final.json", ckpt_text);
  if (result.diverged) {
    std::cerr << "error: training diverged: " << result.error << " (artifacts kept in " << dir.string() << ")\n";
    return kRuntime;
  }

  TrajectoryBatch traj;
  TrajectoryBatch* want = cfg.eval.export_trajectories > 0 ? &traj : nullptr;
  nlohmann::json records;
  if (prob.gaussian) {
    auto r = evaluate_gaussian(result.drift, *prob.gaussian, sde, cfg.eval, want);
    records = to_json(r, config_hash);
    print_gaussian(r);
  } else {
    auto r = evaluate_toy(result.drift, prob.p0, prob.p1, sde, cfg.eval, want);
    records = to_json(r, config_hash);
    std::ofstream s(dir / "generated.csv");
    write_samples_csv(s, r.generated);
    std::cout << "energy_distance " << r.energy_distance << " (identity baseline " << r.identity_baseline << ")\n";
  }
  write_json(dir / "metrics.json", records);
  std::ofstream csv(dir / "metrics.csv");
  write_metrics_csv(csv, records);
  if (want) {
    export_trajectories(dir, traj, sde.epsilon, sde.n_steps, cfg.eval.seed, fnv1a(ckpt_text), sde.last_step_noise);
  }
  std::cout << "outputs in " << dir.string() << "\n";
  return kOk;
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropic neural optimal transport via SDE drift and adversarial potential"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Overrides train_o;
  std::string train_config;
  auto* train = app.add_subcommand("train", "Train from a JSON experiment config");
  train->add_option("--config", train_config, "Experiment config (JSON)")->required();
  add_common_flags(train, train_o);

  Overrides bench_o;
  std::size_t bench_dim = 2;
  std::uint64_t bench_seed = 0;
  std::string bench_config;
  auto* bench = app.add_subcommand("gauss-bench", "Generate a Gaussian instance, train and evaluate");
  bench->add_option("--dim,-D", bench_dim, "Dimension")->check(CLI::PositiveNumber);
  bench->add_option("--instance-seed", bench_seed, "Seed of the generated instance");
  bench->add_option("--config", bench_config, "Optional config supplying train/eval sections");
  add_common_flags(bench, bench_o);

  Overrides toy_o;
  std::string toy_source = "gaussian", toy_target = "eight_gaussians", toy_config;
  auto* toy = app.add_subcommand("toy", "Train on a 2-D toy pair");
  toy->add_option("--source", toy_source, "gaussian | swiss_roll | eight_gaussians");
  toy->add_option("--target", toy_target, "gaussian | swiss_roll | eight_gaussians");
  toy->add_option("--config", toy_config, "Optional config supplying train/eval sections");
  add_common_flags(toy, toy_o);

  std::string ev_ckpt, ev_instance, ev_out, ev_tgrid;
  std::size_t ev_samples = 100000, ev_export = 0;
  std::uint64_t ev_seed = 7;
  std::optional<double> ev_eps;
  std::optional<std::size_t> ev_steps;
  bool ev_oracle = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a Gaussian instance");
  eval->add_option("--checkpoint", ev_ckpt, "Checkpoint JSON");
  eval->add_option("--instance", ev_instance, "Gaussian instance JSON")->required();
  eval->add_option("--t-grid", ev_tgrid, "Comma-separated times, multiples of 1/n_steps");
  eval->add_option("--n-samples", ev_samples, "Evaluation samples")->check(CLI::Range(2ul, 100000000ul));
  eval->add_option("--seed", ev_seed, "Evaluation seed");
  eval->add_option("--epsilon", ev_eps, "Override epsilon (default: from checkpoint)");
  eval->add_option("--n-steps", ev_steps, "Override SDE steps (default: from checkpoint)");
  eval->add_option("--export-trajectories", ev_export, "Write this many sample paths to trajectories.csv");
  eval->add_option("--out", ev_out, "Output directory");
  eval->add_flag("--oracle", ev_oracle, "Evaluate exact plan samples instead of a checkpoint (self-test)");

  bool oc_quick = false;
  double oc_scale = 1.0;
  std::string oc_out;
  auto* oracle = app.add_subcommand("oracle-check", "Closed form vs Sinkhorn and bridge moment checks");
  oracle->add_flag("--quick", oc_quick, "1-D cases only");
  oracle->add_option("--inject-eps-scale", oc_scale, "Scale epsilon inside the closed form (failure-path test)");
  oracle->add_option("--out", oc_out, "Write a JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) {
      auto raw = read_json_file(train_config);
      apply_overrides(train_o, raw);
      return run_experiment(raw, stem_of(train_config));
    }
    if (*bench) {
      nlohmann::json raw = bench_config.empty() ? nlohmann::json::object() : read_json_file(bench_config);
      raw["task"] = "gauss-bench";
      raw["benchmark"] = {{"D", bench_dim}, {"seed", bench_seed}};
      apply_overrides(bench_o, raw);
      return run_experiment(raw, "gauss_D" + std::to_string(bench_dim) + "_s" + std::to_string(bench_seed));
    }
    if (*toy) {
      nlohmann::json raw = toy_config.empty() ? nlohmann::json::object() : read_json_file(toy_config);
      raw["task"] = "toy";
      raw["source"] = {{"kind", toy_source}};
      raw["target"] = {{"kind", toy_target}};
      apply_overrides(toy_o, raw);
      std::ostringstream name;
      name << "toy_" << toy_source << "_to_" << toy_target;
      return run_experiment(raw, name.str());
    }
    if (*eval) {
      GaussianBenchmark inst = load_instance(ev_instance);
      EvalSettings s;
      s.n_samples = ev_samples;
      s.seed = ev_seed;
      s.export_trajectories = ev_export;
      if (!ev_tgrid.empty()) {
        s.t_grid.clear();
        std::stringstream ss(ev_tgrid);
        for (std::string tok; std::getline(ss, tok, ',');) s.t_grid.push_back(std::stod(tok));
      }
      GaussianReport r;
      TrajectoryBatch traj;
      SdeConfig sde;
      std::uint64_t ckpt_hash = 0;
      if (ev_oracle) {
        r = evaluate_oracle_self(inst, ev_eps.value_or(inst.epsilon), s);
      } else {
        if (ev_ckpt.empty()) throw ConfigError("eval: --checkpoint is required unless --oracle is given");
        auto ck = read_json_file(ev_ckpt);
        ckpt_hash = fnv1a(ck.dump());
        auto [drift, potential] = checkpoint_from_json<double>(ck);
        const auto& tc = ck.contains("config") && ck["config"].contains("train") ? ck["config"]["train"]
                                                                                  : nlohmann::json::object();
        sde.epsilon = ev_eps.value_or(tc.value("epsilon", inst.epsilon));
        sde.n_steps = ev_steps.value_or(tc.value("n_steps", std::size_t{10}));
        sde.last_step_noise = tc.value("last_step_noise", true);
        check_t_grid(s.t_grid, sde.n_steps);
        if (drift.dim() != inst.dim) {
          throw ConfigError("eval: checkpoint has dim " + std::to_string(drift.dim()) + ", instance has " +
                            std::to_string(inst.dim));
        }
        r = evaluate_gaussian(drift, inst, sde, s, ev_export > 0 ? &traj : nullptr);
      }
      print_gaussian(r);
      if (!ev_out.empty()) {
        fs::create_directories(ev_out);
        auto records = to_json(r, 0);
        write_json(fs::path(ev_out) / "metrics.json", records);
        std::ofstream csv(fs::path(ev_out) / "metrics.csv");
        write_metrics_csv(csv, records);
        if (ev_export > 0 && !ev_oracle) {
          export_trajectories(ev_out, traj, sde.epsilon, sde.n_steps, ev_seed, ckpt_hash, sde.last_step_noise);
        }
      }
      return kOk;
    }
    if (*oracle) {
      OracleCheckOptions opt;
      opt.quick = oc_quick;
      opt.closed_form_eps_scale = oc_scale;
      bool ok = true;
      nlohmann::json report = nlohmann::json::array();
      for (const auto& c : run_oracle_checks(opt)) {
        ok = ok && c.pass();
        std::cout << (c.pass() ? "PASS " : "FAIL ") << c.name << "  rel_error=" << c.rel_error
                  << "  closed_form=" << c.closed_form(0, 0) << "  sinkhorn=" << c.sinkhorn(0, 0)
                  << "  iterations=" << c.iterations << "\n";
        report.push_back(to_json(c));
      }
      Rng rng(3);
      GaussianDist p0(Vector::Zero(2), random_covariance(2, rng));
      GaussianDist p1(Vector::Constant(2, 1.0), random_covariance(2, rng));
      for (const auto& b : run_bridge_moment_checks(solve_gaussian_eot(p0, p1, 1.0), 100000, 4)) {
        ok = ok && b.pass();
        std::cout << (b.pass() ? "PASS " : "FAIL ") << "bridge moments t=" << b.t << "  max|z| mean=" << b.mean_z
                  << " cov=" << b.cov_z << "\n";
        report.push_back({{"case", "bridge moments"}, {"t", b.t}, {"mean_z", b.mean_z}, {"cov_z", b.cov_z},
                          {"pass", b.pass()}});
      }
      if (!oc_out.empty()) {
        fs::create_directories(oc_out);
        write_json(fs::path(oc_out) / "oracle_check.json", report);
      }
      std::cout << (ok ? "oracle-check: PASS\n" : "oracle-check: FAIL\n");
      return ok ? kOk : kRuntime;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
