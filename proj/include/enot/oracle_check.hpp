#pragma once

// Cross-validation of the Gaussian closed form against Sinkhorn on product
// grids, plus moment checks of the exact bridge marginal.

#include "enot/gaussian.hpp"
#include "enot/linalg.hpp"
#include "enot/rng.hpp"
#include "enot/sinkhorn.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace enot {

struct OracleCase {
  std::string name;
  std::size_t dim = 1;
  double epsilon = 1.0;
  Matrix closed_form;
  Matrix sinkhorn;
  double rel_error = 0.0;
  double tolerance = 0.01;
  std::size_t iterations = 0;
  bool converged = false;

  bool pass() const { return converged && rel_error < tolerance; }
};

struct OracleCheckOptions {
  bool quick = false;  // 1-D cases only
  // Multiplies epsilon inside the closed form only; 1 is correct, anything
  // else exercises the failure path.
  double closed_form_eps_scale = 1.0;
  Eigen::Index points_1d = 2001;
  Eigen::Index points_2d = 121;
  double tolerance = 0.01;
  double sinkhorn_tol = 1e-9;
};

inline OracleCase run_grid_case(const std::string& name, const GaussianDist& p0, const GaussianDist& p1, double eps,
                                Eigen::Index points, const OracleCheckOptions& opt) {
  GridEotProblem prob;
  prob.epsilon = eps;
  prob.source_axes = gaussian_grid_axes(p0.mean, p0.cov, points);
  prob.target_axes = gaussian_grid_axes(p1.mean, p1.cov, points);
  prob.a = gaussian_grid_weights(prob.source_points(), p0.mean, p0.cov);
  prob.b = gaussian_grid_weights(prob.target_points(), p1.mean, p1.cov);
  GridCoupling cpl = sinkhorn_grid(prob, opt.sinkhorn_tol, 200000);

  OracleCase c;
  c.name = name;
  c.dim = static_cast<std::size_t>(p0.dim());
  c.epsilon = eps;
  c.closed_form = solve_gaussian_eot(p0, p1, eps * opt.closed_form_eps_scale).cross;
  c.sinkhorn = cpl.cross_cov;
  c.rel_error = (c.sinkhorn - c.closed_form).norm() / std::max(c.sinkhorn.norm(), 1e-300);
  c.tolerance = opt.tolerance;
  c.iterations = cpl.iterations;
  c.converged = cpl.converged;
  return c;
}

// D = 1 with unit variances and D = 2 with a fixed random pair, each at
// epsilon in {0.1, 1}; the 1-D cases also run at epsilon = 2.
inline std::vector<OracleCase> run_oracle_checks(const OracleCheckOptions& opt = {}) {
  std::vector<OracleCase> out;
  GaussianDist u = GaussianDist::standard(1);
  for (double eps : {0.1, 1.0, 2.0}) {
    out.push_back(run_grid_case("D=1 unit variances eps=" + std::to_string(eps), u, u, eps, opt.points_1d, opt));
  }
  if (opt.quick) return out;
  Rng rng(20240601);
  GaussianDist p0(Vector::Zero(2), random_covariance(2, rng));
  GaussianDist p1(Vector::Zero(2), random_covariance(2, rng));
  for (double eps : {0.1, 1.0}) {
    out.push_back(run_grid_case("D=2 random pair eps=" + std::to_string(eps), p0, p1, eps, opt.points_2d, opt));
  }
  return out;
}

inline nlohmann::json to_json(const OracleCase& c) {
  return {{"case", c.name},
          {"D", c.dim},
          {"epsilon", c.epsilon},
          {"closed_form", matrix_to_json(c.closed_form)},
          {"sinkhorn", matrix_to_json(c.sinkhorn)},
          {"rel_error", c.rel_error},
          {"tolerance", c.tolerance},
          {"iterations", c.iterations},
          {"converged", c.converged},
          {"pass", c.pass()}};
}

struct BridgeMomentCase {
  double t = 0.0;
  double mean_z = 0.0;  // largest |standardized error| over mean entries
  double cov_z = 0.0;   // same for covariance entries
  bool pass() const { return mean_z < 4.0 && cov_z < 4.0; }
};

// Empirical moments of bridge_marginal_sample against bridge_marginal.
// Errors are standardized by the Monte-Carlo standard error of each entry.
inline std::vector<BridgeMomentCase> run_bridge_moment_checks(const GaussianEotPlan& plan, std::size_t n,
                                                              std::uint64_t seed) {
  std::vector<BridgeMomentCase> out;
  Rng rng(seed);
  for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    GaussianDist exact = bridge_marginal(plan, t);
    RowMatrix s = bridge_marginal_sample(plan, t, n, rng);
    Vector mean = s.colwise().mean().transpose();
    RowMatrix c = s.rowwise() - mean.transpose();
    Matrix cov = c.transpose() * c / static_cast<double>(n - 1);
    const double nn = static_cast<double>(n);
    BridgeMomentCase r{t};
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
      double se = std::sqrt(exact.cov(i, i) / nn);
      if (se > 0.0) r.mean_z = std::max(r.mean_z, std::abs(mean(i) - exact.mean(i)) / se);
      for (Eigen::Index j = 0; j < mean.size(); ++j) {
        double var = (exact.cov(i, i) * exact.cov(j, j) + exact.cov(i, j) * exact.cov(i, j)) / nn;
        double se2 = std::sqrt(var);
        if (se2 > 0.0) r.cov_z = std::max(r.cov_z, std::abs(cov(i, j) - exact.cov(i, j)) / se2);
      }
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace enot
