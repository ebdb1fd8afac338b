#pragma once

// Closed-form entropic OT between Gaussians for the cost ||x-y||^2/2 with
// regularizer -eps*H(pi), the Brownian-bridge marginals of the matching
// Schrodinger bridge, and the Bures-Wasserstein distance.

#include "enot/linalg.hpp"
#include "enot/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

namespace enot {

struct GaussianDist {
  Vector mean;
  Matrix cov;

  GaussianDist() = default;
  GaussianDist(Vector m, Matrix c) : mean(std::move(m)), cov(std::move(c)) { validate(); }

  static GaussianDist standard(Eigen::Index dim) { return {Vector::Zero(dim), Matrix::Identity(dim, dim)}; }

  Eigen::Index dim() const { return mean.size(); }

  // Symmetric to 1e-12 (relative to the largest entry); eigenvalues >= -1e-10
  // are accepted and the negative part is clamped away.
  void validate() {
    if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
      throw std::invalid_argument("GaussianDist: covariance is not " + std::to_string(mean.size()) + "x" +
                                  std::to_string(mean.size()));
    }
    double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw std::invalid_argument("GaussianDist: covariance is not symmetric");
    }
    cov = symmetrize(cov);
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    if (es.eigenvalues().minCoeff() < -1e-10 * scale) {
      throw std::invalid_argument("GaussianDist: covariance has a negative eigenvalue " +
                                  std::to_string(es.eigenvalues().minCoeff()));
    }
    if (es.eigenvalues().minCoeff() < 0.0) {
      Vector l = es.eigenvalues().cwiseMax(0.0);
      cov = es.eigenvectors() * l.asDiagonal() * es.eigenvectors().transpose();
    }
  }
};

struct GaussianEotPlan {
  Vector mu0, mu1;
  Matrix sigma0, sigma1;
  Matrix cross;  // Cov(X, Y)
  double epsilon = 0.0;

  Eigen::Index dim() const { return mu0.size(); }

  Vector joint_mean() const {
    Vector m(2 * dim());
    m << mu0, mu1;
    return m;
  }
  Matrix joint_cov() const {
    const auto d = dim();
    Matrix c(2 * d, 2 * d);
    c.topLeftCorner(d, d) = sigma0;
    c.topRightCorner(d, d) = cross;
    c.bottomLeftCorner(d, d) = cross.transpose();
    c.bottomRightCorner(d, d) = sigma1;
    return c;
  }
  GaussianDist joint() const { return {joint_mean(), joint_cov()}; }
  GaussianDist source() const { return {mu0, sigma0}; }
  GaussianDist target() const { return {mu1, sigma1}; }
};

// Cross-covariance of the entropic plan:
//   C = S0^{1/2} [ (S0^{1/2} S1 S0^{1/2} + (eps^2/4) I)^{1/2} - (eps/2) I ] S0^{-1/2}.
// Means only shift the plan. Cross-checked against log-domain Sinkhorn on grids.
inline GaussianEotPlan solve_gaussian_eot(const GaussianDist& p0, const GaussianDist& p1, double epsilon) {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("solve_gaussian_eot: epsilon must be >= 0");
  if (p0.dim() != p1.dim()) throw std::invalid_argument("solve_gaussian_eot: dimension mismatch");
  const auto d = p0.dim();
  if (min_eigenvalue(p0.cov) <= 1e-14 * std::max(1.0, p0.cov.cwiseAbs().maxCoeff())) {
    throw std::domain_error("solve_gaussian_eot: source covariance is singular");
  }
  Matrix s0h = sqrtm_psd(p0.cov);
  Matrix s0ih = inv_sqrtm_pd(p0.cov);
  Matrix id = Matrix::Identity(d, d);
  Matrix inner = sqrtm_psd(s0h * p1.cov * s0h + 0.25 * epsilon * epsilon * id) - 0.5 * epsilon * id;
  GaussianEotPlan plan{p0.mean, p1.mean, p0.cov, p1.cov, s0h * inner * s0ih, epsilon};
  Matrix joint = plan.joint_cov();
  double scale = std::max(1.0, joint.cwiseAbs().maxCoeff());
  if (min_eigenvalue(joint) < -1e-8 * scale) {
    throw std::runtime_error("solve_gaussian_eot: assembled plan covariance is not PSD");
  }
  return plan;
}

// n i.i.d. rows from N(mean, cov).
inline RowMatrix sample_gaussian(const Vector& mean, const Matrix& cov, std::size_t n, Rng& rng) {
  const auto d = mean.size();
  Matrix l = cholesky_with_jitter(cov);
  RowMatrix z(static_cast<Eigen::Index>(n), d);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  RowMatrix out = z * l.transpose();
  out.rowwise() += mean.transpose();
  return out;
}

inline RowMatrix sample_gaussian(const GaussianDist& g, std::size_t n, Rng& rng) {
  return sample_gaussian(g.mean, g.cov, n, rng);
}

// Pairs (X, Y) ~ plan, via a factor of the 2D x 2D block covariance.
inline std::pair<RowMatrix, RowMatrix> sample_plan(const GaussianEotPlan& plan, std::size_t n, Rng& rng) {
  RowMatrix xy = sample_gaussian(plan.joint_mean(), plan.joint_cov(), n, rng);
  const auto d = plan.dim();
  return {xy.leftCols(d), xy.rightCols(d)};
}

// X_t = x + t(y - x) + sqrt(eps t (1-t)) Z with (x, y) ~ plan.
inline RowMatrix bridge_marginal_sample(const GaussianEotPlan& plan, double t, std::size_t n, Rng& rng) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("bridge_marginal_sample: t outside [0,1]");
  auto [x, y] = sample_plan(plan, n, rng);
  RowMatrix xt = (1.0 - t) * x + t * y;
  double s = std::sqrt(plan.epsilon * t * (1.0 - t));
  if (s > 0.0) {
    for (Eigen::Index i = 0; i < xt.size(); ++i) xt.data()[i] += s * rng.normal();
  }
  return xt;
}

// Exact law of the bridge marginal at time t.
inline GaussianDist bridge_marginal(const GaussianEotPlan& plan, double t) {
  const auto d = plan.dim();
  Vector m = (1.0 - t) * plan.mu0 + t * plan.mu1;
  Matrix c = (1.0 - t) * (1.0 - t) * plan.sigma0 + t * t * plan.sigma1 +
             t * (1.0 - t) * (plan.cross + plan.cross.transpose()) +
             plan.epsilon * t * (1.0 - t) * Matrix::Identity(d, d);
  return {m, symmetrize(c)};
}

class NumericalHealthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline double bw2_one_way(const GaussianDist& a, const GaussianDist& b) {
  Matrix ah = sqrtm_psd(a.cov);
  Matrix cross = sqrtm_psd(ah * b.cov * ah);
  return (a.mean - b.mean).squaredNorm() + (a.cov + b.cov - 2.0 * cross).trace();
}
}  // namespace detail

// Squared 2-Wasserstein distance between Gaussians.
inline double bw2_distance(const GaussianDist& a, const GaussianDist& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("bw2_distance: dimension mismatch");
  double ab = detail::bw2_one_way(a, b);
  double ba = detail::bw2_one_way(b, a);
  double scale = std::max({1.0, a.cov.trace(), b.cov.trace()});
  if (std::abs(ab - ba) > 1e-8 * scale) {
    throw NumericalHealthError("bw2_distance: asymmetric result " + std::to_string(ab) + " vs " + std::to_string(ba));
  }
  return std::max(0.0, 0.5 * (ab + ba));
}

// Sigma = Q diag(lambda) Q^T, Q Haar-orthogonal, log(lambda_i) ~ U[-log 2, log 2].
inline Matrix random_orthogonal(Eigen::Index d, Rng& rng) {
  Matrix g(d, d);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

inline Matrix random_covariance(Eigen::Index d, Rng& rng) {
  if (d < 1) throw std::invalid_argument("random_covariance: D must be >= 1");
  Matrix q = random_orthogonal(d, rng);
  Vector lambda(d);
  for (Eigen::Index i = 0; i < d; ++i) lambda(i) = std::exp(rng.uniform(-std::numbers::ln2, std::numbers::ln2));
  return symmetrize(q * lambda.asDiagonal() * q.transpose());
}

// Benchmark instance file: {"D", "seed", "epsilon", "sigma0", "sigma1"} with
// row-major covariance arrays; optional "mu0"/"mu1" default to zero.
struct GaussianBenchmark {
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  double epsilon = 1.0;
  GaussianDist p0, p1;
};

inline nlohmann::json to_json(const GaussianBenchmark& b) {
  return {{"D", b.dim},
          {"seed", b.seed},
          {"epsilon", b.epsilon},
          {"mu0", std::vector<double>(b.p0.mean.data(), b.p0.mean.data() + b.p0.mean.size())},
          {"mu1", std::vector<double>(b.p1.mean.data(), b.p1.mean.data() + b.p1.mean.size())},
          {"sigma0", matrix_to_json(b.p0.cov)},
          {"sigma1", matrix_to_json(b.p1.cov)}};
}

inline GaussianBenchmark benchmark_from_json(const nlohmann::json& j) {
  GaussianBenchmark b;
  b.dim = j.at("D").get<std::size_t>();
  b.seed = j.value("seed", std::uint64_t{0});
  b.epsilon = j.value("epsilon", 1.0);
  const auto d = static_cast<Eigen::Index>(b.dim);
  auto read_mean = [&](const char* key) {
    if (!j.contains(key)) return Vector(Vector::Zero(d));
    auto v = j.at(key).get<std::vector<double>>();
    if (static_cast<Eigen::Index>(v.size()) != d) throw std::runtime_error(std::string("instance: bad length of ") + key);
    return Vector(Eigen::Map<Vector>(v.data(), d));
  };
  b.p0 = GaussianDist(read_mean("mu0"), matrix_from_json(j.at("sigma0"), d, d));
  b.p1 = GaussianDist(read_mean("mu1"), matrix_from_json(j.at("sigma1"), d, d));
  return b;
}

}  // namespace enot
