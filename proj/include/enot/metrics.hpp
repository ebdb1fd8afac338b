#pragma once

#include "enot/gaussian.hpp"
#include "enot/linalg.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace enot {

struct MomentSummary {
  Vector mean;
  Matrix cov;  // unbiased (n - 1), symmetrized
  std::size_t n_samples = 0;

  GaussianDist gaussian() const { return {mean, cov}; }
};

inline MomentSummary empirical_moments(const RowMatrix& samples) {
  if (samples.rows() < 2) throw std::invalid_argument("empirical_moments: need at least 2 samples");
  const auto n = static_cast<double>(samples.rows());
  MomentSummary s;
  s.n_samples = static_cast<std::size_t>(samples.rows());
  s.mean = samples.colwise().mean().transpose();
  RowMatrix c = samples.rowwise() - s.mean.transpose();
  s.cov = symmetrize(c.transpose() * c / (n - 1.0));
  return s;
}

// 100 * BW2^2(N(estimate), reference) / (tr(Sigma_ref) / 2), in percent.
inline double bw2_uvp(const MomentSummary& estimate, const GaussianDist& reference) {
  double var = reference.cov.trace();
  if (!(var > 0.0)) throw std::invalid_argument("bw2_uvp: reference has zero total variance");
  return 100.0 * bw2_distance(estimate.gaussian(), reference) / (0.5 * var);
}

inline double bw2_uvp(const RowMatrix& samples, const GaussianDist& reference) {
  return bw2_uvp(empirical_moments(samples), reference);
}

// Plan-level metric on concatenated pairs (x, y) in R^{2D}.
inline double plan_bw2_uvp(const RowMatrix& xs, const RowMatrix& ys, const GaussianEotPlan& plan) {
  if (xs.rows() != ys.rows() || xs.cols() != ys.cols()) throw std::invalid_argument("plan_bw2_uvp: pair shapes differ");
  RowMatrix xy(xs.rows(), xs.cols() + ys.cols());
  xy << xs, ys;
  return bw2_uvp(xy, plan.joint());
}

namespace detail {
inline double mean_pair_distance(const RowMatrix& a, const RowMatrix& b) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < b.rows(); ++j) row += (a.row(i) - b.row(j)).norm();
    acc += row;
  }
  return acc / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

// Strict weak order on sample sets, used to fix the evaluation order.
inline bool sample_set_less(const RowMatrix& a, const RowMatrix& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}
}  // namespace detail

// 2 E|A - B| - E|A - A'| - E|B - B'| between the two empirical measures
// (V-statistics, so the value is >= 0 and exactly 0 for identical sets).
// Arguments are put in a canonical order first, so ed(A,B) == ed(B,A) bitwise.
inline double energy_distance(const RowMatrix& a, const RowMatrix& b) {
  if (a.rows() < 1 || b.rows() < 1) throw std::invalid_argument("energy_distance: empty sample set");
  if (a.cols() != b.cols()) throw std::invalid_argument("energy_distance: dimension mismatch");
  const RowMatrix& first = detail::sample_set_less(b, a) ? b : a;
  const RowMatrix& second = &first == &a ? b : a;
  double cross = detail::mean_pair_distance(first, second);
  double within1 = detail::mean_pair_distance(first, first);
  double within2 = detail::mean_pair_distance(second, second);
  return std::max(0.0, 2.0 * cross - within1 - within2);
}

inline nlohmann::json metric_record(const std::string& metric, double value, std::size_t n_samples,
                                    std::uint64_t seed, std::uint64_t config_hash) {
  return {{"metric", metric}, {"value", value}, {"n_samples", n_samples}, {"seed", seed}, {"config_hash", config_hash}};
}

}  // namespace enot
