#pragma once

// Log-domain Sinkhorn for discrete entropic OT,
//   min_P <M, P> - eps H(P)  s.t.  P 1 = a, P^T 1 = b,
// with dense costs, plus a variant for product grids under the separable cost
// ||x - y||^2 / 2 that never materializes the full cost matrix.

#include "enot/linalg.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace enot {

struct DiscreteEotProblem {
  Matrix cost;  // [n, m]
  Vector a, b;
  double epsilon = 1.0;

  void validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("sinkhorn: epsilon must be > 0");
    if (cost.rows() != a.size() || cost.cols() != b.size()) {
      throw std::invalid_argument("sinkhorn: cost is " + std::to_string(cost.rows()) + "x" +
                                  std::to_string(cost.cols()) + " but weights have sizes " + std::to_string(a.size()) +
                                  ", " + std::to_string(b.size()));
    }
    if (!cost.allFinite()) throw std::invalid_argument("sinkhorn: cost matrix has non-finite entries");
    for (const Vector* w : {&a, &b}) {
      if ((w->array() < 0.0).any()) throw std::invalid_argument("sinkhorn: negative weight");
      if (std::abs(w->sum() - 1.0) > 1e-12) throw std::invalid_argument("sinkhorn: weights must sum to 1");
    }
  }
};

// M_ij = ||x_i - y_j||^2 / 2 for point sets stored one per row.
inline Matrix squared_cost(const RowMatrix& xs, const RowMatrix& ys) {
  Matrix m(xs.rows(), ys.rows());
  for (Eigen::Index i = 0; i < xs.rows(); ++i)
    for (Eigen::Index j = 0; j < ys.rows(); ++j) m(i, j) = 0.5 * (xs.row(i) - ys.row(j)).squaredNorm();
  return m;
}

struct Coupling {
  Matrix plan;
  Vector f, g;  // dual potentials
  double row_residual = 0.0;  // ||P 1 - a||_1
  double col_residual = 0.0;  // ||P^T 1 - b||_1
  std::size_t iterations = 0;
  bool converged = false;

  double max_residual() const { return std::max(row_residual, col_residual); }
};

namespace detail {

inline double log_or_neg_inf(double w) { return w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity(); }

// log sum_k exp(v_k), -inf for an all -inf input.
template <class Vec>
double logsumexp(const Vec& v) {
  double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace detail

// Alternating updates f_i = -eps LSE_j[(g_j - M_ij)/eps + log b_j] and the
// symmetric one for g, until the larger marginal L1 residual is <= tol.
inline Coupling sinkhorn(const DiscreteEotProblem& p, double tol = 1e-9, std::size_t max_iter = 100000) {
  p.validate();
  if (!(tol > 0.0)) throw std::invalid_argument("sinkhorn: tol must be > 0");
  const double eps = p.epsilon;
  const Eigen::Index n = p.a.size(), m = p.b.size();
  Vector la = p.a.unaryExpr(&detail::log_or_neg_inf);
  Vector lb = p.b.unaryExpr(&detail::log_or_neg_inf);
  Matrix mk = -p.cost / eps;  // log kernel

  Coupling c;
  c.f = Vector::Zero(n);
  c.g = Vector::Zero(m);
  Vector tmp_row(m), tmp_col(n);
  auto row_marginal = [&](Vector& out) {
    for (Eigen::Index i = 0; i < n; ++i) {
      tmp_row = mk.row(i).transpose() + c.g / eps + lb;
      out(i) = std::exp(c.f(i) / eps + la(i) + detail::logsumexp(tmp_row));
    }
  };
  Vector rows(n);
  for (c.iterations = 1; c.iterations <= max_iter; ++c.iterations) {
    for (Eigen::Index i = 0; i < n; ++i) {
      tmp_row = mk.row(i).transpose() + c.g / eps + lb;
      c.f(i) = -eps * detail::logsumexp(tmp_row);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      tmp_col = mk.col(j) + c.f / eps + la;
      c.g(j) = -eps * detail::logsumexp(tmp_col);
    }
    row_marginal(rows);
    c.row_residual = (rows - p.a).cwiseAbs().sum();
    if (c.row_residual <= tol) {
      c.converged = true;
      break;
    }
  }
  if (!c.converged) c.iterations = max_iter;
  c.plan.resize(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      c.plan(i, j) = p.a(i) > 0.0 && p.b(j) > 0.0 ? std::exp((c.f(i) + c.g(j)) / eps + mk(i, j) + la(i) + lb(j)) : 0.0;
  c.row_residual = (c.plan.rowwise().sum() - p.a).cwiseAbs().sum();
  c.col_residual = (c.plan.colwise().sum().transpose() - p.b).cwiseAbs().sum();
  c.converged = c.max_residual() <= tol;
  return c;
}

// Discrete entropy -sum P log P (0 log 0 = 0).
inline double discrete_entropy(const Matrix& plan) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < plan.size(); ++i) {
    double v = plan.data()[i];
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

// sum_ij P_ij (x_i - xbar)(y_j - ybar)^T with P-weighted means.
inline Matrix coupling_cross_covariance(const Matrix& plan, const RowMatrix& xs, const RowMatrix& ys) {
  if (plan.rows() != xs.rows() || plan.cols() != ys.rows()) {
    throw std::invalid_argument("coupling_cross_covariance: plan and point sets disagree in size");
  }
  double mass = plan.sum();
  Vector wx = plan.rowwise().sum() / mass;
  Vector wy = plan.colwise().sum().transpose() / mass;
  Vector xbar = xs.transpose() * wx;
  Vector ybar = ys.transpose() * wy;
  RowMatrix xc = xs.rowwise() - xbar.transpose();
  RowMatrix yc = ys.rowwise() - ybar.transpose();
  return xc.transpose() * (plan / mass) * yc;
}

inline nlohmann::json to_json(const DiscreteEotProblem& p) {
  return {{"n", p.a.size()},
          {"m", p.b.size()},
          {"epsilon", p.epsilon},
          {"a", std::vector<double>(p.a.data(), p.a.data() + p.a.size())},
          {"b", std::vector<double>(p.b.data(), p.b.data() + p.b.size())},
          {"cost", matrix_to_json(p.cost)}};
}

inline DiscreteEotProblem problem_from_json(const nlohmann::json& j) {
  DiscreteEotProblem p;
  auto n = j.at("n").get<Eigen::Index>(), m = j.at("m").get<Eigen::Index>();
  auto a = j.at("a").get<std::vector<double>>(), b = j.at("b").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(a.size()) != n || static_cast<Eigen::Index>(b.size()) != m) {
    throw std::runtime_error("problem_from_json: weight lengths do not match n, m");
  }
  p.a = Eigen::Map<Vector>(a.data(), n);
  p.b = Eigen::Map<Vector>(b.data(), m);
  p.cost = matrix_from_json(j.at("cost"), n, m);
  p.epsilon = j.at("epsilon").get<double>();
  return p;
}

inline nlohmann::json to_json(const Coupling& c) {
  return {{"n", c.plan.rows()},
          {"m", c.plan.cols()},
          {"plan", matrix_to_json(c.plan)},
          {"row_residual", c.row_residual},
          {"col_residual", c.col_residual},
          {"iterations", c.iterations},
          {"converged", c.converged}};
}

// ---------------------------------------------------------------------------
// Product grids

// Tensor grid: source points are all combinations of source_axes[k] values,
// flattened row-major (last axis fastest); likewise for the target.
struct GridEotProblem {
  std::vector<Vector> source_axes, target_axes;
  Vector a, b;  // weights over the flattened grids
  double epsilon = 1.0;

  std::size_t dims() const { return source_axes.size(); }
  RowMatrix source_points() const { return grid_points(source_axes); }
  RowMatrix target_points() const { return grid_points(target_axes); }

  static RowMatrix grid_points(const std::vector<Vector>& axes) {
    Eigen::Index total = 1;
    for (const auto& ax : axes) total *= ax.size();
    RowMatrix pts(total, static_cast<Eigen::Index>(axes.size()));
    for (Eigen::Index flat = 0; flat < total; ++flat) {
      Eigen::Index rem = flat;
      for (std::size_t k = axes.size(); k-- > 0;) {
        pts(flat, static_cast<Eigen::Index>(k)) = axes[k](rem % axes[k].size());
        rem /= axes[k].size();
      }
    }
    return pts;
  }
};

struct GridCoupling {
  Vector f, g;
  double row_residual = 0.0;
  double col_residual = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  Vector x_mean, y_mean;
  Matrix cross_cov;  // Cov(X, Y) under the coupling
};

namespace detail {

// out[..., i_k, ...] = LSE_j ( in[..., j, ...] + logk(i_k, j) ) along axis k.
inline std::vector<double> lse_contract(const std::vector<double>& in, std::vector<Eigen::Index>& shape, std::size_t k,
                                        const Matrix& logk) {
  Eigen::Index outer = 1, inner = 1;
  for (std::size_t i = 0; i < k; ++i) outer *= shape[i];
  for (std::size_t i = k + 1; i < shape.size(); ++i) inner *= shape[i];
  const Eigen::Index len_in = logk.cols(), len_out = logk.rows();
  std::vector<double> out(static_cast<std::size_t>(outer * len_out * inner));
  Vector col(len_in);
  for (Eigen::Index o = 0; o < outer; ++o) {
    for (Eigen::Index in_i = 0; in_i < inner; ++in_i) {
      for (Eigen::Index j = 0; j < len_in; ++j) col(j) = in[static_cast<std::size_t>((o * len_in + j) * inner + in_i)];
      for (Eigen::Index i = 0; i < len_out; ++i) {
        out[static_cast<std::size_t>((o * len_out + i) * inner + in_i)] =
            logsumexp((col + logk.row(i).transpose()).eval());
      }
    }
  }
  shape[k] = len_out;
  return out;
}

}  // namespace detail

// Log-domain Sinkhorn on product grids with cost ||x-y||^2/2; also returns the
// coupling's first and cross moments.
inline GridCoupling sinkhorn_grid(const GridEotProblem& p, double tol = 1e-9, std::size_t max_iter = 100000) {
  const std::size_t D = p.dims();
  if (D == 0 || p.target_axes.size() != D) throw std::invalid_argument("sinkhorn_grid: axis lists differ");
  if (!(p.epsilon > 0.0)) throw std::invalid_argument("sinkhorn_grid: epsilon must be > 0");
  Eigen::Index n = 1, m = 1;
  std::vector<Eigen::Index> src_shape, tgt_shape;
  std::vector<Matrix> k_ts, k_st;  // log kernels target->source and source->target per axis
  for (std::size_t k = 0; k < D; ++k) {
    const auto& xs = p.source_axes[k];
    const auto& ys = p.target_axes[k];
    n *= xs.size();
    m *= ys.size();
    src_shape.push_back(xs.size());
    tgt_shape.push_back(ys.size());
    Matrix lk(xs.size(), ys.size());
    for (Eigen::Index i = 0; i < xs.size(); ++i)
      for (Eigen::Index j = 0; j < ys.size(); ++j) lk(i, j) = -0.5 * (xs(i) - ys(j)) * (xs(i) - ys(j)) / p.epsilon;
    k_ts.push_back(lk);
    k_st.push_back(lk.transpose());
  }
  if (p.a.size() != n || p.b.size() != m) throw std::invalid_argument("sinkhorn_grid: weights do not match grids");
  for (const Vector* w : {&p.a, &p.b}) {
    if ((w->array() < 0.0).any() || std::abs(w->sum() - 1.0) > 1e-12) {
      throw std::invalid_argument("sinkhorn_grid: weights must be nonnegative and sum to 1");
    }
  }
  const double eps = p.epsilon;
  Vector la = p.a.unaryExpr(&detail::log_or_neg_inf);
  Vector lb = p.b.unaryExpr(&detail::log_or_neg_inf);

  // LSE over the whole target (or source) grid of h(j) + log K(i, j).
  auto contract_to_source = [&](const Vector& h) {
    std::vector<double> v(h.data(), h.data() + h.size());
    auto shape = tgt_shape;
    for (std::size_t k = 0; k < D; ++k) v = detail::lse_contract(v, shape, k, k_ts[k]);
    return Vector(Eigen::Map<Vector>(v.data(), n));
  };
  auto contract_to_target = [&](const Vector& h) {
    std::vector<double> v(h.data(), h.data() + h.size());
    auto shape = src_shape;
    for (std::size_t k = 0; k < D; ++k) v = detail::lse_contract(v, shape, k, k_st[k]);
    return Vector(Eigen::Map<Vector>(v.data(), m));
  };

  GridCoupling c;
  c.f = Vector::Zero(n);
  c.g = Vector::Zero(m);
  for (c.iterations = 1; c.iterations <= max_iter; ++c.iterations) {
    c.f = -eps * contract_to_source((c.g / eps + lb).eval());
    c.g = -eps * contract_to_target((c.f / eps + la).eval());
    Vector rows = (c.f / eps + la + contract_to_source((c.g / eps + lb).eval())).array().exp();
    c.row_residual = (rows - p.a).cwiseAbs().sum();
    if (c.row_residual <= tol) {
      c.converged = true;
      break;
    }
  }
  if (!c.converged) c.iterations = max_iter;
  Vector cols = (c.g / eps + lb + contract_to_target((c.f / eps + la).eval())).array().exp();
  c.col_residual = (cols - p.b).cwiseAbs().sum();
  c.converged = std::max(c.row_residual, c.col_residual) <= tol;

  // Moments. For each target coordinate l, E[y_l | x_i] comes from the same
  // contraction applied to log(y_l + shift) with a shift that makes it positive.
  RowMatrix xs = p.source_points();
  RowMatrix ys = p.target_points();
  Vector row_mass = (c.f / eps + la + contract_to_source((c.g / eps + lb).eval())).array().exp();
  c.x_mean = xs.transpose() * row_mass / row_mass.sum();
  c.y_mean = ys.transpose() * cols / cols.sum();
  c.cross_cov.resize(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(D));
  for (std::size_t l = 0; l < D; ++l) {
    double shift = 1.0 - ys.col(static_cast<Eigen::Index>(l)).minCoeff();
    Vector logy = (ys.col(static_cast<Eigen::Index>(l)).array() + shift).log();
    Vector ey = (c.f / eps + la + contract_to_source((c.g / eps + lb + logy).eval())).array().exp();
    // ey_i = sum_j P_ij (y_jl + shift)
    Vector cond = ey - shift * row_mass;
    for (std::size_t k = 0; k < D; ++k) {
      double exy = xs.col(static_cast<Eigen::Index>(k)).dot(cond) / row_mass.sum();
      c.cross_cov(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) =
          exy - c.x_mean(static_cast<Eigen::Index>(k)) * c.y_mean(static_cast<Eigen::Index>(l));
    }
  }
  return c;
}

// Weights proportional to the N(mean, cov) density at the grid points.
inline Vector gaussian_grid_weights(const RowMatrix& pts, const Vector& mean, const Matrix& cov) {
  Matrix prec = cov.inverse();
  Vector lw(pts.rows());
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    Vector d = pts.row(i).transpose() - mean;
    lw(i) = -0.5 * d.dot(prec * d);
  }
  lw.array() -= lw.maxCoeff();
  Vector w = lw.array().exp();
  return w / w.sum();
}

// Uniform axes over mean_k +- half_width_sigmas * sqrt(largest eigenvalue of cov).
inline std::vector<Vector> gaussian_grid_axes(const Vector& mean, const Matrix& cov, Eigen::Index points_per_axis,
                                              double half_width_sigmas = 6.0) {
  double sigma = std::sqrt(std::max(0.0, Eigen::SelfAdjointEigenSolver<Matrix>(cov).eigenvalues().maxCoeff()));
  std::vector<Vector> axes;
  for (Eigen::Index k = 0; k < mean.size(); ++k) {
    axes.push_back(Vector::LinSpaced(points_per_axis, mean(k) - half_width_sigmas * sigma,
                                     mean(k) + half_width_sigmas * sigma));
  }
  return axes;
}

}  // namespace enot
