#pragma once

#include "enot/autodiff.hpp"

#include <Eigen/Dense>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace enot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
// Sample sets: one row per sample.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

// Symmetric PSD square root by eigendecomposition; eigenvalues below zero are clamped.
inline Matrix sqrtm_psd(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a));
  if (es.info() != Eigen::Success) throw std::runtime_error("sqrtm_psd: eigendecomposition failed");
  Vector s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * s.asDiagonal() * es.eigenvectors().transpose();
}

inline Matrix inv_sqrtm_pd(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a));
  if (es.info() != Eigen::Success) throw std::runtime_error("inv_sqrtm_pd: eigendecomposition failed");
  if (es.eigenvalues().minCoeff() <= 0.0) throw std::domain_error("inv_sqrtm_pd: matrix is not positive definite");
  Vector s = es.eigenvalues().cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * s.asDiagonal() * es.eigenvectors().transpose();
}

inline double min_eigenvalue(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// Factor F with F F^T = a. Plain Cholesky first; singular PSD matrices (e.g.
// deterministic couplings) go through pivoted LDLT, and as a last resort the
// diagonal is jittered by `jitter`.
inline Matrix cholesky_with_jitter(const Matrix& a, double jitter = 1e-10) {
  Matrix s = symmetrize(a);
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::LDLT<Matrix> ldlt(s);
  double scale = std::max(1.0, s.diagonal().cwiseAbs().maxCoeff());
  if (ldlt.info() == Eigen::Success && (ldlt.vectorD().array() >= -1e-12 * scale).all()) {
    Matrix l = ldlt.matrixL();
    Vector d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
    Matrix pt = ldlt.transpositionsP().transpose() * Matrix::Identity(a.rows(), a.cols());
    return pt * l * d.asDiagonal();
  }
  Eigen::LLT<Matrix> retry(s + jitter * Matrix::Identity(a.rows(), a.cols()));
  if (retry.info() == Eigen::Success) return retry.matrixL();
  throw std::runtime_error("cholesky: matrix is not positive semidefinite");
}

template <class T>
ad::BasicTensor<T> to_tensor(const RowMatrix& m) {
  std::vector<T> v(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) v[static_cast<std::size_t>(i)] = static_cast<T>(m.data()[i]);
  return ad::BasicTensor<T>({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(v));
}

template <class T>
RowMatrix to_matrix(const ad::BasicTensor<T>& t) {
  if (t.rank() != 2) throw ad::ShapeError("to_matrix: expected rank 2, got " + ad::shape_str(t.shape()));
  RowMatrix m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.numel(); ++i) m.data()[i] = static_cast<double>(t[i]);
  return m;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
  return v;
}

inline Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  auto v = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != rows * cols) {
    throw std::runtime_error("matrix_from_json: expected " + std::to_string(rows * cols) + " values, got " +
                             std::to_string(v.size()));
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = v[static_cast<std::size_t>(i * cols + j2)];
  return m;
}

}  // namespace enot
