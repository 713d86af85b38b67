// Copyright 2026 The HDMM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "hdmm/common.hpp"

namespace hdmm {

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// First factor varies slowest in both row and column index.
inline Matrix kron_all(const std::vector<Matrix>& factors) {
  Matrix out = Matrix::Ones(1, 1);
  for (const auto& f : factors) out = kron(out, f);
  return out;
}

// Moore-Penrose inverse of a symmetric positive semidefinite matrix.
// Eigenvalues below rel_tol * max eigenvalue are treated as zero.
inline Matrix pinv_psd(const Matrix& g, double rel_tol = 1e-10) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(g);
  const Vector& lam = es.eigenvalues();
  double top = lam.cwiseAbs().maxCoeff();
  Vector inv = Vector::Zero(lam.size());
  for (Eigen::Index i = 0; i < lam.size(); ++i)
    if (lam(i) > rel_tol * top) inv(i) = 1.0 / lam(i);
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

inline Matrix pinv(const Matrix& a, double rel_tol = 1e-10) {
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  double top = s.size() ? s(0) : 0.0;
  Vector inv = Vector::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * top) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

// (AᵀA)^+ computed from the SVD of A, so a full-rank but ill-conditioned A
// keeps its small directions. Optionally returns the row-space projector.
inline Matrix gram_pinv(const Matrix& a, Matrix* projector = nullptr, double rel_tol = 1e-12) {
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double top = s.size() ? s(0) : 0.0;
  Eigen::Index r = 0;
  while (r < s.size() && s(r) > rel_tol * top) ++r;
  const Matrix v = svd.matrixV().leftCols(r);
  if (projector) *projector = v * v.transpose();
  return v * s.head(r).array().square().inverse().matrix().asDiagonal() * v.transpose();
}

inline int numeric_rank_psd(const Matrix& g, double rel_tol = 1e-9) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(g, Eigen::EigenvaluesOnly);
  const Vector& lam = es.eigenvalues();
  double top = lam.cwiseAbs().maxCoeff();
  int r = 0;
  for (Eigen::Index i = 0; i < lam.size(); ++i)
    if (lam(i) > rel_tol * top) ++r;
  return r;
}

// tr(A B) without forming the product.
inline double trace_product(const Matrix& a, const Matrix& b) {
  return a.cwiseProduct(b.transpose()).sum();
}

inline double column_norm(const Matrix& a, Norm k) {
  if (a.size() == 0) return 0.0;
  if (k == Norm::L1) return a.cwiseAbs().colwise().sum().maxCoeff();
  return std::sqrt(a.cwiseAbs2().colwise().sum().maxCoeff());
}

// Computes (A_1 ⊗ ... ⊗ A_d) x without materializing the product. Each pass
// contracts the trailing attribute axis with its factor and rotates the
// result to the front, so after d passes the axes are back in order.
inline Vector kron_matvec(const std::vector<Matrix>& factors, const Vector& x) {
  Eigen::Index r = 1;
  for (const auto& f : factors) r *= f.cols();
  if (r != x.size())
    throw InputError("kron_matvec: vector length " + std::to_string(x.size()) +
                     " does not match factor columns " + std::to_string(r));
  Vector f = x;
  for (auto it = factors.rbegin(); it != factors.rend(); ++it) {
    const Matrix& a = *it;
    const Eigen::Index n = a.cols(), m = a.rows();
    const Eigen::Index rest = r / n;
    Eigen::Map<const Matrix> z(f.data(), n, rest);
    Vector next(m * rest);
    Eigen::Map<Matrix> out(next.data(), rest, m);
    out.noalias() = z.transpose() * a.transpose();
    f.swap(next);
    r = rest * m;
  }
  return f;
}

inline std::vector<Matrix> transposed(const std::vector<Matrix>& factors) {
  std::vector<Matrix> out;
  out.reserve(factors.size());
  for (const auto& f : factors) out.push_back(f.transpose());
  return out;
}

inline double product_of(const std::vector<int>& v) {
  double p = 1.0;
  for (int x : v) p *= x;
  return p;
}

}  // namespace hdmm
