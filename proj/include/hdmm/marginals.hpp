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

#include <optional>
#include <vector>

#include "hdmm/workload.hpp"

namespace hdmm {

// Weights indexed by attribute-subset bitmask. Bit (d-1-i) of a mask refers to
// attribute i, so the first attribute is the most significant bit. A set bit
// selects the identity block, a clear bit the all-ones (or total) block.
struct MarginalVector {
  std::vector<int> domain;
  Vector weights;

  int dims() const { return static_cast<int>(domain.size()); }
  std::size_t masks() const { return std::size_t{1} << domain.size(); }
};

inline void check_marginal_dims(const std::vector<int>& domain) {
  if (static_cast<int>(domain.size()) > limits().max_marginal_dims)
    throw InputError("marginal algebra needs 2^d weights; d = " + std::to_string(domain.size()) +
                     " exceeds " + std::to_string(limits().max_marginal_dims) +
                     ", restrict marginal optimization to a sub-schema");
  if (domain.empty()) throw InputError("marginal domain is empty");
}

inline bool mask_bit(std::size_t a, int i, int d) { return (a >> (d - 1 - i)) & 1U; }

inline MarginalVector top_mask_vector(const std::vector<int>& domain, double value = 1.0) {
  MarginalVector z{domain, Vector::Zero(std::size_t{1} << domain.size())};
  z.weights(z.weights.size() - 1) = value;
  return z;
}

// c(a) = ∏ n_i over the attributes whose bit is clear.
inline Vector characteristic_vector(const std::vector<int>& domain) {
  check_marginal_dims(domain);
  const int d = static_cast<int>(domain.size());
  Vector c(std::size_t{1} << d);
  for (std::size_t a = 0; a < static_cast<std::size_t>(c.size()); ++a) {
    double p = 1.0;
    for (int i = 0; i < d; ++i)
      if (!mask_bit(a, i, d)) p *= domain[i];
    c(a) = p;
  }
  return c;
}

// Dimension of the common eigenspace indexed by mask s: ∏ (n_i - 1) over the
// set bits of s.
inline Vector eigen_multiplicities(const std::vector<int>& domain) {
  const int d = static_cast<int>(domain.size());
  Vector m(std::size_t{1} << d);
  for (std::size_t s = 0; s < static_cast<std::size_t>(m.size()); ++s) {
    double p = 1.0;
    for (int i = 0; i < d; ++i)
      if (mask_bit(s, i, d)) p *= domain[i] - 1;
    m(s) = p;
  }
  return m;
}

// Dense X(u): X[k,b] = Σ_{a : a&b = k} u(a) c(a|b).
inline Matrix xmat(const MarginalVector& u) {
  Vector c = characteristic_vector(u.domain);
  const std::size_t m = u.masks();
  if (static_cast<double>(m) * m > limits().materialize_cap)
    throw InputError("xmat: 4^d entries exceed the configured cap");
  Matrix x = Matrix::Zero(m, m);
  for (std::size_t a = 0; a < m; ++a) {
    if (u.weights(a) == 0.0) continue;
    for (std::size_t b = 0; b < m; ++b) x(a & b, b) += u.weights(a) * c(a | b);
  }
  return x;
}

inline MarginalVector gram_mul(const MarginalVector& u, const MarginalVector& v) {
  if (u.domain != v.domain) throw InputError("gram_mul: domain mismatch");
  Vector c = characteristic_vector(u.domain);
  const std::size_t m = u.masks();
  MarginalVector out{u.domain, Vector::Zero(m)};
  for (std::size_t a = 0; a < m; ++a) {
    if (u.weights(a) == 0.0) continue;
    for (std::size_t b = 0; b < m; ++b)
      out.weights(a & b) += u.weights(a) * v.weights(b) * c(a | b);
  }
  return out;
}

// Solves X(u) v = z by back-substitution; G(v) is then G(u)^{-1}.
inline MarginalVector gram_inverse(const MarginalVector& u) {
  const std::size_t m = u.masks();
  if (u.weights(m - 1) == 0.0) throw InputError("gram_inverse: G(u) is singular (top weight 0)");
  Matrix x = xmat(u);
  MarginalVector v{u.domain, Vector::Zero(m)};
  for (std::size_t k = m; k-- > 0;) {
    double rhs = k == m - 1 ? 1.0 : 0.0;
    for (std::size_t b = k + 1; b < m; ++b)
      if ((k & b) == k) rhs -= x(k, b) * v.weights(b);
    if (x(k, k) == 0.0) throw InputError("gram_inverse: zero pivot");
    v.weights(k) = rhs / x(k, k);
  }
  return v;
}

// κ = Y w with κ(s) = Σ_{a ⊇ s} w(a) c(a), via a superset-sum transform.
inline Vector eigenvalues(const MarginalVector& w) {
  Vector c = characteristic_vector(w.domain);
  Vector t = w.weights.cwiseProduct(c);
  const std::size_t m = w.masks();
  for (std::size_t bit = 1; bit < m; bit <<= 1)
    for (std::size_t s = 0; s < m; ++s)
      if (!(s & bit)) t(s) += t(s | bit);
  return t;
}

// Inverse of eigenvalues(): the weights whose Gram has spectrum κ.
inline MarginalVector weights_from_eigenvalues(const std::vector<int>& domain, const Vector& kappa) {
  Vector c = characteristic_vector(domain);
  Vector t = kappa;
  const std::size_t m = static_cast<std::size_t>(t.size());
  for (std::size_t bit = 1; bit < m; bit <<= 1)
    for (std::size_t s = 0; s < m; ++s)
      if (!(s & bit)) t(s) -= t(s | bit);
  return {domain, t.cwiseQuotient(c)};
}

inline Matrix ymat(const std::vector<int>& domain) {
  Vector c = characteristic_vector(domain);
  const std::size_t m = static_cast<std::size_t>(c.size());
  Matrix y = Matrix::Zero(m, m);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b)
      if ((a & b) == a) y(a, b) = c(b);
  return y;
}

// Moore-Penrose inverse inside the marginal family: invert the nonzero
// eigenvalues, leave the annihilated eigenspaces at zero.
inline MarginalVector gram_ginverse(const MarginalVector& u, double pivot_tol = 1e-12) {
  Vector k = eigenvalues(u);
  double top = k.cwiseAbs().maxCoeff();
  Vector inv = Vector::Zero(k.size());
  for (Eigen::Index s = 0; s < k.size(); ++s)
    if (std::abs(k(s)) > pivot_tol * top) inv(s) = 1.0 / k(s);
  return weights_from_eigenvalues(u.domain, inv);
}

// Closest marginal Gram in the trace sense: tr[G(u) WᵀW] = tr[G(u) G(w)] for
// every u. Each factor Gram V is replaced by b I + c 1 with matching trace and
// total sum, then the product over factors is expanded over masks.
inline MarginalVector marginal_approx(const GramRepr& g) {
  check_marginal_dims(g.domain);
  const int d = static_cast<int>(g.domain.size());
  const std::size_t m = std::size_t{1} << d;
  MarginalVector w{g.domain, Vector::Zero(m)};
  for (const auto& t : g.terms) {
    std::vector<double> bs(d), cs(d);
    for (int i = 0; i < d; ++i) {
      const Matrix& v = t.grams[i];
      const double n = g.domain[i];
      const double tr = v.trace(), sum = v.sum();
      if (g.domain[i] == 1) {
        bs[i] = tr;
        cs[i] = 0.0;
      } else {
        cs[i] = (sum - tr) / (n * n - n);
        bs[i] = tr / n - cs[i];
      }
    }
    for (std::size_t a = 0; a < m; ++a) {
      double p = t.scale;
      for (int i = 0; i < d && p != 0.0; ++i) p *= mask_bit(a, i, d) ? bs[i] : cs[i];
      w.weights(a) += p;
    }
  }
  return w;
}

// True when every factor of every term is an identity or a total block, in
// which case marginal_approx is exact.
inline bool is_marginal_workload(const ImplicitWorkload& w) {
  for (const auto& t : w.terms)
    for (const auto& f : t.factors)
      if (!is_total(f) && !is_identity(f)) return false;
  return true;
}

inline double svdb_marginal(const MarginalVector& w) {
  Vector k = eigenvalues(w);
  Vector mult = eigen_multiplicities(w.domain);
  double s = 0.0;
  for (Eigen::Index a = 0; a < k.size(); ++a) {
    if (mult(a) == 0.0) continue;
    double ka = k(a);
    if (ka < 0.0) {
      if (ka < -1e-12 * std::max(1.0, k.cwiseAbs().maxCoeff()))
        throw InputError("svdb_marginal: Gram has a negative eigenvalue");
      ka = 0.0;
    }
    s += mult(a) * std::sqrt(ka);
  }
  return s * s / product_of(w.domain);
}

// Rank of G(w): total multiplicity of the nonzero eigenvalues.
inline double marginal_rank(const MarginalVector& w, double rel_tol = 1e-9) {
  Vector k = eigenvalues(w);
  Vector mult = eigen_multiplicities(w.domain);
  double top = k.cwiseAbs().maxCoeff(), r = 0.0;
  for (Eigen::Index a = 0; a < k.size(); ++a)
    if (k(a) > rel_tol * top) r += mult(a);
  return r;
}

// θ = sqrt(Y^{-1} sqrt(Y w)), scaled to unit L2 norm. Empty when a radicand is
// negative beyond roundoff.
inline std::optional<MarginalVector> closed_form_theta(const MarginalVector& w) {
  Vector k = eigenvalues(w);
  const double ktop = std::max(1.0, k.cwiseAbs().maxCoeff());
  for (Eigen::Index s = 0; s < k.size(); ++s) {
    if (k(s) < -1e-12 * ktop) return std::nullopt;
    k(s) = std::sqrt(std::max(0.0, k(s)));
  }
  MarginalVector u = weights_from_eigenvalues(w.domain, k);
  const double utop = std::max(1e-300, u.weights.cwiseAbs().maxCoeff());
  for (Eigen::Index a = 0; a < u.weights.size(); ++a) {
    if (u.weights(a) < -1e-12 * utop) return std::nullopt;
    u.weights(a) = std::sqrt(std::max(0.0, u.weights(a)));
  }
  double nrm = u.weights.norm();
  if (nrm == 0.0) return std::nullopt;
  u.weights /= nrm;
  return u;
}

// tr[G(θ²)^+ G(w)] through the shared eigenbasis. Returns +inf when G(θ²)
// does not support the workload. The optional gradient is with respect to u =
// θ².
inline double marginal_trace_error(const Vector& kappa_w, const MarginalVector& u,
                                   const Vector& mult, Vector* grad_u = nullptr) {
  Vector ku = eigenvalues(u);
  const double top = std::max(ku.cwiseAbs().maxCoeff(), 1e-300);
  const double wtop = std::max(kappa_w.cwiseAbs().maxCoeff(), 1e-300);
  double f = 0.0;
  Vector g;
  if (grad_u) g = Vector::Zero(ku.size());
  for (Eigen::Index s = 0; s < ku.size(); ++s) {
    if (mult(s) == 0.0 || kappa_w(s) <= 1e-12 * wtop) continue;
    if (ku(s) <= 1e-14 * top) return std::numeric_limits<double>::infinity();
    f += mult(s) * kappa_w(s) / ku(s);
    if (grad_u) g(s) = -mult(s) * kappa_w(s) / (ku(s) * ku(s));
  }
  if (grad_u) {
    // d/du(a) = c(a) Σ_{s ⊆ a} g(s): subset-sum transform.
    const std::size_t m = static_cast<std::size_t>(g.size());
    for (std::size_t bit = 1; bit < m; bit <<= 1)
      for (std::size_t s = 0; s < m; ++s)
        if (s & bit) g(s) += g(s ^ bit);
    *grad_u = g.cwiseProduct(characteristic_vector(u.domain));
  }
  return f;
}

// Factor list of one marginal block: identity for set bits, `clear` otherwise.
inline std::vector<Matrix> marginal_factors(const std::vector<int>& domain, std::size_t a,
                                            bool gram_form) {
  const int d = static_cast<int>(domain.size());
  std::vector<Matrix> fs;
  for (int i = 0; i < d; ++i) {
    const int n = domain[i];
    if (mask_bit(a, i, d))
      fs.push_back(Matrix::Identity(n, n));
    else
      fs.push_back(gram_form ? Matrix::Ones(n, n) : Matrix::Ones(1, n));
  }
  return fs;
}

inline Eigen::Index marginal_rows(const std::vector<int>& domain, std::size_t a) {
  const int d = static_cast<int>(domain.size());
  Eigen::Index r = 1;
  for (int i = 0; i < d; ++i)
    if (mask_bit(a, i, d)) r *= domain[i];
  return r;
}

inline Eigen::Index marginal_strategy_rows(const MarginalVector& theta) {
  Eigen::Index r = 0;
  for (std::size_t a = 0; a < theta.masks(); ++a)
    if (theta.weights(a) != 0.0) r += marginal_rows(theta.domain, a);
  return r;
}

// M(θ) x: blocks for the nonzero weights in ascending mask order.
inline Vector marginal_apply(const MarginalVector& theta, const Vector& x) {
  Vector out(marginal_strategy_rows(theta));
  Eigen::Index r = 0;
  for (std::size_t a = 0; a < theta.masks(); ++a) {
    if (theta.weights(a) == 0.0) continue;
    Vector part = theta.weights(a) * kron_matvec(marginal_factors(theta.domain, a, false), x);
    out.segment(r, part.size()) = part;
    r += part.size();
  }
  return out;
}

// M(θ)ᵀ y.
inline Vector marginal_apply_transpose(const MarginalVector& theta, const Vector& y) {
  if (y.size() != marginal_strategy_rows(theta))
    throw InputError("marginal transpose: vector length mismatch");
  Vector out = Vector::Zero(static_cast<Eigen::Index>(product_of(theta.domain)));
  Eigen::Index r = 0;
  for (std::size_t a = 0; a < theta.masks(); ++a) {
    if (theta.weights(a) == 0.0) continue;
    const Eigen::Index rows = marginal_rows(theta.domain, a);
    out += theta.weights(a) *
           kron_matvec(transposed(marginal_factors(theta.domain, a, false)), y.segment(r, rows));
    r += rows;
  }
  return out;
}

// G(v) x.
inline Vector marginal_gram_apply(const MarginalVector& v, const Vector& x) {
  Vector out = Vector::Zero(x.size());
  for (std::size_t a = 0; a < v.masks(); ++a) {
    if (v.weights(a) == 0.0) continue;
    out += v.weights(a) * kron_matvec(marginal_factors(v.domain, a, true), x);
  }
  return out;
}

inline Matrix marginal_gram_dense(const MarginalVector& v) {
  const auto n = static_cast<Eigen::Index>(product_of(v.domain));
  Matrix g = Matrix::Zero(n, n);
  for (std::size_t a = 0; a < v.masks(); ++a)
    if (v.weights(a) != 0.0) g += v.weights(a) * kron_all(marginal_factors(v.domain, a, true));
  return g;
}

}  // namespace hdmm
