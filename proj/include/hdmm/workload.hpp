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

#include <memory>
#include <string>
#include <vector>

#include "hdmm/linalg.hpp"

namespace hdmm {

enum class BlockKind { Identity, Total, Prefix, AllRange, WidthRange, Permuted, Literal };

// A per-attribute predicate set. Permuted wraps another block and shuffles its
// columns with a seeded Fisher-Yates permutation.
struct Block {
  BlockKind kind = BlockKind::Identity;
  int width = 0;
  std::shared_ptr<const Block> inner;
  std::uint64_t seed = 0;
  Matrix literal;

  static Block of(BlockKind k) {
    Block b;
    b.kind = k;
    return b;
  }
  static Block identity() { return of(BlockKind::Identity); }
  static Block total() { return of(BlockKind::Total); }
  static Block prefix() { return of(BlockKind::Prefix); }
  static Block all_range() { return of(BlockKind::AllRange); }
  static Block width_range(int w) {
    Block b = of(BlockKind::WidthRange);
    b.width = w;
    return b;
  }
  static Block permuted(const Block& in, std::uint64_t seed) {
    Block b = of(BlockKind::Permuted);
    b.inner = std::make_shared<Block>(in);
    b.seed = seed;
    return b;
  }
  static Block from_matrix(const Matrix& m) {
    Block b = of(BlockKind::Literal);
    b.literal = m;
    return b;
  }
};

inline Matrix materialize_block(const Block& b, int n) {
  if (n < 1) throw InputError("block domain size must be positive");
  switch (b.kind) {
    case BlockKind::Identity:
      return Matrix::Identity(n, n);
    case BlockKind::Total:
      return Matrix::Ones(1, n);
    case BlockKind::Prefix: {
      Matrix m = Matrix::Zero(n, n);
      for (int i = 0; i < n; ++i) m.row(i).head(i + 1).setOnes();
      return m;
    }
    case BlockKind::AllRange: {
      Matrix m = Matrix::Zero(static_cast<Eigen::Index>(n) * (n + 1) / 2, n);
      Eigen::Index r = 0;
      for (int a = 0; a < n; ++a)
        for (int c = a; c < n; ++c) m.row(r++).segment(a, c - a + 1).setOnes();
      return m;
    }
    case BlockKind::WidthRange: {
      if (b.width < 1 || b.width > n)
        throw InputError("invalid block: width " + std::to_string(b.width) +
                         " for domain size " + std::to_string(n));
      Matrix m = Matrix::Zero(n - b.width + 1, n);
      for (int a = 0; a + b.width <= n; ++a) m.row(a).segment(a, b.width).setOnes();
      return m;
    }
    case BlockKind::Permuted: {
      if (!b.inner) throw InputError("invalid block: permuted without inner block");
      Matrix in = materialize_block(*b.inner, n);
      std::vector<int> perm = seeded_permutation(n, b.seed);
      Matrix out(in.rows(), n);
      for (int j = 0; j < n; ++j) out.col(j) = in.col(perm[j]);
      return out;
    }
    case BlockKind::Literal:
      if (b.literal.cols() != n)
        throw InputError("invalid block: literal has " + std::to_string(b.literal.cols()) +
                         " columns, attribute has " + std::to_string(n));
      if (b.literal.rows() < 1 || !b.literal.allFinite())
        throw InputError("invalid block: literal must have finite entries and a row");
      return b.literal;
  }
  throw InputError("invalid block kind");
}

struct KronTerm {
  double weight = 1.0;
  std::vector<Matrix> factors;

  Eigen::Index rows() const {
    Eigen::Index r = 1;
    for (const auto& f : factors) r *= f.rows();
    return r;
  }
};

struct ImplicitWorkload {
  std::vector<int> domain;
  std::vector<KronTerm> terms;

  int dims() const { return static_cast<int>(domain.size()); }
  double domain_size() const { return product_of(domain); }
  double query_count() const {
    double m = 0;
    for (const auto& t : terms) m += static_cast<double>(t.rows());
    return m;
  }
  void validate() const {
    if (domain.empty()) throw InputError("workload domain is empty");
    for (int n : domain)
      if (n < 1) throw InputError("attribute sizes must be positive");
    for (std::size_t j = 0; j < terms.size(); ++j) {
      const auto& t = terms[j];
      if (t.factors.size() != domain.size())
        throw InputError("term " + std::to_string(j) + " has " +
                         std::to_string(t.factors.size()) + " factors, domain has " +
                         std::to_string(domain.size()) + " attributes");
      if (!(t.weight >= 0.0) || !std::isfinite(t.weight))
        throw InputError("term " + std::to_string(j) + " weight must be finite and >= 0");
      for (std::size_t i = 0; i < domain.size(); ++i)
        if (t.factors[i].cols() != domain[i])
          throw InputError("term " + std::to_string(j) + " factor " + std::to_string(i) +
                           " column count mismatch");
    }
  }
};

// A weighted conjunction: one predicate set per attribute.
struct Product {
  double weight = 1.0;
  std::vector<Block> blocks;
};

inline ImplicitWorkload impvec(const std::vector<Product>& products,
                               const std::vector<int>& domain) {
  ImplicitWorkload w;
  w.domain = domain;
  for (std::size_t j = 0; j < products.size(); ++j) {
    const auto& p = products[j];
    if (p.blocks.size() != domain.size())
      throw InputError("product " + std::to_string(j) + " names " +
                       std::to_string(p.blocks.size()) + " predicate sets for " +
                       std::to_string(domain.size()) + " attributes");
    KronTerm t;
    t.weight = p.weight;
    for (std::size_t i = 0; i < domain.size(); ++i)
      t.factors.push_back(materialize_block(p.blocks[i], domain[i]));
    w.terms.push_back(std::move(t));
  }
  w.validate();
  return w;
}

// All k-way marginals: one term per k-subset of attributes (lexicographic),
// Identity on the subset and Total elsewhere.
inline ImplicitWorkload kway_marginals(const std::vector<int>& domain, int k) {
  const int d = static_cast<int>(domain.size());
  if (k < 0 || k > d) throw InputError("k must lie in [0, d]");
  std::vector<Product> products;
  std::vector<int> pick(k);
  for (int i = 0; i < k; ++i) pick[i] = i;
  while (true) {
    Product p;
    for (int i = 0; i < d; ++i) p.blocks.push_back(Block::total());
    for (int i : pick) p.blocks[i] = Block::identity();
    products.push_back(std::move(p));
    int i = k - 1;
    while (i >= 0 && pick[i] == d - k + i) --i;
    if (i < 0) break;
    ++pick[i];
    for (int j = i + 1; j < k; ++j) pick[j] = pick[j - 1] + 1;
  }
  return impvec(products, domain);
}

inline Matrix materialize_term(const KronTerm& t) { return t.weight * kron_all(t.factors); }

inline Matrix materialize_explicit(const ImplicitWorkload& w) {
  const double n = w.domain_size(), m = w.query_count();
  if (m * n > limits().materialize_cap)
    throw InputError("materialization of " + std::to_string(m) + " x " + std::to_string(n) +
                     " exceeds the configured cap");
  Matrix out(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  Eigen::Index r = 0;
  for (const auto& t : w.terms) {
    Matrix block = materialize_term(t);
    out.middleRows(r, block.rows()) = block;
    r += block.rows();
  }
  return out;
}

inline double sensitivity_norm(const Matrix& a, Norm k) { return column_norm(a, k); }

inline double sensitivity_norm(const KronTerm& t, Norm k) {
  double s = std::abs(t.weight);
  for (const auto& f : t.factors) s *= column_norm(f, k);
  return s;
}

// Exact max over cells of the combined column norm. Each term's column norms
// form a Kronecker product of per-factor norm vectors, so the cell-wise sum is
// cheap to build. When every factor has constant column norms the per-term
// maxima align and their sum is exact without touching N cells; otherwise
// domains above `exact_cap` fall back to that sum, which is an upper bound.
inline double sensitivity_norm(const ImplicitWorkload& w, Norm k, double exact_cap = 1 << 24) {
  auto term_norms = [&](const KronTerm& t) {
    std::vector<Vector> cs;
    for (const auto& f : t.factors) {
      Vector c(f.cols());
      for (Eigen::Index j = 0; j < f.cols(); ++j)
        c(j) = k == Norm::L1 ? f.col(j).cwiseAbs().sum() : f.col(j).squaredNorm();
      cs.push_back(c);
    }
    return cs;
  };
  bool aligned = true;
  double acc = 0.0;
  for (const auto& t : w.terms) {
    for (const auto& c : term_norms(t)) aligned = aligned && c.maxCoeff() == c.minCoeff();
    double s = sensitivity_norm(t, k);
    acc += k == Norm::L1 ? s : s * s;
  }
  if (!aligned && w.domain_size() <= exact_cap) {
    Vector cell = Vector::Zero(static_cast<Eigen::Index>(w.domain_size()));
    for (const auto& t : w.terms) {
      Vector v = Vector::Constant(1, k == Norm::L1 ? std::abs(t.weight) : t.weight * t.weight);
      for (const auto& c : term_norms(t)) v = kron(v, c);
      cell += v;
    }
    acc = cell.maxCoeff();
  }
  return k == Norm::L1 ? acc : std::sqrt(acc);
}

inline bool is_total(const Matrix& f) { return f.rows() == 1 && (f.array() == 1.0).all(); }

inline bool is_identity(const Matrix& f) {
  return f.rows() == f.cols() && f.isApprox(Matrix::Identity(f.rows(), f.cols()), 0.0);
}

// Gram of one weighted Kronecker product, kept factored: scale * ⊗_i grams[i].
// Cross terms of a disjunction are not individually symmetric; `psd` marks
// the terms that are.
struct GramTerm {
  double scale = 1.0;
  std::vector<Matrix> grams;
  bool psd = true;
};

struct GramRepr {
  std::vector<int> domain;
  std::vector<GramTerm> terms;
};

inline GramRepr gram(const ImplicitWorkload& w) {
  GramRepr g;
  g.domain = w.domain;
  for (const auto& t : w.terms) {
    GramTerm gt;
    gt.scale = t.weight * t.weight;
    for (const auto& f : t.factors) gt.grams.push_back(f.transpose() * f);
    g.terms.push_back(std::move(gt));
  }
  return g;
}

inline Matrix gram_dense(const GramRepr& g) {
  const double n = product_of(g.domain);
  if (n * n > limits().materialize_cap)
    throw InputError("dense Gram of size " + std::to_string(n) + "^2 exceeds the configured cap");
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (const auto& t : g.terms) out += t.scale * kron_all(t.grams);
  return out;
}

// Per-factor gram traces: tr(G) = Σ_j scale_j ∏_i tr(G_i^(j)).
inline double gram_trace(const GramRepr& g) {
  double acc = 0.0;
  for (const auto& t : g.terms) {
    double p = t.scale;
    for (const auto& m : t.grams) p *= m.trace();
    acc += p;
  }
  return acc;
}

// Entrywise formulas for the Grams of the range and prefix predicate sets.
inline Matrix gram_closed_form(BlockKind kind, int n) {
  Matrix g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      int lo = std::min(i, j), hi = std::max(i, j);
      if (kind == BlockKind::AllRange)
        g(i, j) = static_cast<double>(lo + 1) * (n - hi);
      else if (kind == BlockKind::Prefix)
        g(i, j) = n - hi;
      else
        throw InputError("closed-form Gram only exists for allrange and prefix");
    }
  return g;
}

// Vector of the negated predicate: T - phi.
inline Matrix negation(const Matrix& phi) { return Matrix::Ones(phi.rows(), phi.cols()) - phi; }

// Builds the two Kronecker products whose difference answers the disjunctions
// OR_i phi_i: term_a = ⊗ ones(m_i, n_i), term_b = ⊗ (ones - phi_i).
inline std::pair<KronTerm, KronTerm> disjunction_terms(const std::vector<Matrix>& phis) {
  KronTerm a, b;
  for (const auto& phi : phis) {
    a.factors.push_back(Matrix::Ones(phi.rows(), phi.cols()));
    b.factors.push_back(negation(phi));
  }
  return {a, b};
}

// Gram of (term_a - term_b) expanded into four Kronecker products.
inline GramRepr disjunction_gram(const KronTerm& a, const KronTerm& b) {
  if (a.factors.size() != b.factors.size())
    throw InputError("disjunction_gram: factor count mismatch");
  GramRepr g;
  GramTerm aa, ab, ba, bb;
  aa.scale = a.weight * a.weight;
  bb.scale = b.weight * b.weight;
  ab.scale = ba.scale = -a.weight * b.weight;
  ab.psd = ba.psd = false;
  for (std::size_t i = 0; i < a.factors.size(); ++i) {
    const Matrix& fa = a.factors[i];
    const Matrix& fb = b.factors[i];
    if (fa.cols() != fb.cols() || fa.rows() != fb.rows())
      throw InputError("disjunction_gram: shape mismatch on attribute " + std::to_string(i));
    g.domain.push_back(static_cast<int>(fa.cols()));
    aa.grams.push_back(fa.transpose() * fa);
    ab.grams.push_back(fa.transpose() * fb);
    ba.grams.push_back(fb.transpose() * fa);
    bb.grams.push_back(fb.transpose() * fb);
  }
  g.terms = {aa, ab, ba, bb};
  return g;
}

// (1/n)(Σ σ_i)^2 from the eigenvalues of a Gram matrix (σ_i = sqrt λ_i).
inline double svd_bound_gram(const Matrix& g) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(g, Eigen::EigenvaluesOnly);
  double s = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
    s += std::sqrt(std::max(0.0, es.eigenvalues()(i)));
  return s * s / static_cast<double>(g.rows());
}

inline double svd_bound(const Matrix& w) {
  Eigen::BDCSVD<Matrix> svd(w);
  double s = svd.singularValues().sum();
  return s * s / static_cast<double>(w.cols());
}

inline double svd_bound(const KronTerm& t) {
  double b = t.weight * t.weight;
  for (const auto& f : t.factors) b *= svd_bound(f);
  return b;
}

}  // namespace hdmm
