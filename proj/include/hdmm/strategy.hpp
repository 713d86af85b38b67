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
#include <string>
#include <variant>
#include <vector>

#include "hdmm/marginals.hpp"

namespace hdmm {

class SupportError : public InputError {
 public:
  using InputError::InputError;
};

struct ExplicitStrategy {
  Matrix a;
};

struct KronStrategy {
  std::vector<Matrix> factors;
};

// One budget-weighted Kronecker product answering the workload terms listed
// in `terms`.
struct UnionGroup {
  double share = 1.0;
  std::vector<Matrix> factors;
  std::vector<int> terms;
};

struct UnionKronStrategy {
  std::vector<UnionGroup> groups;
};

struct MarginalStrategy {
  MarginalVector theta;
};

struct Provenance {
  std::string op;
  std::uint64_t seed = 0;
  int restarts = 0;
};

struct Strategy {
  Norm norm = Norm::L1;
  std::variant<ExplicitStrategy, KronStrategy, UnionKronStrategy, MarginalStrategy> variant;
  double unit_error = 0.0;
  Provenance provenance;

  const char* kind_name() const {
    switch (variant.index()) {
      case 0: return "explicit";
      case 1: return "kron";
      case 2: return "union";
      default: return "marginal";
    }
  }
};

inline double kron_norm(const std::vector<Matrix>& factors, Norm k) {
  double s = 1.0;
  for (const auto& f : factors) s *= column_norm(f, k);
  return s;
}

inline double sensitivity_norm(const Strategy& s) {
  const Norm k = s.norm;
  return std::visit(
      [k](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ExplicitStrategy>) {
          return column_norm(v.a, k);
        } else if constexpr (std::is_same_v<T, KronStrategy>) {
          return kron_norm(v.factors, k);
        } else if constexpr (std::is_same_v<T, UnionKronStrategy>) {
          double acc = 0.0;
          for (const auto& g : v.groups) {
            double t = g.share * kron_norm(g.factors, k);
            acc += k == Norm::L1 ? t : t * t;
          }
          return k == Norm::L1 ? acc : std::sqrt(acc);
        } else {
          return k == Norm::L1 ? v.theta.weights.cwiseAbs().sum() : v.theta.weights.norm();
        }
      },
      s.variant);
}

inline Eigen::Index strategy_columns(const Strategy& s) {
  return std::visit(
      [](const auto& v) -> Eigen::Index {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ExplicitStrategy>) {
          return v.a.cols();
        } else if constexpr (std::is_same_v<T, KronStrategy>) {
          Eigen::Index n = 1;
          for (const auto& f : v.factors) n *= f.cols();
          return n;
        } else if constexpr (std::is_same_v<T, UnionKronStrategy>) {
          Eigen::Index n = 1;
          for (const auto& f : v.groups.at(0).factors) n *= f.cols();
          return n;
        } else {
          return static_cast<Eigen::Index>(product_of(v.theta.domain));
        }
      },
      s.variant);
}

// Per-factor pieces of the error of a Kronecker strategy. For each factor the
// pseudo-inverse of its Gram is computed once.
struct KronErrorCache {
  std::vector<Matrix> inv_gram;
  std::vector<Matrix> projector;

  explicit KronErrorCache(const std::vector<Matrix>& factors) {
    for (const auto& a : factors) {
      Matrix proj;
      inv_gram.push_back(gram_pinv(a, &proj));
      projector.push_back(std::move(proj));
    }
  }

  // Σ_j scale_j ∏_i tr[(A_iᵀA_i)^+ G_i^(j)], checking that each PSD factor
  // Gram lies in the row space of A_i.
  double trace_error(const GramRepr& g, bool check_support = true) const {
    if (g.domain.size() != inv_gram.size())
      throw InputError("strategy and workload have different attribute counts");
    double acc = 0.0;
    for (std::size_t j = 0; j < g.terms.size(); ++j) {
      const auto& t = g.terms[j];
      double p = t.scale;
      for (std::size_t i = 0; i < inv_gram.size(); ++i) {
        const Matrix& gi = t.grams[i];
        if (gi.rows() != inv_gram[i].rows())
          throw InputError("strategy factor " + std::to_string(i) + " has the wrong column count");
        if (check_support && t.psd) {
          double tr = gi.trace();
          double leak = tr - trace_product(gi, projector[i]);
          if (leak > 1e-6 * std::max(tr, 1e-300))
            throw SupportError("strategy factor " + std::to_string(i) +
                               " does not support workload term " + std::to_string(j));
        }
        p *= trace_product(inv_gram[i], gi);
      }
      acc += p;
    }
    return acc;
  }
};

inline double explicit_trace_error(const Matrix& a, const Matrix& gram_w, bool check_support) {
  Matrix proj;
  Matrix ig = gram_pinv(a, &proj);
  if (check_support && static_cast<std::size_t>(a.cols()) <= limits().support_check_max_n) {
    double tr = gram_w.trace();
    double leak = tr - trace_product(gram_w, proj);
    if (leak > 1e-6 * std::max(tr, 1e-300))
      throw SupportError("explicit strategy does not support the workload");
  }
  return trace_product(ig, gram_w);
}

// Unit-noise error Q = ‖A‖² tr[(AᵀA)^+ WᵀW] for strategies whose error is a
// function of the workload Gram alone.
inline double unit_error(const GramRepr& g, const Strategy& s) {
  const double sens = sensitivity_norm(s);
  const double s2 = sens * sens;
  return std::visit(
      [&](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ExplicitStrategy>) {
          return s2 * explicit_trace_error(v.a, gram_dense(g), true);
        } else if constexpr (std::is_same_v<T, KronStrategy>) {
          return s2 * KronErrorCache(v.factors).trace_error(g);
        } else if constexpr (std::is_same_v<T, UnionKronStrategy>) {
          throw InputError("union strategies need the workload term grouping");
        } else {
          MarginalVector w = marginal_approx(g);
          MarginalVector u{v.theta.domain, v.theta.weights.cwiseAbs2()};
          double f = marginal_trace_error(eigenvalues(w), u, eigen_multiplicities(u.domain));
          if (!std::isfinite(f)) throw SupportError("marginal strategy does not support the workload");
          return s2 * f;
        }
      },
      s.variant);
}

inline GramRepr gram_of_terms(const ImplicitWorkload& w, const std::vector<int>& terms) {
  ImplicitWorkload sub{w.domain, {}};
  for (int t : terms) sub.terms.push_back(w.terms.at(t));
  return gram(sub);
}

// Error of local least squares: group j answers its terms from y_j / a_j.
inline double union_unit_error(const ImplicitWorkload& w, const UnionKronStrategy& u, Norm k) {
  std::vector<int> covered(w.terms.size(), 0);
  double acc = 0.0, sens = 0.0;
  for (const auto& g : u.groups) {
    if (!(g.share > 0.0)) throw InputError("union group share must be positive");
    for (int t : g.terms) {
      if (t < 0 || t >= static_cast<int>(w.terms.size()))
        throw InputError("union group names term " + std::to_string(t) + " out of range");
      covered[t]++;
    }
    double e = KronErrorCache(g.factors).trace_error(gram_of_terms(w, g.terms));
    acc += e / (g.share * g.share);
    double t = g.share * kron_norm(g.factors, k);
    sens += k == Norm::L1 ? t : t * t;
  }
  for (std::size_t t = 0; t < covered.size(); ++t)
    if (covered[t] != 1)
      throw SupportError("workload term " + std::to_string(t) +
                         " must belong to exactly one union group");
  if (k == Norm::L2) sens = std::sqrt(sens);
  return sens * sens * acc;
}

inline double unit_error(const ImplicitWorkload& w, const Strategy& s) {
  if (auto* u = std::get_if<UnionKronStrategy>(&s.variant)) return union_unit_error(w, *u, s.norm);
  return unit_error(gram(w), s);
}

// Measuring the identity: Q = ‖W‖_F².
inline double identity_unit_error(const GramRepr& g) { return gram_trace(g); }

inline std::optional<double> workload_rank(const ImplicitWorkload& w) {
  if (w.terms.size() == 1) {
    const auto& t = w.terms[0];
    if (t.weight == 0.0) return 0.0;
    double r = 1.0;
    for (const auto& f : t.factors) r *= numeric_rank_psd(f.transpose() * f);
    return r;
  }
  if (is_marginal_workload(w) && w.dims() <= limits().max_marginal_dims)
    return marginal_rank(marginal_approx(gram(w)));
  if (w.domain_size() <= static_cast<double>(limits().support_check_max_n))
    return numeric_rank_psd(gram_dense(gram(w)));
  return std::nullopt;
}

// Measuring the workload itself: Q = ‖W‖² rank(W).
inline std::optional<double> workload_unit_error(const ImplicitWorkload& w, Norm k) {
  auto r = workload_rank(w);
  if (!r) return std::nullopt;
  double s = sensitivity_norm(w, k);
  return s * s * *r;
}

inline std::optional<double> svd_bound(const ImplicitWorkload& w) {
  if (w.terms.size() == 1) return svd_bound(w.terms[0]);
  if (is_marginal_workload(w) && w.dims() <= limits().max_marginal_dims)
    return svdb_marginal(marginal_approx(gram(w)));
  if (w.domain_size() <= 1024.0) return svd_bound_gram(gram_dense(gram(w)));
  return std::nullopt;
}

}  // namespace hdmm
