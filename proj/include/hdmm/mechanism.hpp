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
#include <charconv>
#include <istream>
#include <string>
#include <unordered_map>

#include "hdmm/strategy.hpp"

namespace hdmm {

// ---------------------------------------------------------------------------
// Domain configuration and vectorization.

struct Attribute {
  std::string name;
  std::vector<std::string> values;  // categorical
  std::vector<double> edges;        // binned numeric

  bool numeric() const { return !edges.empty(); }
  int size() const {
    return numeric() ? static_cast<int>(edges.size()) - 1 : static_cast<int>(values.size());
  }
};

struct DomainConfig {
  std::vector<Attribute> attributes;

  std::vector<int> shape() const {
    std::vector<int> s;
    for (const auto& a : attributes) s.push_back(a.size());
    return s;
  }

  void validate() const {
    if (attributes.empty()) throw InputError("domain config has no attributes");
    for (const auto& a : attributes) {
      if (a.numeric() == !a.values.empty())
        throw InputError("attribute '" + a.name + "' needs exactly one of values or edges");
      if (a.numeric()) {
        if (a.edges.size() < 2) throw InputError("attribute '" + a.name + "' needs at least two edges");
        for (std::size_t k = 1; k < a.edges.size(); ++k)
          if (!(a.edges[k] > a.edges[k - 1]))
            throw InputError("attribute '" + a.name + "' edges must be strictly increasing");
      } else {
        std::vector<std::string> v = a.values;
        std::sort(v.begin(), v.end());
        if (std::adjacent_find(v.begin(), v.end()) != v.end())
          throw InputError("attribute '" + a.name + "' has duplicate values");
      }
    }
  }
};

// Bins are [e_k, e_{k+1}) except the last, which is closed.
inline int bin_index(const std::vector<double>& edges, double v) {
  if (!(v >= edges.front()) || v > edges.back()) return -1;
  auto it = std::upper_bound(edges.begin(), edges.end(), v);
  int k = static_cast<int>(it - edges.begin()) - 1;
  return std::min(k, static_cast<int>(edges.size()) - 2);
}

// Splits one CSV line. Handles double-quoted fields with "" escapes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

// Row-major histogram over the configured domain, first attribute slowest.
// Extra columns are ignored; row numbers in errors count the header as row 1.
inline Vector vectorize_csv(std::istream& in, const DomainConfig& cfg) {
  cfg.validate();
  const std::vector<int> shape = cfg.shape();
  const double n_total = product_of(shape);
  if (n_total > limits().vectorize_cap)
    throw InputError("domain size " + std::to_string(static_cast<long long>(n_total)) +
                     " exceeds the vectorization cap of 2^30 cells; reduce the domain or use "
                     "a factorized reconstruction");
  Vector x = Vector::Zero(static_cast<Eigen::Index>(n_total));
  std::string line;
  if (!std::getline(in, line)) return x;
  const auto header = split_csv_line(line);
  const std::size_t d = cfg.attributes.size();
  std::vector<std::size_t> column(d);
  std::vector<std::unordered_map<std::string, int>> lookup(d);
  for (std::size_t i = 0; i < d; ++i) {
    const auto& a = cfg.attributes[i];
    auto it = std::find(header.begin(), header.end(), a.name);
    if (it == header.end()) throw InputError("dataset header lacks attribute '" + a.name + "'");
    column[i] = static_cast<std::size_t>(it - header.begin());
    for (std::size_t k = 0; k < a.values.size(); ++k) lookup[i][a.values[k]] = static_cast<int>(k);
  }
  long long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    Eigen::Index idx = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const auto& a = cfg.attributes[i];
      auto fail = [&](const std::string& why) {
        return InputError("row " + std::to_string(row) + ", attribute '" + a.name + "': " + why);
      };
      if (column[i] >= fields.size()) throw fail("missing field");
      const std::string& f = fields[column[i]];
      int k;
      if (a.numeric()) {
        double v = 0.0;
        auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
        if (ec != std::errc() || p != f.data() + f.size()) throw fail("'" + f + "' is not a number");
        k = bin_index(a.edges, v);
        if (k < 0) throw fail("value " + f + " lies outside the bin edges");
      } else {
        auto it = lookup[i].find(f);
        if (it == lookup[i].end()) throw fail("value '" + f + "' is not in the domain");
        k = it->second;
      }
      idx = idx * shape[i] + k;
    }
    x(idx) += 1.0;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Noise calibration and sampling.

enum class Mechanism { Laplace, Gaussian };

struct NoiseSpec {
  Mechanism mechanism = Mechanism::Laplace;
  double epsilon = 1.0;
  double delta = 0.0;
  double scale = 1.0;  // b for Laplace, σ for Gaussian
  std::uint64_t seed = 0;

  Norm norm() const { return mechanism == Mechanism::Laplace ? Norm::L1 : Norm::L2; }
  // Variance of one noise draw.
  double variance() const { return mechanism == Mechanism::Laplace ? 2.0 * scale * scale : scale * scale; }
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// δ achieved by Gaussian noise σ on a unit-sensitivity query set.
inline double gaussian_delta(double sigma, double eps) {
  return normal_cdf(0.5 / sigma - eps * sigma) -
         std::exp(eps) * normal_cdf(-0.5 / sigma - eps * sigma);
}

inline double classical_gaussian_sigma(double eps, double delta) {
  return std::sqrt(2.0 * std::log(1.25 / delta)) / eps;
}

// Smallest σ with gaussian_delta(σ) ≤ δ, by bisection.
inline double analytic_gaussian_sigma(double eps, double delta) {
  double lo = 1e-6, hi = 2.0 * classical_gaussian_sigma(eps, delta);
  for (int k = 0; k < 60 && gaussian_delta(hi, eps) > delta; ++k) hi *= 2.0;
  if (gaussian_delta(hi, eps) > delta || gaussian_delta(lo, eps) < delta)
    throw InputError("Gaussian calibration could not bracket the noise scale");
  for (int k = 0; k < 200 && hi - lo > 1e-15 * hi; ++k) {
    double mid = 0.5 * (lo + hi);
    (gaussian_delta(mid, eps) > delta ? lo : hi) = mid;
  }
  return hi;
}

inline NoiseSpec calibrate(Mechanism mech, double eps, double delta, std::uint64_t seed = 0) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw InputError("epsilon must be positive");
  NoiseSpec s;
  s.mechanism = mech;
  s.epsilon = eps;
  s.seed = seed;
  if (mech == Mechanism::Laplace) {
    s.scale = 1.0 / eps;
  } else {
    if (!(delta > 0.0 && delta < 1.0)) throw InputError("Gaussian noise requires delta in (0, 1)");
    s.delta = delta;
    s.scale = analytic_gaussian_sigma(eps, delta);
  }
  return s;
}

class NoiseSampler {
 public:
  NoiseSampler(const NoiseSpec& spec, std::uint64_t seed) : spec_(spec), rng_(seed) {}

  double next() {
    if (spec_.scale == 0.0) return 0.0;
    return spec_.mechanism == Mechanism::Laplace ? laplace() : spec_.scale * normal();
  }

 private:
  double laplace() {
    double u = rng_.uniform_open() - 0.5;
    double sgn = u < 0 ? -1.0 : 1.0;
    return -spec_.scale * sgn * std::log(1.0 - 2.0 * std::abs(u));
  }

  // Marsaglia polar method; the second variate is kept for the next call.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * rng_.uniform() - 1.0;
      v = 2.0 * rng_.uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  NoiseSpec spec_;
  SplitMix64 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Measure and reconstruct.

struct Measurement {
  // One block per union group; a single block for other variants.
  std::vector<Vector> y;
  double scale = 0.0;
};

inline Vector strategy_apply(const Strategy& s, const Vector& x) {
  return std::visit(
      [&](const auto& v) -> Vector {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ExplicitStrategy>) {
          if (v.a.cols() != x.size()) throw InputError("strategy/data shape mismatch");
          return v.a * x;
        } else if constexpr (std::is_same_v<T, KronStrategy>) {
          return kron_matvec(v.factors, x);
        } else if constexpr (std::is_same_v<T, MarginalStrategy>) {
          if (product_of(v.theta.domain) != static_cast<double>(x.size()))
            throw InputError("strategy/data shape mismatch");
          return marginal_apply(v.theta, x);
        } else {
          throw InputError("union strategies are applied per group");
        }
      },
      s.variant);
}

inline Measurement measure(const Strategy& s, const Vector& x, const NoiseSpec& noise) {
  const double sens = sensitivity_norm(s);
  if (std::abs(sens - 1.0) > 1e-9)
    throw InputError("strategy sensitivity is " + std::to_string(sens) + ", expected 1");
  if (s.norm != noise.norm())
    throw InputError(std::string("strategy is normalized for ") + norm_name(s.norm) +
                     " but the mechanism needs " + norm_name(noise.norm()));
  NoiseSampler rng(noise, noise.seed);
  Measurement m;
  m.scale = noise.scale;
  if (const auto* u = std::get_if<UnionKronStrategy>(&s.variant)) {
    for (const auto& g : u->groups) {
      Vector y = g.share * kron_matvec(g.factors, x);
      for (Eigen::Index r = 0; r < y.size(); ++r) y(r) += rng.next();
      m.y.push_back(std::move(y));
    }
  } else {
    Vector y = strategy_apply(s, x);
    for (Eigen::Index r = 0; r < y.size(); ++r) y(r) += rng.next();
    m.y.push_back(std::move(y));
  }
  return m;
}

// Recognizes A = [I; Θ] D: the top n×n block is a positive diagonal and the
// column scaling matches 1 + 1ᵀΘ. Returns Θ.
inline std::optional<Matrix> as_pidentity(const Matrix& a) {
  const Eigen::Index n = a.cols();
  if (a.rows() < n) return std::nullopt;
  Matrix top = a.topRows(n);
  Vector dg = top.diagonal();
  if ((dg.array() <= 0.0).any()) return std::nullopt;
  if ((top - Matrix(dg.asDiagonal())).cwiseAbs().maxCoeff() != 0.0) return std::nullopt;
  Matrix theta = a.bottomRows(a.rows() - n) * dg.cwiseInverse().asDiagonal();
  if ((theta.array() < 0.0).any()) return std::nullopt;
  Vector s = Vector::Ones(n) + theta.colwise().sum().transpose();
  if ((s.cwiseProduct(dg) - Vector::Ones(n)).cwiseAbs().maxCoeff() > 1e-9) return std::nullopt;
  return theta;
}

// A(Θ)⁺ y without forming an n×n inverse:
// x̂ = D^{-1}[v − Θᵀ(I + ΘΘᵀ)^{-1}Θ v], v = y_top + Θᵀ y_bottom.
inline Vector pidentity_solve(const Matrix& theta, const Vector& y) {
  const Eigen::Index p = theta.rows(), n = theta.cols();
  if (y.size() != n + p) throw InputError("p-Identity solve: vector length mismatch");
  Vector s = Vector::Ones(n) + theta.colwise().sum().transpose();
  Vector v = y.head(n) + theta.transpose() * y.tail(p);
  Matrix inner = Matrix::Identity(p, p);
  inner.noalias() += theta * theta.transpose();
  Vector t = inner.llt().solve(theta * v);
  return s.cwiseProduct(v - theta.transpose() * t);
}

inline std::vector<Matrix> pinv_all(const std::vector<Matrix>& fs) {
  std::vector<Matrix> out;
  for (const auto& f : fs) out.push_back(pinv(f));
  return out;
}

inline Vector apply_term(const KronTerm& t, const Vector& x) {
  return t.weight * kron_matvec(t.factors, x);
}

// Least-squares estimate of the data vector. Union strategies have no single
// estimate; use reconstruct() for them.
inline Vector estimate_data(const Strategy& s, const Measurement& m) {
  if (m.y.size() != 1) throw InputError("measurement does not match the strategy");
  const Vector& y = m.y[0];
  return std::visit(
      [&](const auto& v) -> Vector {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ExplicitStrategy>) {
          if (auto th = as_pidentity(v.a)) return pidentity_solve(*th, y);
          return pinv(v.a) * y;
        } else if constexpr (std::is_same_v<T, KronStrategy>) {
          return kron_matvec(pinv_all(v.factors), y);
        } else if constexpr (std::is_same_v<T, MarginalStrategy>) {
          MarginalVector g{v.theta.domain, v.theta.weights.cwiseAbs2()};
          return marginal_gram_apply(gram_ginverse(g), marginal_apply_transpose(v.theta, y));
        } else {
          throw InputError("union strategies have no joint data estimate");
        }
      },
      s.variant);
}

// Workload answers, one vector per workload term. Union strategies answer
// each term from its own group only (local least squares), so answers from
// different groups need not be mutually consistent.
inline std::vector<Vector> reconstruct(const Strategy& s, const Measurement& m,
                                       const ImplicitWorkload& w) {
  std::vector<Vector> out(w.terms.size());
  if (const auto* u = std::get_if<UnionKronStrategy>(&s.variant)) {
    if (m.y.size() != u->groups.size()) throw InputError("measurement does not match the strategy");
    std::vector<int> owner(w.terms.size(), -1);
    for (std::size_t j = 0; j < u->groups.size(); ++j)
      for (int t : u->groups[j].terms) {
        if (t < 0 || t >= static_cast<int>(w.terms.size()))
          throw InputError("union group names a term outside the workload");
        owner[t] = static_cast<int>(j);
      }
    for (std::size_t j = 0; j < u->groups.size(); ++j) {
      bool used = false;
      for (int o : owner) used = used || o == static_cast<int>(j);
      if (!used) continue;
      const auto& g = u->groups[j];
      Vector xj = kron_matvec(pinv_all(g.factors), m.y[j] / g.share);
      for (std::size_t t = 0; t < w.terms.size(); ++t)
        if (owner[t] == static_cast<int>(j)) out[t] = apply_term(w.terms[t], xj);
    }
    for (std::size_t t = 0; t < w.terms.size(); ++t)
      if (owner[t] < 0) throw InputError("workload term " + std::to_string(t) + " is not in any group");
    return out;
  }
  Vector xh = estimate_data(s, m);
  for (std::size_t t = 0; t < w.terms.size(); ++t) out[t] = apply_term(w.terms[t], xh);
  return out;
}

inline std::vector<Vector> true_answers(const ImplicitWorkload& w, const Vector& x) {
  std::vector<Vector> out;
  for (const auto& t : w.terms) out.push_back(apply_term(t, x));
  return out;
}

// ---------------------------------------------------------------------------
// Error reporting.

struct ErrorReport {
  double q = 0.0;
  double tse = 0.0;
  double rmse = 0.0;
};

inline ErrorReport error_from_q(double q, const NoiseSpec& noise, double m_queries) {
  ErrorReport r;
  r.q = q;
  r.tse = noise.variance() * q;
  r.rmse = std::sqrt(r.tse / m_queries);
  return r;
}

inline ErrorReport analytic_rmse(const ImplicitWorkload& w, const Strategy& s, const NoiseSpec& noise) {
  return error_from_q(unit_error(w, s), noise, w.query_count());
}

struct EmpiricalError {
  double mse = 0.0;
  double stderr_ = 0.0;
};

// Mean over seeded trials of ‖Wx − answers‖² / m.
inline EmpiricalError empirical_error(const ImplicitWorkload& w, const Strategy& s, const NoiseSpec& noise,
                                      const Vector& x, int trials) {
  if (trials < 2) throw InputError("empirical_error needs at least two trials");
  const auto truth = true_answers(w, x);
  const double m = w.query_count();
  double sum = 0.0, sum2 = 0.0;
  for (int t = 0; t < trials; ++t) {
    NoiseSpec ns = noise;
    ns.seed = split_seed(noise.seed, t);
    auto ans = reconstruct(s, measure(s, x, ns), w);
    double e = 0.0;
    for (std::size_t j = 0; j < ans.size(); ++j) e += (ans[j] - truth[j]).squaredNorm();
    e /= m;
    sum += e;
    sum2 += e * e;
  }
  EmpiricalError r;
  r.mse = sum / trials;
  double var = std::max(0.0, (sum2 - trials * r.mse * r.mse) / (trials - 1));
  r.stderr_ = std::sqrt(var / trials);
  return r;
}

}  // namespace hdmm
