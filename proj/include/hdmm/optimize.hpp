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

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <thread>

#include "hdmm/lbfgs.hpp"
#include "hdmm/strategy.hpp"

namespace hdmm {

struct OptConfig {
  int restarts = 25;
  std::uint64_t seed = 0;
  // Rows of the p-Identity parameter per attribute; empty selects the default
  // rule (1 for attributes queried only by total/identity, else n_i/16).
  std::vector<int> p_per_attr;
  int max_iters = 100;
  // Iteration cap for the Gaussian OPT0 run, which has no restarts.
  int gaussian_max_iters = 1000;
  // Relative objective improvement over 5 iterations below which a restart stops.
  double tolerance = 1e-7;
  double pd_penalty = 1e12;
  // Worker threads for restarts; 0 reads HDMM_THREADS, then hardware.
  int threads = 0;
  // Outer passes and relative stopping change for block coordinate descent.
  int kron_passes = 5;
  double kron_tolerance = 1e-4;
};

struct OptResult {
  Strategy strategy;
  double q = 0.0;
  std::optional<double> svd_bound;
  int iterations = 0;
  int restarts_used = 0;
  double seconds = 0.0;
};

inline int worker_count(const OptConfig& cfg) {
  if (cfg.threads > 0) return cfg.threads;
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("HDMM_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1) return std::min(cap, hw);
  }
  return hw;
}

// Runs fn(0..count-1) on up to `workers` threads. Results land by index, so
// the reduction order never depends on scheduling.
template <class R>
std::vector<R> run_indexed(int count, int workers, const std::function<R(int)>& fn) {
  std::vector<R> out(count);
  workers = std::max(1, std::min(workers, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (int t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          out[i] = fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// Dense objective and gradient.

inline double objective_dense(const Matrix& a, const Matrix& gram_w) {
  return trace_product(gram_pinv(a), gram_w);
}

inline Matrix gradient_dense(const Matrix& a, const Matrix& gram_w) {
  Matrix ig = gram_pinv(a);
  Matrix x = ig * gram_w * ig;
  return -2.0 * a * x;
}

// ---------------------------------------------------------------------------
// p-Identity strategies: A(Θ) = [I; Θ] D with D = diag(1 + 1ᵀΘ)^{-1}.

inline Matrix pidentity_matrix(const Matrix& theta) {
  const Eigen::Index p = theta.rows(), n = theta.cols();
  Vector s = (Vector::Ones(n) + theta.colwise().sum().transpose());
  Matrix a(n + p, n);
  a.topRows(n) = s.cwiseInverse().asDiagonal();
  a.bottomRows(p) = theta * s.cwiseInverse().asDiagonal();
  return a;
}

// tr[(AᵀA)^{-1} G] in O(p n²) using
//   (AᵀA)^{-1} = D^{-1}[I - Θᵀ(I_p + ΘΘᵀ)^{-1}Θ]D^{-1},
// with the gradient chained through D's dependence on Θ.
inline double objective_pidentity(const Matrix& theta, const Matrix& gram_w, Matrix* grad) {
  const Eigen::Index p = theta.rows(), n = theta.cols();
  Vector s = Vector::Ones(n) + theta.colwise().sum().transpose();
  Matrix gh = s.asDiagonal() * gram_w * s.asDiagonal();
  Matrix inner = Matrix::Identity(p, p);
  inner.noalias() += theta * theta.transpose();
  Eigen::LLT<Matrix> llt(inner);
  Matrix t1 = theta * gh;          // p×n
  Matrix mt1 = llt.solve(t1);      // M Θ Ĝ
  Matrix kg = gh;
  kg.noalias() -= theta.transpose() * mt1;  // K Ĝ
  const double c = kg.trace();
  if (grad) {
    Matrix kgt = kg * theta.transpose();                   // n×p
    Matrix z = kg;
    z.noalias() -= kgt * llt.solve(theta);                 // K Ĝ K
    Matrix r = theta * z;                                  // p×n
    Vector v = z.diagonal() + theta.cwiseProduct(r).colwise().sum().transpose();
    *grad = -2.0 * r;
    Vector add = 2.0 * v.cwiseQuotient(s);
    grad->rowwise() += add.transpose();
  }
  return c;
}

// Per-attribute optimized factor. `q` is tr[(AᵀA)^+ G] at unit sensitivity.
struct FactorSolution {
  Matrix a;
  Vector params;
  double q = std::numeric_limits<double>::infinity();
  int iterations = 0;
};

inline FactorSolution pidentity_run(const Matrix& gram_w, int p, const Vector& init,
                                    const OptConfig& cfg) {
  const Eigen::Index n = gram_w.rows();
  Objective fg = [&](const Vector& x, Vector& g) {
    Eigen::Map<const Matrix> th(x.data(), p, n);
    Matrix gm;
    double f = objective_pidentity(th, gram_w, &gm);
    g = Eigen::Map<const Vector>(gm.data(), gm.size());
    return f;
  };
  LbfgsOptions opt;
  opt.max_iters = cfg.max_iters;
  opt.rel_tol = cfg.tolerance;
  opt.nonnegative = true;
  // Past this the Woodbury form of the objective loses about n·θ²·eps to
  // cancellation and the search starts chasing roundoff.
  opt.upper = 1e4;
  LbfgsResult r = lbfgs_minimize(fg, init, opt);
  FactorSolution s;
  Eigen::Map<const Matrix> th(r.x.data(), p, n);
  s.a = pidentity_matrix(th);
  s.params = r.x;
  s.q = r.f;
  s.iterations = r.iterations;
  return s;
}

inline Vector pidentity_random_init(int p, Eigen::Index n, std::uint64_t seed) {
  SplitMix64 g(seed);
  Vector x(p * n);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = g.uniform() / p;
  return x;
}

// Best of: optional warm start, Θ = 0, and random restarts.
inline FactorSolution opt0_laplace_factor(const Matrix& gram_w, int p, const OptConfig& cfg,
                                          std::uint64_t seed, const Vector* warm, int restarts) {
  const Eigen::Index n = gram_w.rows();
  std::vector<Vector> inits;
  if (warm) inits.push_back(*warm);
  inits.push_back(Vector::Zero(p * n));
  for (int r = 1; r < restarts; ++r) inits.push_back(pidentity_random_init(p, n, split_seed(seed, r)));
  auto runs = run_indexed<FactorSolution>(static_cast<int>(inits.size()), worker_count(cfg),
                                          [&](int i) { return pidentity_run(gram_w, p, inits[i], cfg); });
  int best = 0;
  for (int i = 1; i < static_cast<int>(runs.size()); ++i)
    if (runs[i].q < runs[best].q) best = i;
  return runs[best];
}

inline OptResult opt0_laplace(const Matrix& gram_w, int p, const OptConfig& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  if (p < 1) throw InputError("p must be positive");
  FactorSolution s = opt0_laplace_factor(gram_w, p, cfg, cfg.seed, nullptr, cfg.restarts);
  OptResult r;
  r.strategy.norm = Norm::L1;
  r.strategy.variant = ExplicitStrategy{s.a};
  r.q = s.q;
  r.strategy.unit_error = s.q;
  r.strategy.provenance = {"opt0", cfg.seed, cfg.restarts};
  r.svd_bound = svd_bound_gram(gram_w);
  r.iterations = s.iterations;
  r.restarts_used = cfg.restarts;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------------------
// Gaussian OPT₀: minimize tr[X^{-1} G] over correlation matrices X ≻ 0. The
// free parameters are the strictly lower triangular entries of X.

inline Matrix ridge_if_singular(const Matrix& gram_w) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram_w, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  if (lo > 1e-12 * hi) return gram_w;
  const Eigen::Index n = gram_w.rows();
  return gram_w + (1e-8 * gram_w.trace() / n) * Matrix::Identity(n, n);
}

inline Vector correlation_params(const Matrix& x) {
  const Eigen::Index n = x.rows();
  Vector v(n * (n - 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j + 1; i < n; ++i) v(k++) = x(i, j);
  return v;
}

inline Matrix correlation_from_params(const Vector& v, Eigen::Index n) {
  Matrix x = Matrix::Identity(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j + 1; i < n; ++i) x(i, j) = x(j, i) = v(k++);
  return x;
}

// X = P √Λ Pᵀ from the eigendecomposition of G, rescaled to unit diagonal.
inline Matrix gaussian_initial_x(const Matrix& gram_w) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram_w);
  Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Matrix x = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
  Vector d = x.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  return d.asDiagonal() * x * d.asDiagonal();
}

inline FactorSolution opt0_gaussian_factor(const Matrix& gram_in, const OptConfig& cfg,
                                           const Matrix* warm_x) {
  const Eigen::Index n = gram_in.rows();
  const Matrix gram_w = ridge_if_singular(gram_in);
  FactorSolution s;
  if (n == 1) {
    s.a = Matrix::Ones(1, 1);
    s.q = gram_in(0, 0);
    return s;
  }
  Objective fg = [&](const Vector& v, Vector& g) {
    Matrix x = correlation_from_params(v, n);
    Eigen::LLT<Matrix> llt(x);
    if (llt.info() != Eigen::Success || !(llt.matrixL().toDenseMatrix().diagonal().array() > 0).all()) {
      g = Vector::Zero(v.size());
      return cfg.pd_penalty;
    }
    Matrix xi = llt.solve(Matrix::Identity(n, n));
    Matrix xg = xi * gram_w;
    double f = xg.trace();
    Matrix grad = -2.0 * (xg * xi);
    g = correlation_params(grad);
    return f;
  };
  LbfgsOptions opt;
  opt.max_iters = cfg.gaussian_max_iters;
  opt.rel_tol = cfg.tolerance;
  Matrix x0 = warm_x ? *warm_x : gaussian_initial_x(gram_w);
  LbfgsResult r = lbfgs_minimize(fg, correlation_params(x0), opt);
  Matrix x = correlation_from_params(r.x, n);
  Eigen::LLT<Matrix> llt(x);
  if (llt.info() != Eigen::Success || r.f >= cfg.pd_penalty)
    throw OptimizationError("Gaussian OPT0 ended at a matrix that is not positive definite");
  s.a = llt.matrixL().transpose();
  s.params = r.x;
  s.q = trace_product(llt.solve(Matrix::Identity(n, n)), gram_in);
  s.iterations = r.iterations;
  return s;
}

inline OptResult opt0_gaussian(const Matrix& gram_w, const OptConfig& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  FactorSolution s = opt0_gaussian_factor(gram_w, cfg, nullptr);
  OptResult r;
  r.strategy.norm = Norm::L2;
  r.strategy.variant = ExplicitStrategy{s.a};
  r.q = s.q;
  r.strategy.unit_error = s.q;
  r.strategy.provenance = {"opt0", cfg.seed, 1};
  r.svd_bound = svd_bound_gram(gram_w);
  r.iterations = s.iterations;
  r.restarts_used = 1;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------------------
// OPT⊗.

inline std::vector<int> default_p(const ImplicitWorkload& w) {
  std::vector<int> p(w.domain.size());
  for (std::size_t i = 0; i < w.domain.size(); ++i) {
    bool simple = true;
    for (const auto& t : w.terms)
      if (!is_total(t.factors[i]) && !is_identity(t.factors[i])) simple = false;
    p[i] = simple ? 1 : std::max(1, w.domain[i] / 16);
  }
  return p;
}

inline std::vector<int> resolve_p(const ImplicitWorkload& w, const std::vector<int>& p_vec) {
  if (p_vec.empty()) return default_p(w);
  if (p_vec.size() != w.domain.size())
    throw InputError("p_per_attr must list one value per attribute");
  for (int p : p_vec)
    if (p < 1) throw InputError("p values must be positive");
  return p_vec;
}

inline FactorSolution solve_factor(const Matrix& gram_w, int p, Norm norm, const OptConfig& cfg,
                                   std::uint64_t seed, const FactorSolution* warm, int restarts) {
  if (norm == Norm::L1)
    return opt0_laplace_factor(gram_w, p, cfg, seed, warm ? &warm->params : nullptr, restarts);
  if (warm && warm->params.size() > 0) {
    Matrix wx = warm->a.transpose() * warm->a;
    FactorSolution from_warm = opt0_gaussian_factor(gram_w, cfg, &wx);
    return from_warm;
  }
  return opt0_gaussian_factor(gram_w, cfg, nullptr);
}

// Q of a Kronecker strategy with unit-norm factors against a union workload.
inline double kron_q(const GramRepr& g, const std::vector<FactorSolution>& fs) {
  double acc = 0.0;
  for (const auto& t : g.terms) {
    double p = t.scale;
    for (std::size_t i = 0; i < fs.size(); ++i)
      p *= trace_product(gram_pinv(fs[i].a), t.grams[i]);
    acc += p;
  }
  return acc;
}

inline OptResult finish_kron(const std::vector<FactorSolution>& fs, double q, Norm norm,
                             const OptConfig& cfg, const GramRepr& g, int iters,
                             std::chrono::steady_clock::time_point t0) {
  OptResult r;
  KronStrategy ks;
  for (const auto& f : fs) ks.factors.push_back(f.a);
  r.strategy.norm = norm;
  r.strategy.variant = std::move(ks);
  r.q = q;
  r.strategy.unit_error = q;
  r.strategy.provenance = {"kron", cfg.seed, cfg.restarts};
  if (g.terms.size() == 1) {
    double b = g.terms[0].scale;
    for (const auto& gi : g.terms[0].grams) b *= svd_bound_gram(gi);
    r.svd_bound = b;
  }
  r.iterations = iters;
  r.restarts_used = cfg.restarts;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// Block coordinate descent over the factors, starting from `fs`. Each block
// step re-solves one factor against the surrogate Gram Σ_j c_j² G_i^(j); the
// current factor is always among the candidates, so Q never increases.
inline double kron_coordinate_descent(const GramRepr& g, const std::vector<int>& p, Norm norm,
                                      const OptConfig& cfg, std::uint64_t seed,
                                      std::vector<FactorSolution>& fs, int inner_restarts,
                                      std::vector<double>* trace = nullptr) {
  const std::size_t d = g.domain.size();
  double q = kron_q(g, fs);
  if (trace) trace->push_back(q);
  for (int pass = 0; pass < cfg.kron_passes; ++pass) {
    const double before = q;
    for (std::size_t i = 0; i < d; ++i) {
      const Eigen::Index n = g.domain[i];
      Matrix surrogate = Matrix::Zero(n, n);
      for (const auto& t : g.terms) {
        double c2 = t.scale;
        for (std::size_t k = 0; k < d; ++k)
          if (k != i) c2 *= trace_product(gram_pinv(fs[k].a), t.grams[k]);
        surrogate += c2 * t.grams[i];
      }
      FactorSolution cand =
          solve_factor(surrogate, p[i], norm, cfg, split_seed(seed, pass * d + i), &fs[i], inner_restarts);
      FactorSolution keep = fs[i];
      fs[i] = cand;
      double qn = kron_q(g, fs);
      if (qn <= q)
        q = qn;
      else
        fs[i] = keep;
    }
    if (trace) trace->push_back(q);
    if (before - q <= cfg.kron_tolerance * q) break;
  }
  return q;
}

inline OptResult opt_kron(const ImplicitWorkload& w, const std::vector<int>& p_vec,
                          const OptConfig& cfg, Norm norm) {
  auto t0 = std::chrono::steady_clock::now();
  w.validate();
  if (w.terms.empty()) throw InputError("opt_kron: workload has no terms");
  const std::vector<int> p = resolve_p(w, p_vec);
  const GramRepr g = gram(w);
  const std::size_t d = w.domain.size();
  std::vector<FactorSolution> fs(d);
  int iters = 0;
  if (g.terms.size() == 1) {
    for (std::size_t i = 0; i < d; ++i) {
      fs[i] = solve_factor(g.terms[0].grams[i], p[i], norm, cfg, split_seed(cfg.seed, i), nullptr,
                           cfg.restarts);
      iters += fs[i].iterations;
    }
    return finish_kron(fs, kron_q(g, fs), norm, cfg, g, iters, t0);
  }
  // Two starting points: identity factors, and factors optimized for the
  // unweighted sum of the per-term Grams from a random start.
  const int inner = std::max(1, std::min(cfg.restarts, 3));
  std::vector<FactorSolution> ident(d), rnd(d);
  for (std::size_t i = 0; i < d; ++i) {
    const Eigen::Index n = w.domain[i];
    ident[i].a = norm == Norm::L1 ? pidentity_matrix(Matrix::Zero(p[i], n)) : Matrix::Identity(n, n);
    ident[i].params = norm == Norm::L1 ? Vector::Zero(p[i] * n) : Vector();
    if (norm == Norm::L1) {
      rnd[i].params = pidentity_random_init(p[i], n, split_seed(cfg.seed ^ 0x5bd1e995ULL, i));
      rnd[i].a = pidentity_matrix(Eigen::Map<const Matrix>(rnd[i].params.data(), p[i], n));
    } else {
      Matrix sum = Matrix::Zero(n, n);
      for (const auto& t : g.terms) sum += t.grams[i] / std::max(t.grams[i].trace(), 1e-300);
      rnd[i] = opt0_gaussian_factor(sum, cfg, nullptr);
    }
  }
  double qi = kron_coordinate_descent(g, p, norm, cfg, cfg.seed, ident, inner);
  double qr = kron_coordinate_descent(g, p, norm, cfg, split_seed(cfg.seed, 977), rnd, inner);
  if (qr < qi) return finish_kron(rnd, qr, norm, cfg, g, iters, t0);
  return finish_kron(ident, qi, norm, cfg, g, iters, t0);
}

// ---------------------------------------------------------------------------
// OPT₊.

// Budget shares minimizing Σ E_j / a_j²: a ∝ E^{1/3} with Σa = 1 (L1), or
// a ∝ E^{1/4} with Σa² = 1 (L2).
inline std::vector<double> budget_shares(const std::vector<double>& e, Norm norm) {
  std::vector<double> a(e.size());
  double z = 0.0;
  for (std::size_t j = 0; j < e.size(); ++j) {
    a[j] = norm == Norm::L1 ? std::cbrt(2.0 * e[j]) : std::pow(e[j], 0.25);
    z += norm == Norm::L1 ? a[j] : a[j] * a[j];
  }
  if (norm == Norm::L2) z = std::sqrt(z);
  for (auto& x : a) x /= z;
  return a;
}

inline OptResult opt_plus(const ImplicitWorkload& w, std::vector<std::vector<int>> groups,
                          const std::vector<int>& p_vec, const OptConfig& cfg, Norm norm) {
  auto t0 = std::chrono::steady_clock::now();
  w.validate();
  if (groups.empty())
    for (std::size_t t = 0; t < w.terms.size(); ++t) groups.push_back({static_cast<int>(t)});
  std::vector<int> seen(w.terms.size(), 0);
  for (const auto& grp : groups) {
    if (grp.empty()) throw InputError("opt_plus: empty group");
    for (int t : grp) {
      if (t < 0 || t >= static_cast<int>(w.terms.size()))
        throw InputError("opt_plus: group names a term out of range");
      seen[t]++;
    }
  }
  for (int s : seen)
    if (s != 1) throw InputError("opt_plus: groups must partition the workload terms");
  std::vector<double> e;
  UnionKronStrategy u;
  int iters = 0;
  for (std::size_t j = 0; j < groups.size(); ++j) {
    ImplicitWorkload sub{w.domain, {}};
    for (int t : groups[j]) sub.terms.push_back(w.terms[t]);
    OptConfig sub_cfg = cfg;
    sub_cfg.seed = j == 0 ? cfg.seed : split_seed(cfg.seed, 1000 + j);
    // With no explicit p, the rule is applied to each group's own terms.
    OptResult r = opt_kron(sub, p_vec, sub_cfg, norm);
    iters += r.iterations;
    e.push_back(r.q);
    UnionGroup grp;
    grp.factors = std::get<KronStrategy>(r.strategy.variant).factors;
    grp.terms = groups[j];
    u.groups.push_back(std::move(grp));
  }
  std::vector<double> a = budget_shares(e, norm);
  double q = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    u.groups[j].share = a[j];
    q += e[j] / (a[j] * a[j]);
  }
  OptResult r;
  r.strategy.norm = norm;
  r.strategy.variant = std::move(u);
  r.q = q;
  r.strategy.unit_error = q;
  r.strategy.provenance = {"plus", cfg.seed, cfg.restarts};
  r.iterations = iters;
  r.restarts_used = cfg.restarts;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------------------
// OPT_M.

struct MarginalObjective {
  Vector kappa_w, mult, c;
  std::vector<int> domain;
  Norm norm;

  // θ = raw² with θ(top) = raw(top)² + 1e-8.
  Vector theta_of(const Vector& raw) const {
    Vector th = raw.cwiseAbs2();
    th(th.size() - 1) += 1e-8;
    return th;
  }

  double q_of_theta(const Vector& th, Vector* grad_theta) const {
    MarginalVector u{domain, th.cwiseAbs2()};
    Vector gu;
    double f = marginal_trace_error(kappa_w, u, mult, grad_theta ? &gu : nullptr);
    if (!std::isfinite(f)) {
      if (grad_theta) *grad_theta = Vector::Zero(th.size());
      return f;
    }
    double s = norm == Norm::L1 ? th.sum() : th.norm();
    if (grad_theta) {
      Vector ds = norm == Norm::L1 ? Vector::Ones(th.size()) : Vector(th / std::max(s, 1e-300));
      *grad_theta = 2.0 * s * f * ds + s * s * gu.cwiseProduct(2.0 * th);
    }
    return s * s * f;
  }

  double operator()(const Vector& raw, Vector& g) const {
    Vector th = theta_of(raw);
    Vector gt;
    double q = q_of_theta(th, &gt);
    g = gt.cwiseProduct(2.0 * raw);
    return q;
  }
};

inline OptResult opt_marginals(const ImplicitWorkload& w, const OptConfig& cfg, Norm norm) {
  auto t0 = std::chrono::steady_clock::now();
  w.validate();
  check_marginal_dims(w.domain);
  const MarginalVector wt = marginal_approx(gram(w));
  MarginalObjective obj{eigenvalues(wt), eigen_multiplicities(w.domain),
                        characteristic_vector(w.domain), w.domain, norm};
  const Eigen::Index m = static_cast<Eigen::Index>(wt.masks());
  OptResult r;
  r.strategy.norm = norm;
  r.strategy.provenance = {"marginal", cfg.seed, cfg.restarts};
  bool all_nonneg = (wt.weights.array() >= 0.0).all();
  if (all_nonneg) r.svd_bound = svdb_marginal(wt);

  auto finish = [&](Vector th, int iters, int restarts) {
    th /= norm == Norm::L1 ? th.sum() : th.norm();
    r.strategy.variant = MarginalStrategy{MarginalVector{w.domain, th}};
    r.q = obj.q_of_theta(th, nullptr);
    r.strategy.unit_error = r.q;
    r.iterations = iters;
    r.restarts_used = restarts;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  };

  if (norm == Norm::L2 && all_nonneg) {
    if (auto th = closed_form_theta(wt)) {
      double q = obj.q_of_theta(th->weights, nullptr);
      if (std::isfinite(q)) return finish(th->weights, 0, 0);
    }
  }

  // Restart 0 starts from the workload's own marginal weights.
  std::vector<Vector> inits;
  {
    Vector th = wt.weights.cwiseMax(0.0).cwiseSqrt();
    double top = th.maxCoeff();
    th.array() += 1e-3 * (top > 0 ? top : 1.0);
    inits.push_back(th.cwiseSqrt());
  }
  for (int k = 1; k < cfg.restarts; ++k) {
    SplitMix64 g(split_seed(cfg.seed, k));
    Vector raw(m);
    for (Eigen::Index a = 0; a < m; ++a) raw(a) = g.uniform();
    inits.push_back(raw);
  }
  LbfgsOptions opt;
  opt.max_iters = std::max(cfg.max_iters, 1000);
  opt.rel_tol = cfg.tolerance;
  Objective fg = [&](const Vector& x, Vector& g) { return obj(x, g); };
  auto runs = run_indexed<LbfgsResult>(static_cast<int>(inits.size()), worker_count(cfg),
                                       [&](int i) { return lbfgs_minimize(fg, inits[i], opt); });
  int best = 0;
  for (int i = 1; i < static_cast<int>(runs.size()); ++i)
    if (runs[i].f < runs[best].f) best = i;
  Vector th = obj.theta_of(runs[best].x);
  double q = obj.q_of_theta(th, nullptr);
  if (!std::isfinite(q)) {
    th(m - 1) += 1e-4 * th.maxCoeff();
    q = obj.q_of_theta(th, nullptr);
    if (!std::isfinite(q)) throw OptimizationError("OPT_M: strategy does not support the workload");
  }
  // Drop negligible masks when the workload stays supported and Q does not grow.
  Vector pruned = th;
  const double cut = 1e-6 * th.maxCoeff();
  for (Eigen::Index a = 0; a < m; ++a)
    if (pruned(a) < cut) pruned(a) = 0.0;
  double qp = obj.q_of_theta(pruned, nullptr);
  if (std::isfinite(qp) && qp <= q * (1.0 + 1e-9)) th = pruned;
  return finish(th, runs[best].iterations, cfg.restarts);
}

// ---------------------------------------------------------------------------
// Baselines and OPT_HDMM.

inline Strategy identity_strategy(const ImplicitWorkload& w, Norm norm) {
  KronStrategy k;
  for (int n : w.domain) k.factors.push_back(Matrix::Identity(n, n));
  Strategy s;
  s.norm = norm;
  s.variant = std::move(k);
  s.provenance = {"identity", 0, 0};
  s.unit_error = identity_unit_error(gram(w));
  return s;
}

// The workload itself as a strategy, normalized to unit sensitivity. Marginal
// workloads become marginal strategies; other unions fall back to an explicit
// matrix when small, else to per-term groups with local least squares.
inline Strategy workload_strategy(const ImplicitWorkload& w, Norm norm) {
  Strategy s;
  s.norm = norm;
  s.provenance = {"workload", 0, 0};
  if (w.terms.size() == 1) {
    KronStrategy k;
    for (const auto& f : w.terms[0].factors) {
      double c = column_norm(f, norm);
      k.factors.push_back(c > 0 ? Matrix(f / c) : f);
    }
    s.variant = std::move(k);
  } else if (is_marginal_workload(w) && w.dims() <= limits().max_marginal_dims) {
    const int d = w.dims();
    Vector th = Vector::Zero(std::size_t{1} << d);
    for (const auto& t : w.terms) {
      std::size_t a = 0;
      for (int i = 0; i < d; ++i)
        if (!is_total(t.factors[i]) || w.domain[i] == 1) a |= std::size_t{1} << (d - 1 - i);
      th(a) = std::sqrt(th(a) * th(a) + t.weight * t.weight);
    }
    th /= norm == Norm::L1 ? th.sum() : th.norm();
    s.variant = MarginalStrategy{MarginalVector{w.domain, th}};
  } else if (w.query_count() * w.domain_size() <= limits().materialize_cap &&
             w.domain_size() <= static_cast<double>(limits().support_check_max_n)) {
    Matrix a = materialize_explicit(w);
    double c = column_norm(a, norm);
    s.variant = ExplicitStrategy{c > 0 ? Matrix(a / c) : a};
  } else {
    UnionKronStrategy u;
    std::vector<double> raw;
    for (std::size_t j = 0; j < w.terms.size(); ++j) {
      UnionGroup g;
      double c = 1.0;
      for (const auto& f : w.terms[j].factors) {
        double fc = column_norm(f, norm);
        c *= fc;
        g.factors.push_back(fc > 0 ? Matrix(f / fc) : f);
      }
      g.terms = {static_cast<int>(j)};
      raw.push_back(w.terms[j].weight * c);
      u.groups.push_back(std::move(g));
    }
    double z = 0.0;
    for (double x : raw) z += norm == Norm::L1 ? x : x * x;
    if (norm == Norm::L2) z = std::sqrt(z);
    for (std::size_t j = 0; j < raw.size(); ++j) u.groups[j].share = raw[j] / z;
    s.variant = std::move(u);
  }
  s.unit_error = unit_error(w, s);
  return s;
}

struct Candidate {
  std::string op;
  std::optional<OptResult> result;
  std::string error;
};

struct HdmmResult {
  OptResult best;
  std::vector<Candidate> candidates;
};

inline const std::vector<std::string>& all_operators() {
  static const std::vector<std::string> ops{"kron", "plus", "marginal"};
  return ops;
}

// Runs the requested operators (ordered kron, plus, marginal, opt0) plus the
// identity and workload baselines; the lowest Q wins, earlier entries win ties.
inline HdmmResult opt_hdmm(const ImplicitWorkload& w, const OptConfig& cfg, Norm norm,
                           const std::vector<std::string>& operators = all_operators()) {
  auto t0 = std::chrono::steady_clock::now();
  w.validate();
  std::set<std::string> want(operators.begin(), operators.end());
  for (const auto& op : want)
    if (op != "kron" && op != "plus" && op != "marginal" && op != "opt0")
      throw InputError("unknown operator '" + op + "'");
  if (want.count("opt0") && w.domain_size() * w.domain_size() > limits().materialize_cap)
    throw InputError("opt0 needs the explicit N x N Gram; N = " +
                     std::to_string(static_cast<long long>(w.domain_size())) + " exceeds the size cap");
  HdmmResult out;
  const std::vector<int> p = resolve_p(w, cfg.p_per_attr);
  auto attempt = [&](const std::string& op, const std::function<OptResult()>& fn) {
    Candidate c{op, std::nullopt, ""};
    try {
      c.result = fn();
    } catch (const Error& e) {
      c.error = e.what();
    }
    out.candidates.push_back(std::move(c));
  };
  if (want.count("kron")) attempt("kron", [&] { return opt_kron(w, p, cfg, norm); });
  if (want.count("plus")) attempt("plus", [&] { return opt_plus(w, {}, cfg.p_per_attr, cfg, norm); });
  if (want.count("marginal")) attempt("marginal", [&] { return opt_marginals(w, cfg, norm); });
  if (want.count("opt0"))
    attempt("opt0", [&] {
      Matrix g = gram_dense(gram(w));
      int p0 = std::max(1, static_cast<int>(w.domain_size()) / 16);
      OptResult r = norm == Norm::L1 ? opt0_laplace(g, p0, cfg) : opt0_gaussian(g, cfg);
      return r;
    });
  bool any = false;
  for (const auto& c : out.candidates) any = any || c.result.has_value();
  if (!any) {
    std::string msg = "all optimization operators failed:";
    for (const auto& c : out.candidates) msg += " [" + c.op + ": " + c.error + "]";
    throw OptimizationError(msg);
  }
  attempt("identity", [&] {
    OptResult r;
    r.strategy = identity_strategy(w, norm);
    r.q = r.strategy.unit_error;
    return r;
  });
  attempt("workload", [&] {
    OptResult r;
    r.strategy = workload_strategy(w, norm);
    r.q = r.strategy.unit_error;
    return r;
  });
  const Candidate* best = nullptr;
  for (const auto& c : out.candidates)
    if (c.result && (!best || c.result->q < best->result->q)) best = &c;
  out.best = *best->result;
  if (!out.best.svd_bound) {
    try {
      out.best.svd_bound = svd_bound(w);
    } catch (const Error&) {
    }
  }
  out.best.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace hdmm
