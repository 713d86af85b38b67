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

// Property checks shared by the unit tests and the acceptance binary. Each
// returns a verdict plus a one-line detail for the report.

#pragma once

#include <sstream>
#include <string>

#include "hdmm/hdmm.hpp"

namespace hdmm::props {

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double lo = -1.0) {
  SplitMix64 g(seed);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = lo + (1.0 - lo) * g.uniform();
  return m;
}

inline Vector random_vector(Eigen::Index n, std::uint64_t seed, double lo = -1.0) {
  return random_matrix(n, 1, seed, lo).col(0);
}

inline double max_rel(const Matrix& a, const Matrix& b) {
  double s = std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
  return s == 0.0 ? 0.0 : (a - b).cwiseAbs().maxCoeff() / s;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// Kronecker identities, norms, and kron_matvec against dense products.
inline Verdict kronecker_identities() {
  Verdict v;
  const Matrix a = random_matrix(3, 3, 1), b = random_matrix(4, 2, 2);
  const Matrix c = random_matrix(3, 2, 3), d = random_matrix(2, 5, 4);
  v.require(max_rel(pinv(kron(a, b)), kron(pinv(a), pinv(b))) < 1e-8, "pseudo-inverse identity");
  v.require(max_rel(kron(a, b).transpose(), kron(a.transpose(), b.transpose())) < 1e-12, "transpose identity");
  v.require(max_rel(kron(a * c, b * d), kron(a, b) * kron(c, d)) < 1e-12, "mixed product identity");
  const std::vector<Block> blocks{Block::identity(), Block::total(), Block::prefix(), Block::all_range(),
                                  Block::width_range(2)};
  for (int n1 : {2, 5, 32})
    for (int n2 : {3, 7})
      for (const auto& b1 : blocks)
        for (const auto& b2 : blocks) {
          Matrix m1 = materialize_block(b1, n1), m2 = materialize_block(b2, n2);
          Matrix k = kron(m1, m2);
          for (Norm nk : {Norm::L1, Norm::L2})
            v.require(std::abs(column_norm(k, nk) - column_norm(m1, nk) * column_norm(m2, nk)) <=
                          1e-12 * column_norm(k, nk),
                      std::string("Kronecker ") + norm_name(nk) + " norm");
          v.require(std::abs(k.norm() - m1.norm() * m2.norm()) <= 1e-12 * k.norm(), "Kronecker Frobenius norm");
        }
  for (int d = 1; d <= 4; ++d) {
    std::vector<Matrix> fs;
    for (int i = 0; i < d; ++i) fs.push_back(random_matrix(1 + (3 * i + d) % 8, 2 + (5 * i + d) % 7, 10 * d + i));
    Matrix dense = kron_all(fs);
    Vector x = random_vector(dense.cols(), 99 + d);
    v.require(max_rel(kron_matvec(fs, x), dense * x) < 1e-10, "kron_matvec d=" + std::to_string(d));
  }
  return v;
}

inline Verdict gram_closed_forms() {
  Verdict v;
  for (int n = 1; n <= 64; ++n)
    for (auto kind : {BlockKind::AllRange, BlockKind::Prefix}) {
      Matrix w = materialize_block(Block::of(kind), n);
      v.require(gram_closed_form(kind, n) == w.transpose() * w, "closed-form Gram n=" + std::to_string(n));
    }
  return v;
}

inline MarginalVector random_marginal(const std::vector<int>& domain, std::uint64_t seed, bool with_top) {
  MarginalVector u{domain, random_vector(std::size_t{1} << domain.size(), seed, 0.1)};
  if (!with_top) u.weights(u.weights.size() - 1) = 0.0;
  return u;
}

// Marginal Gram algebra against dense matrices on small domains.
inline Verdict marginal_algebra() {
  Verdict v;
  const std::vector<std::vector<int>> domains{{3}, {2, 3}, {2, 3, 4}, {4, 4, 2}};
  std::uint64_t seed = 100;
  for (const auto& dom : domains) {
    const std::string tag = " on d=" + std::to_string(dom.size());
    MarginalVector u = random_marginal(dom, ++seed, true), w = random_marginal(dom, ++seed, true);
    MarginalVector z = random_marginal(dom, ++seed, false);
    const Matrix gu = marginal_gram_dense(u), gw = marginal_gram_dense(w), gz = marginal_gram_dense(z);
    v.require(max_rel(marginal_gram_dense(gram_mul(u, w)), gu * gw) < 1e-10, "gram_mul" + tag);
    v.require(max_rel(marginal_gram_dense(gram_inverse(u)), gu.inverse()) < 1e-8, "gram_inverse" + tag);
    v.require(max_rel(marginal_gram_dense(gram_ginverse(z)), pinv_psd(gz)) < 1e-8, "gram_ginverse" + tag);
    // Spectrum: eigenvalue κ(a) repeated mult(a) times.
    Vector kappa = eigenvalues(u), mult = eigen_multiplicities(dom);
    std::vector<double> ours, dense;
    for (Eigen::Index a = 0; a < kappa.size(); ++a)
      for (int r = 0; r < static_cast<int>(mult(a)); ++r) ours.push_back(kappa(a));
    Eigen::SelfAdjointEigenSolver<Matrix> es(gu, Eigen::EigenvaluesOnly);
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) dense.push_back(es.eigenvalues()(i));
    std::sort(ours.begin(), ours.end());
    v.require(ours.size() == dense.size(), "eigen multiplicities sum to N" + tag);
    for (std::size_t i = 0; i < std::min(ours.size(), dense.size()); ++i)
      v.require(std::abs(ours[i] - dense[i]) < 1e-9 * dense.back(), "eigenvalues" + tag);
    // Trace identity: Σ mult κ_w / κ_u = tr[G(u)^{-1} G(w)].
    double f = marginal_trace_error(eigenvalues(w), u, mult, nullptr);
    v.require(std::abs(f - trace_product(gu.inverse(), gw)) < 1e-9 * f, "trace identity" + tag);
    double fz = marginal_trace_error(eigenvalues(z), z, mult, nullptr);
    v.require(std::abs(fz - trace_product(pinv_psd(gz), gz)) < 1e-8 * fz, "trace identity, singular" + tag);
  }
  return v;
}

// p-Identity objective and gradient against the dense path and finite differences.
inline Verdict pidentity_objective() {
  Verdict v;
  for (auto [n, p] : std::vector<std::pair<int, int>>{{64, 4}, {16, 2}, {5, 1}}) {
    const Matrix theta = random_matrix(p, n, 7 * n + p, 0.0);
    const Matrix w = materialize_block(Block::all_range(), n);
    const Matrix g = w.transpose() * w;
    Matrix grad;
    double fast = objective_pidentity(theta, g, &grad);
    double dense = objective_dense(pidentity_matrix(theta), g);
    v.require(std::abs(fast - dense) <= 1e-8 * dense, "objective n=" + std::to_string(n) + ": " + fmt(fast) +
                                                         " vs " + fmt(dense));
    // Central differences on every entry (a sample for n = 64).
    const int stride = n == 64 ? 37 : 1;
    for (int k = 0; k < p * n; k += stride) {
      Matrix tp = theta, tm = theta;
      const double h = 1e-5;
      tp(k % p, k / p) += h;
      tm(k % p, k / p) -= h;
      double fd = (objective_pidentity(tp, g, nullptr) - objective_pidentity(tm, g, nullptr)) / (2 * h);
      double an = grad(k % p, k / p);
      v.require(std::abs(fd - an) <= 1e-4 * std::max(std::abs(fd), 1e-3 * grad.cwiseAbs().maxCoeff()),
                "gradient entry n=" + std::to_string(n) + ": " + fmt(an) + " vs " + fmt(fd));
    }
  }
  // Dense gradient against finite differences of the dense objective.
  const Matrix a = random_matrix(6, 4, 77);
  const Matrix g = gram_closed_form(BlockKind::Prefix, 4);
  const Matrix ga = gradient_dense(a, g);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 4; ++j) {
      Matrix ap = a, am = a;
      ap(i, j) += 1e-6;
      am(i, j) -= 1e-6;
      double fd = (objective_dense(ap, g) - objective_dense(am, g)) / 2e-6;
      v.require(std::abs(fd - ga(i, j)) <= 1e-4 * std::max(1.0, std::abs(fd)), "dense gradient");
    }
  return v;
}

inline ImplicitWorkload small_workload() {
  return impvec({{1.0, {Block::prefix(), Block::total()}},
                 {2.0, {Block::identity(), Block::all_range()}},
                 {0.5, {Block::all_range(), Block::prefix()}}},
                {4, 4});
}

// One strategy of each kind (plus a non-p-Identity explicit one) for small_workload().
inline std::vector<std::pair<std::string, Strategy>> sample_strategies(Norm norm) {
  const ImplicitWorkload w = small_workload();
  OptConfig cfg;
  cfg.restarts = 3;
  cfg.seed = 5;
  std::vector<std::pair<std::string, Strategy>> out;
  const Matrix g = gram_dense(gram(w));
  out.emplace_back("explicit", (norm == Norm::L1 ? opt0_laplace(g, 2, cfg) : opt0_gaussian(g, cfg)).strategy);
  Strategy dense;
  dense.norm = norm;
  Matrix a = random_matrix(20, 16, 31, 0.0);
  dense.variant = ExplicitStrategy{a / column_norm(a, norm)};
  out.emplace_back("explicit-dense", dense);
  out.emplace_back("kron", opt_kron(w, {}, cfg, norm).strategy);
  out.emplace_back("union", opt_plus(w, {}, {}, cfg, norm).strategy);
  MarginalVector th = random_marginal({4, 4}, 12, true);
  th.weights /= norm == Norm::L1 ? th.weights.sum() : th.weights.norm();
  Strategy m;
  m.norm = norm;
  m.variant = MarginalStrategy{th};
  out.emplace_back("marginal", m);
  return out;
}

inline Verdict zero_noise_round_trip() {
  Verdict v;
  const ImplicitWorkload w = small_workload();
  const Vector x = random_vector(16, 3, 0.0) * 10.0;
  const auto truth = true_answers(w, x);
  for (Norm norm : {Norm::L1, Norm::L2})
    for (const auto& [name, s] : sample_strategies(norm)) {
      NoiseSpec ns = calibrate(norm == Norm::L1 ? Mechanism::Laplace : Mechanism::Gaussian, 1.0, 1e-6);
      ns.scale = 0.0;
      auto ans = reconstruct(s, measure(s, x, ns), w);
      for (std::size_t t = 0; t < truth.size(); ++t)
        v.require(max_rel(ans[t], truth[t]) < 1e-8, "round trip " + name + " " + norm_name(norm));
    }
  return v;
}

inline Verdict monte_carlo_error() {
  Verdict v;
  const ImplicitWorkload w = small_workload();
  const Vector x = random_vector(16, 8, 0.0) * 5.0;
  for (Norm norm : {Norm::L1, Norm::L2})
    for (const auto& [name, s] : sample_strategies(norm)) {
      NoiseSpec ns = calibrate(norm == Norm::L1 ? Mechanism::Laplace : Mechanism::Gaussian, 1.0, 1e-6, 2024);
      ErrorReport an = analytic_rmse(w, s, ns);
      EmpiricalError em = empirical_error(w, s, ns, x, 4000);
      const double target = an.tse / w.query_count();
      v.require(std::abs(em.mse - target) <= 4.0 * em.stderr_,
                "empirical MSE " + name + " " + norm_name(norm) + ": " + fmt(em.mse) + " vs " + fmt(target) +
                    " (stderr " + fmt(em.stderr_) + ")");
    }
  return v;
}

// Reference σ values from a 40-digit bisection of the same privacy condition.
struct SigmaOracle {
  double eps, delta, sigma;
};

inline const std::vector<SigmaOracle>& sigma_oracles() {
  static const std::vector<SigmaOracle> o{
      {0.1, 1e-3, 17.4043962}, {0.1, 1e-6, 36.30469043}, {0.1, 1e-9, 50.20981826},
      {1.0, 1e-3, 2.574657019}, {1.0, 1e-6, 4.224678889}, {1.0, 1e-9, 5.495266157},
      {10.0, 1e-3, 0.406059558}, {10.0, 1e-6, 0.5410868318}, {10.0, 1e-9, 0.650246919}};
  return o;
}

inline Verdict gaussian_calibration() {
  Verdict v;
  for (const auto& o : sigma_oracles()) {
    const std::string tag = " at eps=" + fmt(o.eps) + ", delta=" + fmt(o.delta);
    double s = calibrate(Mechanism::Gaussian, o.eps, o.delta).scale;
    v.require(std::abs(gaussian_delta(s, o.eps) - o.delta) <= 1e-9, "|delta(sigma) - delta|" + tag);
    v.require(std::abs(s - o.sigma) <= 1e-8 * o.sigma, "sigma oracle" + tag + ": " + fmt(s));
    // The classical formula is a valid bound only for eps <= 1.
    if (o.eps <= 1.0) v.require(s <= classical_gaussian_sigma(o.eps, o.delta), "classical bound" + tag);
  }
  return v;
}

inline Verdict determinism() {
  Verdict v;
  const ImplicitWorkload w = small_workload();
  for (Norm norm : {Norm::L1, Norm::L2}) {
    OptConfig cfg;
    cfg.restarts = 4;
    cfg.seed = 11;
    cfg.threads = 1;
    std::string a = strategy_text(opt_hdmm(w, cfg, norm).best.strategy);
    std::string b = strategy_text(opt_hdmm(w, cfg, norm).best.strategy);
    cfg.threads = 3;
    std::string c = strategy_text(opt_hdmm(w, cfg, norm).best.strategy);
    v.require(a == b, std::string("repeat run differs, ") + norm_name(norm));
    v.require(a == c, std::string("thread count changes the result, ") + norm_name(norm));
  }
  return v;
}

struct NamedCheck {
  const char* name;
  Verdict (*fn)();
};

inline const std::vector<NamedCheck>& all_checks() {
  static const std::vector<NamedCheck> c{{"kronecker_identities", kronecker_identities},
                                         {"gram_closed_forms", gram_closed_forms},
                                         {"marginal_algebra", marginal_algebra},
                                         {"pidentity_objective", pidentity_objective},
                                         {"zero_noise_round_trip", zero_noise_round_trip},
                                         {"monte_carlo_error", monte_carlo_error},
                                         {"gaussian_calibration", gaussian_calibration},
                                         {"determinism", determinism}};
  return c;
}

}  // namespace hdmm::props
