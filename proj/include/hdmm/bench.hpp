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

#include <iomanip>
#include <map>
#include <sstream>

#include "hdmm/io.hpp"
#include "hdmm/optimize.hpp"

namespace hdmm {

struct BenchTarget {
  std::string suite, name, check, source;
  double target = 0.0, tolerance = 0.0;
  bool gating = true;
};

struct BenchRow {
  BenchTarget target;
  std::optional<double> measured;
  bool pass = false;
};

inline std::vector<BenchTarget> load_targets(const std::string& path) {
  Json j = read_json_file(path);
  if (!j.contains("targets") || !j["targets"].is_array()) throw InputError(path + ": missing 'targets'");
  std::vector<BenchTarget> out;
  for (const auto& t : j["targets"]) {
    BenchTarget b;
    b.suite = t.at("suite").get<std::string>();
    b.name = t.at("name").get<std::string>();
    b.check = t.at("check").get<std::string>();
    b.target = t.at("target").get<double>();
    b.tolerance = t.at("tolerance").get<double>();
    b.gating = t.value("gating", true);
    b.source = t.value("source", "");
    if (b.check != "rel" && b.check != "le" && b.check != "ge")
      throw InputError(path + ": unknown check '" + b.check + "'");
    out.push_back(std::move(b));
  }
  return out;
}

inline std::string default_targets_path() {
#ifdef HDMM_FIXTURES_DIR
  return std::string(HDMM_FIXTURES_DIR) + "/reference_targets.json";
#else
  return "fixtures/reference_targets.json";
#endif
}

inline bool check_target(const BenchTarget& t, double m) {
  if (!std::isfinite(m)) return false;
  if (t.check == "rel") return std::abs(m - t.target) <= t.tolerance * std::abs(t.target);
  if (t.check == "le") return m <= t.target * (1.0 + t.tolerance);
  return m >= t.target;
}

using Measurements = std::map<std::string, double>;

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline Measurements bench_worked_example(const OptConfig& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  const ImplicitWorkload w = kway_marginals({2, 5, 50, 100}, 2);
  Measurements m;
  m["identity_q"] = identity_strategy(w, Norm::L1).unit_error;
  m["workload_q"] = workload_strategy(w, Norm::L1).unit_error;
  m["kron_q"] = opt_kron(w, cfg.p_per_attr, cfg, Norm::L1).q;
  m["plus_q"] = opt_plus(w, {}, cfg.p_per_attr, cfg, Norm::L1).q;
  m["marginal_q"] = opt_marginals(w, cfg, Norm::L1).q;
  m["runtime_s"] = seconds_since(t0);
  return m;
}

inline ImplicitWorkload one_dim(const Block& b, int n) { return impvec({{1.0, {b}}}, {n}); }

inline Measurements bench_1d(const OptConfig& cfg) {
  Measurements m;
  const NoiseSpec lap = calibrate(Mechanism::Laplace, 1.0, 0.0);
  const NoiseSpec gau = calibrate(Mechanism::Gaussian, 1.0, 1e-6);
  for (int n : {64, 256}) {
    const std::string sz = std::to_string(n);
    auto t0 = std::chrono::steady_clock::now();
    const ImplicitWorkload r = one_dim(Block::all_range(), n);
    const Matrix g = gram_dense(gram(r));
    const double mq = r.query_count();
    const double svdb = svd_bound_gram(g);
    m["laplace_identity_rmse_allrange_" + sz] = error_from_q(g.trace(), lap, mq).rmse;
    m["laplace_svdb_rmse_allrange_" + sz] = error_from_q(svdb, lap, mq).rmse;
    m["laplace_opt0_rmse_allrange_" + sz] = error_from_q(opt0_laplace(g, n / 16, cfg).q, lap, mq).rmse;
    m["laplace_runtime_s_" + sz] = seconds_since(t0);
    if (n == 64) {
      m["gaussian_identity_rmse_allrange_" + sz] = error_from_q(g.trace(), gau, mq).rmse;
      m["gaussian_svdb_rmse_allrange_" + sz] = error_from_q(svdb, gau, mq).rmse;
    }
    const std::vector<std::pair<std::string, Block>> families{
        {"allrange", Block::all_range()},
        {"prefix", Block::prefix()},
        {"width32", Block::width_range(32)},
        {"permuted", Block::permuted(Block::all_range(), cfg.seed)}};
    std::map<std::string, double> q;
    for (const auto& [name, b] : families) {
      const ImplicitWorkload wf = one_dim(b, n);
      const Matrix gf = gram_dense(gram(wf));
      OptResult res = opt0_gaussian(gf, cfg);
      q[name] = res.q;
      m["gaussian_opt0_gap_" + name + "_" + sz] = std::sqrt(res.q / *res.svd_bound);
    }
    m["gaussian_permuted_q_reldiff_" + sz] = rel_diff(q["permuted"], q["allrange"]);
  }
  return m;
}

inline Measurements bench_separation(const OptConfig& cfg) {
  Measurements m;
  for (const auto& [name, b] : std::vector<std::pair<std::string, Block>>{{"prefix", Block::prefix()},
                                                                         {"allrange", Block::all_range()}}) {
    const ImplicitWorkload w = impvec({{1.0, {b, Block::total()}}, {1.0, {Block::total(), b}}}, {100, 100});
    double qk = opt_kron(w, cfg.p_per_attr, cfg, Norm::L1).q;
    double qp = opt_plus(w, {}, cfg.p_per_attr, cfg, Norm::L1).q;
    m[name + "_kron_q"] = qk;
    m[name + "_plus_q"] = qp;
    m[name + "_ratio"] = qk / qp;
  }
  return m;
}

inline Measurements bench_marginals(const OptConfig& cfg) {
  Measurements m;
  const std::vector<int> domain(8, 10);
  for (int k : {2, 8}) {
    const ImplicitWorkload w = kway_marginals(domain, k);
    double qi = identity_unit_error(gram(w));
    double qm = opt_marginals(w, cfg, Norm::L1).q;
    m["ratio_k" + std::to_string(k)] = std::sqrt(qi / qm);
  }
  return m;
}

inline const std::vector<std::string>& bench_suites() {
  static const std::vector<std::string> s{"worked-example", "1d", "separation", "marginals"};
  return s;
}

inline Measurements run_bench_suite(const std::string& suite, const OptConfig& cfg) {
  if (suite == "worked-example") return bench_worked_example(cfg);
  if (suite == "1d") return bench_1d(cfg);
  if (suite == "separation") return bench_separation(cfg);
  if (suite == "marginals") return bench_marginals(cfg);
  throw InputError("unknown bench suite '" + suite + "'");
}

inline std::vector<BenchRow> score_suite(const std::string& suite, const Measurements& m,
                                         const std::vector<BenchTarget>& targets) {
  std::vector<BenchRow> rows;
  for (const auto& t : targets) {
    if (t.suite != suite) continue;
    BenchRow r{t, std::nullopt, false};
    auto it = m.find(t.name);
    if (it != m.end()) {
      r.measured = it->second;
      r.pass = check_target(t, it->second);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

inline bool rows_pass(const std::vector<BenchRow>& rows) {
  for (const auto& r : rows)
    if (r.target.gating && !r.pass) return false;
  return true;
}

inline std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

inline std::string bench_row_line(const BenchRow& r) {
  std::ostringstream os;
  const char* verdict = r.pass ? "PASS" : (r.target.gating ? "FAIL" : "INFO");
  os << verdict << "  " << r.target.suite << "/" << r.target.name << "  measured="
     << (r.measured ? format_number(*r.measured) : std::string("n/a"))
     << "  target=" << format_number(r.target.target) << "  check=" << r.target.check
     << "  tol=" << format_number(r.target.tolerance);
  return os.str();
}

}  // namespace hdmm
