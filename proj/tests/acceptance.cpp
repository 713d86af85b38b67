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

// Acceptance report: one PASS/FAIL line per criterion, with the measured rows
// beneath it. Targets and tolerances are pinned here, not read from fixtures.

#include <cstdio>

#include "hdmm/hdmm.hpp"
#include "property_checks.hpp"

namespace {

using namespace hdmm;

BenchTarget pin(const char* suite, const char* name, double target, double tol, const char* check,
                bool gating = true) {
  return BenchTarget{suite, name, check, "", target, tol, gating};
}

const std::vector<BenchTarget>& pinned_targets() {
  static const std::vector<BenchTarget> t{
      pin("worked-example", "identity_q", 300000, 1e-9, "rel"),
      pin("worked-example", "workload_q", 206964, 0.01, "rel"),
      pin("worked-example", "kron_q", 213270, 0.02, "rel"),
      pin("worked-example", "plus_q", 85070, 0.02, "rel"),
      pin("worked-example", "marginal_q", 62886, 0.01, "rel"),
      pin("worked-example", "runtime_s", 120, 0, "le"),
      pin("1d", "laplace_identity_rmse_allrange_64", 6.63, 0.005, "rel"),
      pin("1d", "laplace_identity_rmse_allrange_256", 13.11, 0.005, "rel"),
      pin("1d", "laplace_opt0_rmse_allrange_64", 5.55, 0.05, "le"),
      pin("1d", "laplace_opt0_rmse_allrange_256", 8.07, 0.05, "le"),
      pin("1d", "laplace_svdb_rmse_allrange_64", 3.22, 0.01, "rel"),
      pin("1d", "laplace_svdb_rmse_allrange_256", 4.07, 0.01, "rel"),
      pin("1d", "laplace_runtime_s_64", 180, 0, "le"),
      pin("1d", "laplace_runtime_s_256", 180, 0, "le"),
      pin("1d", "gaussian_opt0_gap_allrange_64", 1.0, 0.02, "le"),
      pin("1d", "gaussian_opt0_gap_prefix_64", 1.0, 0.02, "le"),
      pin("1d", "gaussian_opt0_gap_width32_64", 1.0, 0.02, "le"),
      pin("1d", "gaussian_opt0_gap_permuted_64", 1.0, 0.02, "le"),
      pin("1d", "gaussian_opt0_gap_allrange_256", 1.0, 0.02, "le"),
      pin("1d", "gaussian_opt0_gap_prefix_256", 1.0, 0.02, "le"),
      pin("1d", "gaussian_opt0_gap_width32_256", 1.0, 0.02, "le"),
      pin("1d", "gaussian_opt0_gap_permuted_256", 1.0, 0.02, "le"),
      pin("1d", "gaussian_permuted_q_reldiff_64", 0.001, 0, "le"),
      pin("1d", "gaussian_permuted_q_reldiff_256", 0.001, 0, "le"),
      pin("separation", "prefix_kron_q", 33385, 0.05, "rel"),
      pin("separation", "prefix_plus_q", 14252, 0.05, "rel"),
      pin("separation", "prefix_ratio", 2.2, 0, "ge"),
      pin("separation", "allrange_ratio", 2.2, 0, "ge", false),
      pin("marginals", "ratio_k2", 39.06, 0.05, "rel"),
      pin("marginals", "ratio_k8", 1.0, 0.01, "rel"),
  };
  return t;
}

bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

int failures = 0;

void report(int id, const std::string& title, const std::vector<BenchRow>& rows) {
  bool ok = rows_pass(rows) && !rows.empty();
  if (!ok) ++failures;
  std::printf("CRITERION %d %s: %s\n", id, ok ? "PASS" : "FAIL", title.c_str());
  for (const auto& r : rows) std::printf("    %s\n", bench_row_line(r).c_str());
  std::fflush(stdout);
}

std::vector<BenchRow> select(const std::vector<BenchRow>& rows, const std::string& prefix) {
  std::vector<BenchRow> out;
  for (const auto& r : rows)
    if (starts_with(r.target.name, prefix)) out.push_back(r);
  return out;
}

}  // namespace

int main() {
  OptConfig cfg;  // 25 restarts, seed 0
  const auto& targets = pinned_targets();

  report(1, "2-way marginals worked example on (2,5,50,100), Laplace unit-noise Q",
         score_suite("worked-example", bench_worked_example(cfg), targets));

  auto one_d = score_suite("1d", bench_1d(cfg), targets);
  report(2, "1-D Laplace all-range table, eps = 1", select(one_d, "laplace_"));
  report(3, "1-D Gaussian OPT0 within 2% of the SVD bound, eps = 1, delta = 1e-6", select(one_d, "gaussian_"));

  report(4, "union-of-Kronecker separation on (100,100), Laplace",
         score_suite("separation", bench_separation(cfg), targets));

  report(5, "k-way marginals on d = 8, n = 10: Identity / OPT_M RMSE ratio",
         score_suite("marginals", bench_marginals(cfg), targets));

  std::printf("CRITERION 6 N/A: dataset tables (Census, CPS, Adult, Loans) not reproducible without their "
              "schemas; covered by the property suite in criterion 7\n");

  auto t0 = std::chrono::steady_clock::now();
  bool all = true;
  std::vector<std::string> lines;
  for (const auto& c : hdmm::props::all_checks()) {
    auto v = c.fn();
    all = all && v.pass;
    lines.push_back(std::string(v.pass ? "PASS  " : "FAIL  ") + c.name + (v.pass ? "" : ": " + v.detail));
  }
  double secs = seconds_since(t0);
  bool ok = all && secs < 300.0;
  if (!ok) ++failures;
  std::printf("CRITERION 7 %s: property suite (%.1fs, limit 300s)\n", ok ? "PASS" : "FAIL", secs);
  for (const auto& l : lines) std::printf("    %s\n", l.c_str());

  std::printf("acceptance: %d criterion failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}
