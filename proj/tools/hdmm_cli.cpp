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

// hdmm: compile workloads, select strategies, compare errors, and run the
// private measure/reconstruct pipeline.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "hdmm/hdmm.hpp"

namespace {

using namespace hdmm;

constexpr int kExitUsage = 1;
constexpr int kExitInput = 2;
constexpr int kExitOptimization = 3;
constexpr int kExitBench = 4;

struct NoiseFlags {
  std::string noise = "laplace";
  double epsilon = 1.0;
  double delta = 1e-6;

  void add(CLI::App* app) {
    app->add_option("--noise", noise, "laplace or gaussian")
        ->check(CLI::IsMember({"laplace", "gaussian"}));
    app->add_option("--epsilon", epsilon, "privacy parameter epsilon");
    app->add_option("--delta", delta, "privacy parameter delta (gaussian)");
  }

  NoiseSpec spec(std::uint64_t seed = 0) const {
    return calibrate(noise == "laplace" ? Mechanism::Laplace : Mechanism::Gaussian, epsilon, delta, seed);
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_compile(const std::string& workload, const std::string& out) {
  ImplicitWorkload w = load_workload(workload);
  double implicit_entries = 0.0;
  for (const auto& t : w.terms)
    for (const auto& f : t.factors) implicit_entries += static_cast<double>(f.size());
  if (!out.empty()) write_text_file(out, workload_to_json(w).dump() + "\n");
  std::printf("domain size N: %.0f\n", w.domain_size());
  std::printf("terms k: %zu\n", w.terms.size());
  std::printf("queries m: %.0f\n", w.query_count());
  std::printf("implicit storage: %.0f bytes\n", implicit_entries * 8.0);
  std::printf("explicit storage estimate: %.6g bytes\n", w.query_count() * w.domain_size() * 8.0);
  return 0;
}

int cmd_optimize(const std::string& workload, const NoiseFlags& nf, const std::string& operators,
                 const OptConfig& cfg, const std::string& out) {
  ImplicitWorkload w = load_workload(workload);
  NoiseSpec noise = nf.spec();
  HdmmResult r = opt_hdmm(w, cfg, noise.norm(), split_list(operators));
  for (const auto& c : r.candidates) {
    if (c.result)
      std::printf("%-9s Q = %.10g  (%.2fs)\n", c.op.c_str(), c.result->q, c.result->seconds);
    else
      std::printf("%-9s failed: %s\n", c.op.c_str(), c.error.c_str());
  }
  const auto report = error_from_q(r.best.q, noise, w.query_count());
  std::printf("winner: %s  Q = %.10g  RMSE = %.6g\n", r.best.strategy.provenance.op.c_str(), r.best.q,
              report.rmse);
  if (r.best.svd_bound) std::printf("svd bound: %.10g\n", *r.best.svd_bound);
  std::printf("wallclock: %.2fs\n", r.best.seconds);
  if (!out.empty()) write_text_file(out, strategy_text(r.best.strategy));
  return 0;
}

struct AnalyzeRow {
  std::string name;
  std::optional<ErrorReport> err;
  std::string note;
};

int cmd_analyze(const std::string& workload, const std::vector<std::string>& strategies, const NoiseFlags& nf,
                const std::string& format) {
  ImplicitWorkload w = load_workload(workload);
  NoiseSpec noise = nf.spec();
  const double m = w.query_count();
  std::vector<AnalyzeRow> rows;
  auto add = [&](const std::string& name, const std::function<double()>& q) {
    AnalyzeRow row{name, std::nullopt, ""};
    try {
      row.err = error_from_q(q(), noise, m);
    } catch (const Error& e) {
      row.note = e.what();
    }
    rows.push_back(std::move(row));
  };
  for (const auto& path : strategies)
    add(path, [&] {
      Strategy s = load_strategy(path);
      s.norm = noise.norm();
      return unit_error(w, s);
    });
  add("identity", [&] { return identity_unit_error(gram(w)); });
  add("workload", [&] {
    auto q = workload_unit_error(w, noise.norm());
    if (!q) throw InputError("rank unavailable at this size");
    return *q;
  });
  try {
    if (auto b = svd_bound(w)) rows.push_back({"svd_bound", error_from_q(*b, noise, m), "lower bound"});
  } catch (const Error&) {
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : rows)
    if (r.err && r.name != "svd_bound") best = std::min(best, r.err->rmse);
  const bool md = format == "markdown";
  if (md)
    std::printf("| strategy | Q | TSE | RMSE | ratio | note |\n|---|---|---|---|---|---|\n");
  else
    std::printf("strategy,Q,TSE,RMSE,ratio,note\n");
  for (const auto& r : rows) {
    std::string q = "", tse = "", rmse = "", ratio = "";
    if (r.err) {
      q = format_number(r.err->q);
      tse = format_number(r.err->tse);
      rmse = format_number(r.err->rmse);
      ratio = best > 0 ? format_number(r.err->rmse / best) : "1";
    }
    std::string note = r.err ? r.note : "unsupported: " + r.note;
    if (md)
      std::printf("| %s | %s | %s | %s | %s | %s |\n", r.name.c_str(), q.c_str(), tse.c_str(), rmse.c_str(),
                  ratio.c_str(), note.c_str());
    else
      std::printf("%s,%s,%s,%s,%s,\"%s\"\n", r.name.c_str(), q.c_str(), tse.c_str(), rmse.c_str(), ratio.c_str(),
                  note.c_str());
  }
  return 0;
}

int cmd_run(const std::string& dataset, const std::string& domain, const std::string& workload,
            const std::string& strategy, const NoiseFlags& nf, std::uint64_t seed, bool zero_noise,
            const std::string& out) {
  DomainConfig dc = domain_config_from_json(read_json_file(domain));
  ImplicitWorkload w = load_workload(workload);
  if (dc.shape() != w.domain) throw InputError("workload domain does not match the domain config");
  Strategy s = load_strategy(strategy);
  if (strategy_columns(s) != static_cast<Eigen::Index>(w.domain_size()))
    throw InputError("strategy column count does not match the domain size");
  std::ifstream in(dataset);
  if (!in) throw InputError("cannot open '" + dataset + "'");
  Vector x = vectorize_csv(in, dc);
  NoiseSpec noise = nf.spec(seed);
  if (zero_noise) noise.scale = 0.0;
  auto answers = reconstruct(s, measure(s, x, noise), w);
  write_text_file(out, answers_csv(answers));
  Json meta = {{"mechanism", nf.noise},
               {"epsilon", noise.epsilon},
               {"delta", noise.mechanism == Mechanism::Gaussian ? Json(noise.delta) : Json(nullptr)},
               {"scale", noise.scale},
               {"seed", seed},
               {"records", x.sum()},
               {"strategy",
                {{"kind", s.kind_name()},
                 {"operator", s.provenance.op},
                 {"seed", s.provenance.seed},
                 {"restarts", s.provenance.restarts}}},
               {"consistent_across_terms", !std::holds_alternative<UnionKronStrategy>(s.variant)}};
  write_text_file(out + ".meta.json", meta.dump(1) + "\n");
  std::printf("wrote %zu answer rows to %s\n", static_cast<std::size_t>(w.query_count()), out.c_str());
  return 0;
}

int cmd_bench(const std::string& suite, const OptConfig& cfg, const std::string& targets_path) {
  auto targets = load_targets(targets_path);
  std::vector<std::string> suites = suite == "all" ? bench_suites() : std::vector<std::string>{suite};
  bool ok = true;
  for (const auto& s : suites) {
    auto rows = score_suite(s, run_bench_suite(s, cfg), targets);
    for (const auto& r : rows) std::printf("%s\n", bench_row_line(r).c_str());
    ok = ok && rows_pass(rows);
  }
  std::printf("%s\n", ok ? "bench: PASS" : "bench: FAIL");
  return ok ? 0 : kExitBench;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"High-dimensional matrix mechanism: strategy selection and private query answering"};
  app.require_subcommand(1, 1);

  std::string workload, out, operators = "kron,plus,marginal", format = "csv", dataset, domain, strategy;
  std::string suite = "all", targets = default_targets_path();
  std::vector<std::string> strategies;
  NoiseFlags nf;
  OptConfig cfg;
  bool zero_noise = false;

  auto* compile = app.add_subcommand("compile", "compile a workload spec and print its size");
  compile->add_option("--workload", workload, "workload spec (JSON)")->required();
  compile->add_option("--out", out, "write the compiled workload here");

  auto add_opt_flags = [&](CLI::App* sub) {
    sub->add_option("--restarts", cfg.restarts, "random restarts per optimization")->check(CLI::PositiveNumber);
    sub->add_option("--seed", cfg.seed, "seed for all randomness");
    sub->add_option("--max-iters", cfg.max_iters, "iteration cap per restart")->check(CLI::PositiveNumber);
    sub->add_option("--p", cfg.p_per_attr, "p-Identity rows per attribute");
  };

  auto* optimize = app.add_subcommand("optimize", "select a strategy for a workload");
  optimize->add_option("--workload", workload, "workload spec (JSON)")->required();
  nf.add(optimize);
  optimize->add_option("--operators", operators, "comma list of kron, plus, marginal, opt0");
  add_opt_flags(optimize);
  optimize->add_option("--out", out, "write the winning strategy here");

  auto* analyze = app.add_subcommand("analyze", "compare strategies on a workload");
  analyze->add_option("--workload", workload, "workload spec (JSON)")->required();
  analyze->add_option("--strategy", strategies, "strategy file(s)");
  nf.add(analyze);
  analyze->add_option("--format", format, "csv or markdown")->check(CLI::IsMember({"csv", "markdown"}));

  std::uint64_t seed = 0;
  auto* run = app.add_subcommand("run", "answer a workload privately on a dataset");
  run->add_option("--dataset", dataset, "CSV with a header row")->required();
  run->add_option("--domain", domain, "domain config (JSON)")->required();
  run->add_option("--workload", workload, "workload spec (JSON)")->required();
  run->add_option("--strategy", strategy, "strategy file")->required();
  nf.add(run);
  run->add_option("--seed", seed, "noise seed");
  run->add_flag("--zero-noise", zero_noise, "testing only: add no noise");
  run->add_option("--out", out, "answers CSV")->required();

  auto* bench = app.add_subcommand("bench", "reproduce reference error tables");
  bench->add_option("--suite", suite, "1d, marginals, worked-example, separation or all")
      ->check(CLI::IsMember({"all", "1d", "marginals", "worked-example", "separation"}));
  add_opt_flags(bench);
  bench->add_option("--targets", targets, "reference targets file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*compile) return cmd_compile(workload, out);
    if (*optimize) return cmd_optimize(workload, nf, operators, cfg, out);
    if (*analyze) return cmd_analyze(workload, strategies, nf, format);
    if (*run) return cmd_run(dataset, domain, workload, strategy, nf, seed, zero_noise, out);
    if (*bench) return cmd_bench(suite, cfg, targets);
  } catch (const OptimizationError& e) {
    std::fprintf(stderr, "optimization failed: %s\n", e.what());
    return kExitOptimization;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  }
  return kExitUsage;
}
