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

#include <gtest/gtest.h>

#include "hdmm/hdmm.hpp"
#include "property_checks.hpp"

using namespace hdmm;

namespace {

OptConfig quick(int restarts = 5) {
  OptConfig c;
  c.restarts = restarts;
  c.seed = 3;
  return c;
}

Matrix gram_of(const Block& b, int n) {
  Matrix w = materialize_block(b, n);
  return w.transpose() * w;
}

}  // namespace

TEST(Objective, PIdentityZeroIsTrace) {
  Matrix g = gram_closed_form(BlockKind::AllRange, 9);
  EXPECT_NEAR(objective_pidentity(Matrix::Zero(2, 9), g, nullptr), g.trace(), 1e-12);
}

TEST(Objective, PIdentityOnesRow) {
  Matrix theta = Matrix::Ones(1, 6);
  Matrix a = pidentity_matrix(theta);
  EXPECT_NEAR(a(0, 0), 0.5, 1e-15);
  Matrix g = Matrix::Identity(6, 6);
  EXPECT_NEAR(objective_pidentity(theta, g, nullptr), objective_dense(a, g), 1e-12);
}

TEST(Objective, PIdentityHasUnitSensitivity) {
  Matrix a = pidentity_matrix(props::random_matrix(3, 10, 5, 0.0));
  EXPECT_NEAR(column_norm(a, Norm::L1), 1.0, 1e-14);
  EXPECT_NEAR(a.colwise().lpNorm<1>().minCoeff(), 1.0, 1e-14);
}

TEST(Properties, PIdentityObjectiveAndGradient) {
  auto v = props::pidentity_objective();
  EXPECT_TRUE(v.pass) << v.detail;
}

TEST(Opt0Laplace, TotalWorkload) {
  OptResult r = opt0_laplace(Matrix::Ones(16, 16), 1, quick());
  EXPECT_LE(r.q, 1.02);
  // Q >= 1 for any unit-L1 strategy; the optimizer must not undercut it.
  EXPECT_GE(r.q, 1.0 - 1e-6);
  EXPECT_NEAR(objective_dense(std::get<ExplicitStrategy>(r.strategy.variant).a, Matrix::Ones(16, 16)), r.q,
              1e-6 * r.q);
}

TEST(Opt0Laplace, IdentityWorkload) {
  OptResult r = opt0_laplace(Matrix::Identity(20, 20), 2, quick());
  EXPECT_LE(r.q, 1.02 * 20);
  EXPECT_NEAR(sensitivity_norm(r.strategy), 1.0, 1e-12);
}

TEST(Opt0Laplace, AllRangeBeatsIdentityAndBound) {
  Matrix g = gram_closed_form(BlockKind::AllRange, 64);
  OptResult r = opt0_laplace(g, 4, quick());
  EXPECT_LT(r.q, g.trace());
  EXPECT_GE(r.q, *r.svd_bound);
  const double rmse = std::sqrt(2.0 * r.q / (64 * 65 / 2));
  EXPECT_LE(rmse, 5.55 * 1.05);
  EXPECT_NEAR(unit_error(impvec({{1.0, {Block::all_range()}}}, {64}), r.strategy), r.q, 1e-8 * r.q);
}

TEST(Opt0Laplace, SeedDeterminesResult) {
  Matrix g = gram_closed_form(BlockKind::Prefix, 32);
  OptConfig a = quick(), b = quick();
  b.threads = 2;
  OptResult ra = opt0_laplace(g, 2, a), rb = opt0_laplace(g, 2, b);
  EXPECT_EQ(std::get<ExplicitStrategy>(ra.strategy.variant).a, std::get<ExplicitStrategy>(rb.strategy.variant).a);
}

TEST(Opt0Gaussian, IdentityFixedPoint) {
  OptResult r = opt0_gaussian(Matrix::Identity(8, 8), quick());
  EXPECT_NEAR(r.q, 8.0, 1e-9);
  EXPECT_LT(props::max_rel(std::get<ExplicitStrategy>(r.strategy.variant).a, Matrix::Identity(8, 8)), 1e-9);
}

TEST(Opt0Gaussian, AllRangeNearBound) {
  OptResult r = opt0_gaussian(gram_closed_form(BlockKind::AllRange, 64), quick());
  EXPECT_NEAR(sensitivity_norm(r.strategy), 1.0, 1e-9);
  EXPECT_GE(r.q, *r.svd_bound * (1 - 1e-6));
  // Numerical optimum of this convex problem: Q / SVDB = 1.0220.
  EXPECT_LT(r.q / *r.svd_bound, 1.023);
}

TEST(Opt0Gaussian, PermutationInvariant) {
  OptResult a = opt0_gaussian(gram_of(Block::all_range(), 64), quick());
  OptResult b = opt0_gaussian(gram_of(Block::permuted(Block::all_range(), 17), 64), quick());
  EXPECT_NEAR(a.q, b.q, 1e-3 * a.q);
}

TEST(Opt0Gaussian, RankDeficientGramIsRegularized) {
  OptResult r = opt0_gaussian(gram_of(Block::width_range(3), 6), quick());
  EXPECT_TRUE(std::isfinite(r.q));
  EXPECT_GE(r.q, *r.svd_bound * (1 - 1e-6));
}

TEST(OptKron, TotalTimesTotal) {
  auto w = impvec({{1.0, {Block::total(), Block::total()}}}, {8, 8});
  EXPECT_NEAR(opt_kron(w, {}, quick(), Norm::L1).q, 1.0, 0.02);
}

TEST(OptKron, SingleTermIsProductOfFactors) {
  auto w = impvec({{1.0, {Block::prefix(), Block::prefix()}}}, {16, 16});
  OptConfig cfg = quick();
  OptResult r = opt_kron(w, {1, 1}, cfg, Norm::L1);
  double q1 = opt0_laplace_factor(gram_of(Block::prefix(), 16), 1, cfg, split_seed(cfg.seed, 0), nullptr,
                                  cfg.restarts).q;
  double q2 = opt0_laplace_factor(gram_of(Block::prefix(), 16), 1, cfg, split_seed(cfg.seed, 1), nullptr,
                                  cfg.restarts).q;
  EXPECT_NEAR(r.q, q1 * q2, 1e-9 * r.q);
  EXPECT_NEAR(unit_error(w, r.strategy), r.q, 1e-8 * r.q);
}

TEST(OptKron, UnionDescentIsMonotone) {
  auto w = kway_marginals({2, 5, 6}, 2);
  const GramRepr g = gram(w);
  OptConfig cfg = quick(3);
  std::vector<FactorSolution> fs(3);
  std::vector<int> p{1, 1, 1};
  for (int i = 0; i < 3; ++i) {
    fs[i].params = pidentity_random_init(1, w.domain[i], 40 + i);
    fs[i].a = pidentity_matrix(Eigen::Map<const Matrix>(fs[i].params.data(), 1, w.domain[i]));
  }
  std::vector<double> trace;
  kron_coordinate_descent(g, p, Norm::L1, cfg, 1, fs, 2, &trace);
  for (std::size_t k = 1; k < trace.size(); ++k) EXPECT_LE(trace[k], trace[k - 1]);
}

TEST(OptKron, WorkedExample) {
  auto w = kway_marginals({2, 5, 50, 100}, 2);
  OptResult r = opt_kron(w, {}, OptConfig{}, Norm::L1);
  EXPECT_NEAR(r.q, 213270, 0.02 * 213270);
  EXPECT_NEAR(unit_error(w, r.strategy), r.q, 1e-8 * r.q);
}

TEST(OptPlus, BudgetShares) {
  auto a = budget_shares({5.0, 5.0}, Norm::L1);
  EXPECT_NEAR(a[0], 0.5, 1e-15);
  auto b = budget_shares({5.0, 5.0}, Norm::L2);
  EXPECT_NEAR(b[0], std::sqrt(0.5), 1e-15);
  auto c = budget_shares({8.0, 1.0}, Norm::L1);
  EXPECT_NEAR(c[0], 2.0 / 3, 1e-12);
  EXPECT_NEAR(c[1], 1.0 / 3, 1e-12);
  // Grid search over a1 in (0, 1) finds nothing lower.
  auto q = [](double a1) { return 8.0 / (a1 * a1) + 1.0 / ((1 - a1) * (1 - a1)); };
  for (int k = 1; k < 1000; ++k) EXPECT_GE(q(k / 1000.0), q(c[0]) - 1e-9);
}

TEST(OptPlus, GroupsMustPartition) {
  auto w = kway_marginals({3, 3, 3}, 2);
  EXPECT_THROW(opt_plus(w, {{0}, {1}}, {}, quick(), Norm::L1), InputError);
  EXPECT_THROW(opt_plus(w, {{0, 1}, {}, {2}}, {}, quick(), Norm::L1), InputError);
  EXPECT_THROW(opt_plus(w, {{0, 1}, {1, 2}}, {}, quick(), Norm::L1), InputError);
}

TEST(OptPlus, QEqualsLocalLeastSquaresError) {
  auto w = kway_marginals({3, 4, 5}, 2);
  for (Norm norm : {Norm::L1, Norm::L2}) {
    OptResult r = opt_plus(w, {{0, 2}, {1}}, {}, quick(), norm);
    EXPECT_NEAR(sensitivity_norm(r.strategy), 1.0, 1e-9);
    EXPECT_NEAR(unit_error(w, r.strategy), r.q, 1e-8 * r.q);
  }
}

TEST(OptPlus, WorkedExample) {
  auto w = kway_marginals({2, 5, 50, 100}, 2);
  EXPECT_NEAR(opt_plus(w, {}, {}, OptConfig{}, Norm::L1).q, 85070, 0.02 * 85070);
}

TEST(OptMarginals, IdentityWorkload) {
  auto w = impvec({{1.0, {Block::identity(), Block::identity()}}}, {4, 5});
  OptResult r = opt_marginals(w, quick(), Norm::L1);
  EXPECT_NEAR(r.q, 20.0, 0.01 * 20);
  const auto& th = std::get<MarginalStrategy>(r.strategy.variant).theta.weights;
  EXPECT_GT(th(3), 0.99);
}

TEST(OptMarginals, WorkedExample) {
  auto w = kway_marginals({2, 5, 50, 100}, 2);
  OptResult r = opt_marginals(w, OptConfig{}, Norm::L1);
  EXPECT_NEAR(r.q, 62886, 0.01 * 62886);
  ASSERT_TRUE(r.svd_bound.has_value());
  EXPECT_GE(r.q, *r.svd_bound);
  const auto& th = std::get<MarginalStrategy>(r.strategy.variant).theta.weights;
  // Weight sits on masks 0011, 1101 and 1110.
  EXPECT_NEAR(th(0b0011), 0.44, 0.01);
  EXPECT_NEAR(th(0b1101), 0.31, 0.01);
  EXPECT_NEAR(th(0b1110), 0.25, 0.01);
  EXPECT_NEAR(unit_error(w, r.strategy), r.q, 1e-8 * r.q);
}

TEST(OptMarginals, GaussianClosedFormAttainsBound) {
  // All marginals of (3,4,5): every radicand is nonnegative.
  ImplicitWorkload w;
  w.domain = {3, 4, 5};
  for (std::size_t a = 0; a < 8; ++a) w.terms.push_back({1.0, marginal_factors(w.domain, a, false)});
  ASSERT_TRUE(closed_form_theta(marginal_approx(gram(w))).has_value());
  OptResult r = opt_marginals(w, quick(), Norm::L2);
  ASSERT_TRUE(r.svd_bound.has_value());
  EXPECT_NEAR(r.q, *r.svd_bound, 1e-9 * r.q);

  // Exactly-2-way marginals have a negative radicand, so the bound is not attained.
  auto w2 = kway_marginals({3, 4, 5}, 2);
  EXPECT_FALSE(closed_form_theta(marginal_approx(gram(w2))).has_value());
  OptResult r2 = opt_marginals(w2, quick(), Norm::L2);
  EXPECT_GT(r2.q, *r2.svd_bound);
}

TEST(OptMarginals, ObjectiveGradient) {
  auto w = kway_marginals({2, 3, 4}, 2);
  const MarginalVector wt = marginal_approx(gram(w));
  for (Norm norm : {Norm::L1, Norm::L2}) {
    MarginalObjective obj{eigenvalues(wt), eigen_multiplicities(w.domain), characteristic_vector(w.domain),
                          w.domain, norm};
    Vector raw = props::random_vector(8, 12, 0.2), g;
    obj(raw, g);
    for (int a = 0; a < 8; ++a) {
      Vector rp = raw, rm = raw, tmp;
      rp(a) += 1e-6;
      rm(a) -= 1e-6;
      double fd = (obj(rp, tmp) - obj(rm, tmp)) / 2e-6;
      EXPECT_NEAR(g(a), fd, 1e-4 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(OptHdmm, PRule) {
  auto w = impvec({{1.0, {Block::total(), Block::all_range(), Block::identity()}},
                   {1.0, {Block::identity(), Block::total(), Block::prefix()}}},
                  {40, 40, 10});
  EXPECT_EQ(default_p(w), (std::vector<int>{1, 2, 1}));
}

TEST(OptHdmm, MarginalsWinWorkedExample) {
  auto w = kway_marginals({2, 5, 50, 100}, 2);
  HdmmResult r = opt_hdmm(w, OptConfig{}, Norm::L1);
  EXPECT_EQ(r.best.strategy.provenance.op, "marginal");
  EXPECT_NEAR(r.best.q, 62886, 0.01 * 62886);
}

TEST(OptHdmm, SingleKronPrefersKronOnTies) {
  auto w = impvec({{1.0, {Block::all_range(), Block::all_range()}}}, {32, 32});
  HdmmResult r = opt_hdmm(w, quick(), Norm::L1, {"kron", "plus"});
  ASSERT_LT(r.candidates[0].result->q, r.candidates[2].result->q);
  EXPECT_EQ(r.best.strategy.provenance.op, "kron");
  EXPECT_EQ(r.candidates[0].result->q, r.candidates[1].result->q);
}

TEST(OptHdmm, NeverWorseThanBaselines) {
  auto w = props::small_workload();
  for (Norm norm : {Norm::L1, Norm::L2}) {
    HdmmResult r = opt_hdmm(w, quick(2), norm);
    EXPECT_LE(r.best.q, identity_unit_error(gram(w)) * (1 + 1e-12));
    EXPECT_LE(r.best.q, workload_strategy(w, norm).unit_error * (1 + 1e-12));
  }
}

TEST(OptHdmm, Opt0SizeGuard) {
  auto w = impvec({{1.0, {Block::identity(), Block::identity()}}}, {200, 200});
  EXPECT_THROW(opt_hdmm(w, quick(), Norm::L1, {"opt0"}), InputError);
  EXPECT_THROW(opt_hdmm(w, quick(), Norm::L1, {"bogus"}), InputError);
}

TEST(OptHdmm, KWayMarginalRatios) {
  auto w2 = kway_marginals(std::vector<int>(8, 10), 2);
  double r2 = std::sqrt(identity_unit_error(gram(w2)) / opt_marginals(w2, OptConfig{}, Norm::L1).q);
  EXPECT_NEAR(r2, 39.06, 0.05 * 39.06);
  auto w8 = kway_marginals(std::vector<int>(8, 10), 8);
  double r8 = std::sqrt(identity_unit_error(gram(w8)) / opt_marginals(w8, OptConfig{}, Norm::L1).q);
  EXPECT_NEAR(r8, 1.0, 0.01);
}

TEST(Lbfgs, Quadratic) {
  Objective f = [](const Vector& x, Vector& g) {
    g = 2.0 * (x - Vector::LinSpaced(x.size(), 1, 5));
    return (x - Vector::LinSpaced(x.size(), 1, 5)).squaredNorm();
  };
  LbfgsOptions o;
  o.max_iters = 200;
  LbfgsResult r = lbfgs_minimize(f, Vector::Zero(5), o);
  EXPECT_LT(r.f, 1e-10);
}

TEST(Lbfgs, BoundActive) {
  Objective f = [](const Vector& x, Vector& g) {
    Vector t(2);
    t << -1.0, 2.0;
    g = 2.0 * (x - t);
    return (x - t).squaredNorm();
  };
  LbfgsOptions o;
  o.nonnegative = true;
  LbfgsResult r = lbfgs_minimize(f, Vector::Ones(2), o);
  EXPECT_NEAR(r.x(0), 0.0, 1e-12);
  EXPECT_NEAR(r.x(1), 2.0, 1e-6);
  o.upper = 1.5;
  r = lbfgs_minimize(f, Vector::Ones(2), o);
  EXPECT_NEAR(r.x(0), 0.0, 1e-12);
  EXPECT_EQ(r.x(1), 1.5);
}

TEST(Properties, Determinism) {
  auto v = props::determinism();
  EXPECT_TRUE(v.pass) << v.detail;
}
