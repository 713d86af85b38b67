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

#include <deque>
#include <functional>

#include "hdmm/common.hpp"

namespace hdmm {

struct LbfgsOptions {
  int max_iters = 100;
  int memory = 10;
  // Stop when the objective improved by less than rel_tol (relative) over the
  // last `window` iterations.
  double rel_tol = 1e-7;
  int window = 5;
  // Project every iterate onto x >= 0.
  bool nonnegative = false;
  // Optional box upper bound applied with the same projection.
  double upper = std::numeric_limits<double>::infinity();
};

struct LbfgsResult {
  Vector x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
};

// Objective callback: returns f(x) and writes the gradient into `grad`.
using Objective = std::function<double(const Vector& x, Vector& grad)>;

// Limited-memory BFGS with projection onto the nonnegative orthant and an
// Armijo backtracking search along the projected path. Variables pinned at
// the bound with an outward gradient are frozen for the step.
inline LbfgsResult lbfgs_minimize(const Objective& fg, Vector x, const LbfgsOptions& opt) {
  const Eigen::Index n = x.size();
  auto project = [&](Vector& v) {
    if (opt.nonnegative) v = v.cwiseMax(0.0);
    if (std::isfinite(opt.upper)) v = v.cwiseMin(opt.upper);
  };
  project(x);
  Vector g(n);
  LbfgsResult res;
  double f = fg(x, g);
  res.evaluations = 1;
  std::deque<Vector> ss, ys;
  std::deque<double> rhos;
  std::vector<double> history{f};

  auto free_mask = [&](const Vector& xv, const Vector& gv) {
    Vector m = Vector::Ones(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (opt.nonnegative && xv(i) <= 0.0 && gv(i) > 0.0) m(i) = 0.0;
      if (xv(i) >= opt.upper && gv(i) < 0.0) m(i) = 0.0;
    }
    return m;
  };

  int it = 0;
  for (; it < opt.max_iters; ++it) {
    if (!std::isfinite(f)) break;
    Vector mask = free_mask(x, g);
    Vector pg = g.cwiseProduct(mask);
    const double pg_norm = pg.lpNorm<Eigen::Infinity>();
    if (pg_norm == 0.0) break;

    // Two-loop recursion on the free subspace.
    Vector q = pg;
    std::vector<double> alpha(ss.size());
    for (int k = static_cast<int>(ss.size()) - 1; k >= 0; --k) {
      alpha[k] = rhos[k] * ss[k].cwiseProduct(mask).dot(q);
      q -= alpha[k] * ys[k].cwiseProduct(mask);
    }
    if (!ss.empty()) {
      const Vector& sl = ss.back();
      const Vector& yl = ys.back();
      double gamma = sl.dot(yl) / yl.squaredNorm();
      q *= gamma;
    } else {
      q /= std::max(1.0, pg.norm());
    }
    for (std::size_t k = 0; k < ss.size(); ++k) {
      double beta = rhos[k] * ys[k].cwiseProduct(mask).dot(q);
      q += (alpha[k] - beta) * ss[k].cwiseProduct(mask);
    }
    Vector d = -q.cwiseProduct(mask);
    if (!(g.dot(d) < 0.0)) {
      ss.clear();
      ys.clear();
      rhos.clear();
      d = -pg / std::max(1.0, pg.norm());
    }

    double step = 1.0;
    Vector xn(n), gn(n);
    double fn = f;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      xn = x + step * d;
      project(xn);
      Vector dx = xn - x;
      double slope = g.dot(dx);
      if (dx.lpNorm<Eigen::Infinity>() == 0.0) break;
      fn = fg(xn, gn);
      ++res.evaluations;
      if (std::isfinite(fn) && fn <= f + 1e-4 * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (ss.empty()) break;
      ss.clear();
      ys.clear();
      rhos.clear();
      continue;
    }
    Vector s = xn - x, y = gn - g;
    double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      ss.push_back(s);
      ys.push_back(y);
      rhos.push_back(1.0 / sy);
      if (static_cast<int>(ss.size()) > opt.memory) {
        ss.pop_front();
        ys.pop_front();
        rhos.pop_front();
      }
    }
    x.swap(xn);
    g.swap(gn);
    f = fn;
    history.push_back(f);
    const std::size_t h = history.size();
    if (h > static_cast<std::size_t>(opt.window)) {
      double before = history[h - 1 - opt.window];
      if (before - f < opt.rel_tol * std::abs(f)) {
        ++it;
        break;
      }
    }
  }
  res.x = std::move(x);
  res.f = f;
  res.iterations = it;
  return res;
}

}  // namespace hdmm
