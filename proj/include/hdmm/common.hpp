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

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hdmm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Norm { L1, L2 };

inline const char* norm_name(Norm k) { return k == Norm::L1 ? "L1" : "L2"; }

// Error categories map onto CLI exit codes (input = 2, optimization = 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class OptimizationError : public Error {
 public:
  using Error::Error;
};

struct Limits {
  // Largest number of entries an explicit materialization may allocate.
  double materialize_cap = 1e8;
  // Dense support checks run only at or below this domain size.
  std::size_t support_check_max_n = 4096;
  // Largest data vector the vectorizer will allocate.
  double vectorize_cap = 1073741824.0;  // 2^30
  int max_marginal_dims = 25;
};

inline Limits& limits() {
  static Limits l;
  return l;
}

// splitmix64, the only PRNG used anywhere in the library. State advances by
// the golden-ratio increment; output is the standard mix64 finalizer.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform on the open interval (0, 1).
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  // Unbiased integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r;
    do {
      r = next();
    } while (r >= limit);
    return r % bound;
  }

 private:
  std::uint64_t state_;
};

// Derives an independent stream seed for sub-task `index` of `seed`.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t index) {
  SplitMix64 g(seed ^ (0xd1b54a32d192ed03ULL * (index + 1)));
  return g.next();
}

// Fisher-Yates permutation of {0..n-1} driven by SplitMix64(seed).
inline std::vector<int> seeded_permutation(int n, std::uint64_t seed) {
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  SplitMix64 g(seed);
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(g.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(p[i], p[j]);
  }
  return p;
}

inline double rel_diff(double a, double b) {
  double s = std::max(std::abs(a), std::abs(b));
  return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

}  // namespace hdmm
