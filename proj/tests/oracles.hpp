// Copyright 2026 The Calibrar Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CALIBRAR_TESTS_ORACLES_HPP_
#define CALIBRAR_TESTS_ORACLES_HPP_

// Deliberately naive reference implementations used to cross-check the
// library.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "calibrar/num_array.hpp"
#include "calibrar/rng.hpp"

namespace calibrar::testing {

// ECE by scanning all examples once per bucket and testing membership in
// (k/K, (k+1)/K] directly. Confidences of exactly zero join bucket 0.
inline double brute_force_ece(const NumArray& probs, std::span<const std::size_t> labels,
                              std::size_t K) {
  const std::size_t n = labels.size();
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double lo = static_cast<double>(k) / static_cast<double>(K);
    const double hi = static_cast<double>(k + 1) / static_cast<double>(K);
    std::size_t count = 0;
    double correct = 0.0, conf = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t z = 1; z < probs.cols(); ++z) {
        if (probs(i, z) > probs(i, best)) best = z;
      }
      const double c = probs(i, best);
      const bool inside = (c > lo && c <= hi) || (k == 0 && c <= lo);
      if (!inside) continue;
      ++count;
      correct += best == labels[i] ? 1.0 : 0.0;
      conf += c;
    }
    if (count == 0) continue;
    const auto m = static_cast<double>(count);
    total += (m / static_cast<double>(n)) * std::abs(correct / m - conf / m);
  }
  return total;
}

// Random probability rows. Some rows are snapped to bucket boundaries so
// the right-closed edge is exercised.
inline NumArray random_probs(Rng& rng, std::size_t n, std::size_t Z, std::size_t K) {
  NumArray p = NumArray::matrix(n, Z);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = p.row(i);
    if (Z >= 2 && rng.uniform() < 0.1) {
      // argmax mass exactly j/K (for j/K >= 1/Z), the rest spread evenly.
      const std::size_t first = (K + Z - 1) / Z;
      const std::size_t j = first + rng.below(K - first + 1);
      const double top = static_cast<double>(j) / static_cast<double>(K);
      const double rest = (1.0 - top) / static_cast<double>(Z - 1);
      if (rest < top) {
        for (std::size_t z = 0; z < Z; ++z) row[z] = rest;
        row[rng.below(Z)] = top;
        continue;
      }
    }
    double total = 0.0;
    for (double& v : row) {
      v = -std::log(1.0 - rng.uniform()) * (rng.uniform() < 0.3 ? 8.0 : 1.0);
      total += v;
    }
    for (double& v : row) v /= total;
  }
  return p;
}

}  // namespace calibrar::testing

#endif  // CALIBRAR_TESTS_ORACLES_HPP_
