/* Copyright 2026 The polyrefine Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Exhaustive assignment oracle: enumerates every injective assignment of the
// smaller side into the larger one in lexicographic order and keeps the first
// minimum. Totals are summed in ground-truth order.

#pragma once

#include <algorithm>
#include <limits>
#include <utility>
#include <vector>

#include "polyrefine/autodiff.hpp"

namespace polyrefine::testing {

struct BruteForceResult {
  std::vector<std::pair<int, int>> pairs;  // (prediction, ground truth), by ground truth
  double total_cost = std::numeric_limits<double>::infinity();
};

inline BruteForceResult brute_force_assignment(const ad::Matrix& c) {
  const int n = int(c.rows()), k = int(c.cols());
  BruteForceResult best;
  if (n == 0 || k == 0) {
    best.total_cost = 0.0;
    return best;
  }
  // Assign each element of the smaller side (in index order) to a distinct
  // element of the larger side.
  const bool by_gt = k <= n;
  const int small = by_gt ? k : n, large = by_gt ? n : k;
  std::vector<int> choice(std::size_t(small), -1);
  std::vector<char> used(std::size_t(large), 0);
  auto evaluate = [&] {
    std::vector<std::pair<int, int>> pairs;
    for (int s = 0; s < small; ++s) {
      pairs.emplace_back(by_gt ? choice[std::size_t(s)] : s, by_gt ? s : choice[std::size_t(s)]);
    }
    std::sort(pairs.begin(), pairs.end(), [](auto a, auto b) { return a.second < b.second; });
    double total = 0.0;
    for (auto [i, j] : pairs) total += c(i, j);
    if (total < best.total_cost) best = {pairs, total};
  };
  auto rec = [&](auto&& self, int s) -> void {
    if (s == small) {
      evaluate();
      return;
    }
    for (int l = 0; l < large; ++l) {
      if (used[std::size_t(l)]) continue;
      used[std::size_t(l)] = 1;
      choice[std::size_t(s)] = l;
      self(self, s + 1);
      used[std::size_t(l)] = 0;
    }
  };
  rec(rec, 0);
  return best;
}

}  // namespace polyrefine::testing
