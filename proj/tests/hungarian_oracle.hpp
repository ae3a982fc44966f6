#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "zhoi/matching_and_loss.hpp"

namespace zhoi::testing {

// Every injection of min(n, m) pairs, by recursion over rows (a row may be
// skipped while rows are in surplus); returns the minimum total and the lexicographically smallest
// row-sorted assignment attaining it (ties within 1e-9 relative).
struct Brute {
  double best = std::numeric_limits<double>::infinity();
  Assignment arg;
};

inline void enumerate(const Matrix& c, std::size_t r, std::vector<bool>& used_cols, std::size_t remaining,
                      Assignment& cur, double acc, Brute& out) {
  if (remaining == 0) {
    Assignment sorted = cur;
    std::sort(sorted.begin(), sorted.end());
    if (!std::isfinite(out.best)) {
      out.best = acc;
      out.arg = sorted;
      return;
    }
    const double tol = 1e-9 * std::max(1.0, std::abs(out.best));
    if (acc < out.best - tol) {
      out.best = acc;
      out.arg = sorted;
    } else if (std::abs(acc - out.best) <= tol && sorted < out.arg) {
      out.arg = sorted;
    }
    return;
  }
  if (r >= c.rows()) return;
  // Row r either takes a free column or (when rows are in surplus) is skipped.
  for (std::size_t j = 0; j < c.cols(); ++j) {
    if (used_cols[j]) continue;
    used_cols[j] = true;
    cur.emplace_back(r, j);
    enumerate(c, r + 1, used_cols, remaining - 1, cur, acc + c(r, j), out);
    cur.pop_back();
    used_cols[j] = false;
  }
  if (c.rows() - r > remaining) enumerate(c, r + 1, used_cols, remaining, cur, acc, out);
}

inline Brute brute_force(const Matrix& c) {
  Brute b;
  std::vector<bool> uc(c.cols(), false);
  Assignment cur;
  enumerate(c, 0, uc, std::min(c.rows(), c.cols()), cur, 0.0, b);
  return b;
}

}  // namespace zhoi::testing
