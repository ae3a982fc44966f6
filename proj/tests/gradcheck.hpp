#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "zhoi/autograd.hpp"
#include "zhoi/rng.hpp"

namespace zhoi::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

/// Central finite-difference check of d loss / d input for every input.
/// Entries are visited exhaustively up to `max_per_input`, then sampled.
/// Relative error is |a - n| / max(|a|, |n|, floor). Disagreements below the
/// roundoff level of the central difference itself (1e3 * DBL_EPSILON * |f| / eps)
/// carry no signal and are counted as agreement.
inline GradCheckResult gradcheck(const std::function<ag::Var()>& loss_fn,
                                 std::vector<std::pair<std::string, ag::Var>> inputs,
                                 double eps = 1e-5, std::size_t max_per_input = 64,
                                 std::uint64_t seed = 1, double floor = 1e-6) {
  for (auto& [name, v] : inputs)
    if (!v.grad().empty()) v.grad_ref().fill(0.0);
  ag::Var loss = loss_fn();
  ag::backward(loss);
  const double noise = 1e3 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::fabs(loss.item())) / eps;
  std::vector<Matrix> analytic;
  for (auto& [name, v] : inputs)
    analytic.push_back(v.grad().empty() ? Matrix(v.rows(), v.cols()) : v.grad());

  GradCheckResult res;
  Rng rng(seed);
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    auto& [name, v] = inputs[p];
    Matrix& val = v.mutable_value();
    std::vector<std::size_t> idx(val.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > max_per_input) {
      rng.shuffle(idx.begin(), idx.end());
      idx.resize(max_per_input);
    }
    for (std::size_t i : idx) {
      const double orig = val[i];
      double fp, fm;
      {
        ag::NoGradGuard ng;
        val[i] = orig + eps;
        fp = loss_fn().item();
        val[i] = orig - eps;
        fm = loss_fn().item();
      }
      val[i] = orig;
      const double num = (fp - fm) / (2 * eps);
      const double a = analytic[p][i];
      const double diff = std::fabs(a - num);
      const double rel = diff <= noise ? 0.0 : diff / std::max({std::fabs(a), std::fabs(num), floor});
      ++res.checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(a) +
                    " numeric=" + std::to_string(num);
      }
    }
  }
  return res;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& x : m.storage()) x = scale * rng.normal();
  return m;
}

}  // namespace zhoi::testing
