#include "zhoi/matching_and_loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "zhoi/errors.hpp"

namespace zhoi {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Shortest augmenting path Hungarian method with potentials for n <= m.
// cost is n x m row-major; returns the column of each row.
std::vector<std::size_t> solve_rows(const std::vector<double>& cost, std::size_t n, std::size_t m) {
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) col[p[j] - 1] = j - 1;
  }
  return col;
}

// Optimal assignment on an arbitrary rectangle as (row, col) pairs.
Assignment solve_any(const Matrix& c) {
  const std::size_t n = c.rows(), m = c.cols();
  Assignment out;
  if (n == 0 || m == 0) return out;
  if (n <= m) {
    const auto col = solve_rows(c.storage(), n, m);
    for (std::size_t r = 0; r < n; ++r) out.emplace_back(r, col[r]);
  } else {
    std::vector<double> t(n * m);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < m; ++k) t[k * n + r] = c(r, k);
    const auto row_of_col = solve_rows(t, m, n);
    for (std::size_t k = 0; k < m; ++k) out.emplace_back(row_of_col[k], k);
    std::sort(out.begin(), out.end());
  }
  return out;
}

bool same_cost(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); }

}  // namespace

double assignment_cost(const Matrix& cost, const Assignment& a) {
  double s = 0;
  for (const auto& [r, c] : a) s += cost(r, c);
  return s;
}

Assignment hungarian_solve(const Matrix& cost) {
  for (double x : cost.storage()) {
    if (!std::isfinite(x)) throw ValidationError("hungarian_solve: non-finite cost");
  }
  const std::size_t n = cost.rows(), m = cost.cols();
  Assignment best = solve_any(cost);
  const double optimum = assignment_cost(cost, best);
  const std::size_t k = best.size();
  if (k == 0) return best;

  // Lexicographic refinement: walk candidate pairs in (row, col) order and
  // keep each one that still extends to an optimal assignment.
  Assignment fixed;
  std::vector<char> row_used(n, 0), col_used(m, 0);
  double fixed_cost = 0;
  for (std::size_t r = 0; r < n && fixed.size() < k; ++r) {
    for (std::size_t c = 0; c < m && fixed.size() < k; ++c) {
      if (row_used[r] || col_used[c]) continue;
      std::vector<std::size_t> rows, cols;
      for (std::size_t i = 0; i < n; ++i)
        if (!row_used[i] && i != r) rows.push_back(i);
      for (std::size_t j = 0; j < m; ++j)
        if (!col_used[j] && j != c) cols.push_back(j);
      const std::size_t need = k - fixed.size() - 1;
      double rest = 0;
      if (need > 0) {
        // Rows skipped earlier cannot appear in any optimal completion (they
        // had no feasible column under a smaller prefix), so the free
        // sub-problem over all unused rows and columns decides feasibility.
        Matrix sub(rows.size(), cols.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
          for (std::size_t j = 0; j < cols.size(); ++j) sub(i, j) = cost(rows[i], cols[j]);
        const Assignment a = solve_any(sub);
        if (a.size() < need) continue;
        rest = assignment_cost(sub, a);
      }
      if (same_cost(fixed_cost + cost(r, c) + rest, optimum)) {
        fixed.emplace_back(r, c);
        fixed_cost += cost(r, c);
        row_used[r] = col_used[c] = 1;
      }
    }
  }
  if (fixed.size() == k && same_cost(fixed_cost, optimum)) return fixed;
  return best;
}

std::string_view to_string(ReconLoss r) {
  switch (r) {
    case ReconLoss::None: return "none";
    case ReconLoss::L1: return "l1";
    case ReconLoss::L2: return "l2";
    case ReconLoss::L1L2: return "l1+l2";
  }
  return "none";
}

ReconLoss parse_recon_loss(std::string_view s) {
  if (s == "none") return ReconLoss::None;
  if (s == "l1" || s == "L1") return ReconLoss::L1;
  if (s == "l2" || s == "L2") return ReconLoss::L2;
  if (s == "l1+l2" || s == "L1+L2" || s == "l1l2") return ReconLoss::L1L2;
  throw ValidationError("unknown reconstruction loss '" + std::string(s) + "'");
}

namespace {

std::array<double, 4> as_array(const geometry::CenterBox& b) { return {b.cx, b.cy, b.w, b.h}; }

geometry::CornerBox corners_of_row(const Matrix& m, std::size_t r) {
  return geometry::to_corners({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Matrix match_cost(const Predictions& pred, std::size_t image, const GroundTruth& gt, const LossWeights& w) {
  const std::size_t n = pred.queries();
  const std::size_t verbs = pred.verb_logits.cols();
  const std::size_t background = pred.object_logits.cols() - 1;
  Matrix cost(n, gt.size());
  for (std::size_t q = 0; q < n; ++q) {
    const std::size_t row = image * n + q;
    const auto logits = pred.object_logits.value().row(row);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double l : logits) z += std::exp(l - mx);
    std::vector<double> p(verbs);
    for (std::size_t a = 0; a < verbs; ++a) p[a] = sigmoid(pred.verb_logits.value()(row, a));
    const auto ph = corners_of_row(pred.boxes_h.value(), row);
    const auto po = corners_of_row(pred.boxes_o.value(), row);

    for (std::size_t m = 0; m < gt.size(); ++m) {
      const GtPair& g = gt[m];
      if (g.object_id >= background) throw ValidationError("match_cost: object id out of range");
      double l1 = 0;
      const auto gh = as_array(g.human), go = as_array(g.object);
      for (std::size_t k = 0; k < 4; ++k) {
        l1 += std::abs(pred.boxes_h.value()(row, k) - gh[k]) + std::abs(pred.boxes_o.value()(row, k) - go[k]);
      }
      const double giou_term = 2.0 - geometry::giou(ph, geometry::to_corners(g.human)) -
                               geometry::giou(po, geometry::to_corners(g.object));
      const double prob_obj = std::exp(logits[g.object_id] - mx) / z;

      // Mean of the positive-label and negative-label agreement, negated.
      std::vector<double> y(verbs, 0.0);
      for (auto v : g.verbs) y.at(v) = 1.0;
      double pos = 0, npos = 0, neg = 0, nneg = 0;
      for (std::size_t a = 0; a < verbs; ++a) {
        pos += p[a] * y[a];
        npos += y[a];
        neg += (1 - p[a]) * (1 - y[a]);
        nneg += 1 - y[a];
      }
      const double verb_cost = -((npos > 0 ? pos / npos : 0.0) + (nneg > 0 ? neg / nneg : 0.0)) / 2.0;

      cost(q, m) = w.box * l1 + w.giou * giou_term + w.object * (1.0 - prob_obj) + w.verb * verb_cost;
    }
  }
  return cost;
}

LossTerms compute_losses(const Predictions& pred, const std::vector<GroundTruth>& gts,
                         const std::vector<Assignment>& assignments, const Matrix& spatial_mean,
                         const LossWeights& w, ReconLoss recon) {
  const std::size_t batch = pred.batch;
  const std::size_t n = pred.queries();
  const std::size_t verbs = pred.verb_logits.cols();
  const std::size_t classes = pred.object_logits.cols();
  if (gts.size() != batch || assignments.size() != batch) throw ValidationError("compute_losses: batch mismatch");

  std::vector<std::size_t> rows;
  Matrix tgt_h(0, 4), tgt_o(0, 4);
  std::vector<double> th, to;
  std::vector<std::size_t> obj_target(batch * n, classes - 1);
  Matrix human_target(batch * n, 1, 0.0);
  Matrix verb_target(batch * n, verbs, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (const auto& [q, m] : assignments[b]) {
      if (q >= n || m >= gts[b].size()) throw ValidationError("compute_losses: assignment out of range");
      const GtPair& g = gts[b][m];
      const std::size_t row = b * n + q;
      rows.push_back(row);
      for (double x : as_array(g.human)) th.push_back(x);
      for (double x : as_array(g.object)) to.push_back(x);
      obj_target[row] = g.object_id;
      human_target(row, 0) = 1.0;
      for (auto v : g.verbs) verb_target(row, v) = 1.0;
    }
  }
  const std::size_t matched = rows.size();
  LossTerms out;
  std::vector<Var> terms;

  if (matched > 0) {
    const Matrix gh(matched, 4, th), go(matched, 4, to);
    Var bh = ag::gather_rows(pred.boxes_h, rows);
    Var bo = ag::gather_rows(pred.boxes_o, rows);
    Var l1 = ag::scale(ag::add(ag::sum(ag::abs(ag::sub(bh, ag::constant(gh)))),
                               ag::sum(ag::abs(ag::sub(bo, ag::constant(go))))),
                       1.0 / static_cast<double>(matched));
    Var giou = ag::add(ag::sum(ag::giou_rows(bh, gh)), ag::sum(ag::giou_rows(bo, go)));
    Var lu = ag::scale(ag::add_scalar(ag::scale(giou, -1.0), 2.0 * static_cast<double>(matched)),
                       1.0 / static_cast<double>(matched));
    out.box = l1.item();
    out.giou = lu.item();
    terms.push_back(ag::scale(l1, w.box));
    terms.push_back(ag::scale(lu, w.giou));
  }

  std::vector<double> class_weight(classes, 1.0);
  class_weight.back() = w.eos;
  Var lo = ag::add(ag::cross_entropy(pred.object_logits, obj_target, class_weight),
                   ag::bce_with_logits(pred.human_logit, human_target));
  out.object = lo.item();
  terms.push_back(ag::scale(lo, w.object));

  double positives = 0;
  for (double y : verb_target.storage()) positives += y;
  Var li = ag::scale(ag::sigmoid_focal_loss(pred.verb_logits, verb_target, w.focal_alpha, w.focal_gamma),
                     1.0 / std::max(1.0, positives));
  out.verb = li.item();
  terms.push_back(ag::scale(li, w.verb));

  if (recon != ReconLoss::None) {
    if (spatial_mean.rows() != batch || spatial_mean.cols() != pred.q_proj.cols()) {
      throw ValidationError("compute_losses: spatial mean shape");
    }
    Matrix target(batch * n, spatial_mean.cols());
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t q = 0; q < n; ++q)
        std::copy(spatial_mean.row(b).begin(), spatial_mean.row(b).end(), target.row(b * n + q).begin());
    Var diff = ag::sub(pred.q_proj, ag::constant(target));
    const double per_query = 1.0 / static_cast<double>(batch * n);
    Var l1 = ag::scale(ag::sum(ag::abs(diff)), per_query);
    Var l2 = ag::scale(ag::sum(ag::square(diff)), per_query);
    Var lre = recon == ReconLoss::L1 ? l1 : recon == ReconLoss::L2 ? l2 : ag::scale(ag::add(l1, l2), 0.5);
    out.recon = lre.item();
    terms.push_back(ag::scale(lre, w.recon));
  }

  out.total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) out.total = ag::add(out.total, terms[i]);
  return out;
}

}  // namespace zhoi
