#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "hungarian_oracle.hpp"
#include "zhoi/errors.hpp"
#include "zhoi/matching_and_loss.hpp"

using namespace zhoi;
using zhoi::testing::gradcheck;
using zhoi::testing::random_matrix;
using zhoi::testing::Brute;
using zhoi::testing::brute_force;

namespace {

Predictions random_predictions(Rng& rng, std::size_t batch, std::size_t n, std::size_t classes, std::size_t verbs,
                               std::size_t dclip) {
  Predictions p;
  p.batch = batch;
  Matrix bh(batch * n, 4), bo(batch * n, 4);
  for (Matrix* m : {&bh, &bo})
    for (std::size_t r = 0; r < m->rows(); ++r) {
      (*m)(r, 0) = rng.uniform(0.3, 0.7);
      (*m)(r, 1) = rng.uniform(0.3, 0.7);
      (*m)(r, 2) = rng.uniform(0.1, 0.4);
      (*m)(r, 3) = rng.uniform(0.1, 0.4);
    }
  p.boxes_h = ag::leaf(bh);
  p.boxes_o = ag::leaf(bo);
  p.object_logits = ag::leaf(random_matrix(batch * n, classes + 1, rng));
  p.human_logit = ag::leaf(random_matrix(batch * n, 1, rng));
  p.verb_logits = ag::leaf(random_matrix(batch * n, verbs, rng));
  p.q_proj = ag::leaf(random_matrix(batch * n, dclip, rng));
  return p;
}

GtPair random_gt(Rng& rng, std::size_t classes, std::size_t verbs) {
  auto box = [&] {
    return geometry::CenterBox{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.4),
                               rng.uniform(0.1, 0.4)};
  };
  GtPair g{box(), box(), rng.below(classes), {}};
  g.verbs.push_back(rng.below(verbs));
  return g;
}

}  // namespace

TEST_CASE("hungarian small cases") {
  CHECK(hungarian_solve(Matrix(1, 1, 5.0)) == Assignment{{0, 0}});
  const Matrix c(2, 2, std::vector<double>{1, 2, 2, 1});
  CHECK(hungarian_solve(c) == Assignment{{0, 0}, {1, 1}});
  CHECK(assignment_cost(c, hungarian_solve(c)) == 2.0);
  CHECK(hungarian_solve(Matrix(0, 3)).empty());
  CHECK(hungarian_solve(Matrix(3, 0)).empty());
}

TEST_CASE("hungarian rejects non-finite costs") {
  Matrix c(2, 2, 1.0);
  c(1, 0) = std::nan("");
  CHECK_THROWS_AS(hungarian_solve(c), ValidationError);
  c(1, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(hungarian_solve(c), ValidationError);
}

TEST_CASE("hungarian equals exhaustive search including the tie-break") {
  Rng rng(20);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(6), m = 1 + rng.below(6);
    Matrix c(n, m);
    // Half the trials use small integers so that ties are common.
    const bool ties = trial % 2 == 0;
    for (double& x : c.storage()) x = ties ? static_cast<double>(rng.below(4)) : rng.uniform(-2, 5);
    const Assignment a = hungarian_solve(c);
    const Brute b = brute_force(c);
    INFO("trial " << trial << " " << n << "x" << m);
    CHECK(a.size() == std::min(n, m));
    CHECK(assignment_cost(c, a) == doctest::Approx(b.best).epsilon(1e-12));
    CHECK(a == b.arg);
  }
}

TEST_CASE("match cost: perfect prediction is the row minimum, zero weights give zero") {
  Rng rng(21);
  Predictions p = random_predictions(rng, 1, 4, 3, 5, 2);
  GroundTruth gt{random_gt(rng, 3, 5), random_gt(rng, 3, 5)};
  // Make query 2 an exact copy of GT 1.
  const GtPair& g = gt[1];
  const double hb[4] = {g.human.cx, g.human.cy, g.human.w, g.human.h};
  const double ob[4] = {g.object.cx, g.object.cy, g.object.w, g.object.h};
  for (std::size_t k = 0; k < 4; ++k) {
    p.boxes_h.mutable_value()(2, k) = hb[k];
    p.boxes_o.mutable_value()(2, k) = ob[k];
  }
  for (std::size_t c = 0; c < 4; ++c) p.object_logits.mutable_value()(2, c) = c == g.object_id ? 60.0 : -60.0;
  for (std::size_t a = 0; a < 5; ++a)
    p.verb_logits.mutable_value()(2, a) = std::count(g.verbs.begin(), g.verbs.end(), a) ? 60.0 : -60.0;
  const Matrix c = match_cost(p, 0, gt, LossWeights{});
  for (std::size_t q = 0; q < 4; ++q) CHECK(c(2, 1) <= c(q, 1));
  CHECK(c(2, 1) == doctest::Approx(-1.0).epsilon(1e-12));

  LossWeights zero{0, 0, 0, 0, 0, 0.1, 0.25, 2};
  CHECK(match_cost(p, 0, gt, zero) == Matrix(4, 2));
}

TEST_CASE("match cost one-by-one equals hand algebra") {
  Predictions p;
  p.batch = 1;
  p.boxes_h = ag::constant(Matrix(1, 4, std::vector<double>{0.5, 0.5, 0.2, 0.2}));
  p.boxes_o = ag::constant(Matrix(1, 4, std::vector<double>{0.5, 0.5, 0.2, 0.2}));
  p.object_logits = ag::constant(Matrix(1, 3, std::vector<double>{0.0, 0.0, 0.0}));
  p.human_logit = ag::constant(Matrix(1, 1));
  p.verb_logits = ag::constant(Matrix(1, 2, std::vector<double>{0.0, 0.0}));
  // GT human shifted by 0.1 in x: L1 = 0.1; boxes of width 0.2 overlapping by
  // half -> IoU = 1/3, hull area 0.3*0.2 = union -> GIoU = 1/3.
  GroundTruth gt{GtPair{{0.6, 0.5, 0.2, 0.2}, {0.5, 0.5, 0.2, 0.2}, 1, {0}}};
  const Matrix c = match_cost(p, 0, gt, LossWeights{});
  const double expected = 2.5 * 0.1 + (2.0 - 1.0 / 3.0 - 1.0) + (1.0 - 1.0 / 3.0) + -(0.5 + 0.5) / 2.0;
  CHECK(c(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("losses vanish on perfect boxes and every term has correct gradients") {
  Rng rng(22);
  for (ReconLoss recon : {ReconLoss::L1, ReconLoss::L2, ReconLoss::L1L2, ReconLoss::None}) {
    Predictions p = random_predictions(rng, 2, 3, 4, 5, 3);
    std::vector<GroundTruth> gts{{random_gt(rng, 4, 5), random_gt(rng, 4, 5)}, {random_gt(rng, 4, 5)}};
    std::vector<Assignment> as{{{0, 1}, {2, 0}}, {{1, 0}}};
    const Matrix sp = random_matrix(2, 3, rng);
    auto f = [&] { return compute_losses(p, gts, as, sp, LossWeights{}, recon).total; };
    auto r = gradcheck(f,
                       {{"bh", p.boxes_h},
                        {"bo", p.boxes_o},
                        {"obj", p.object_logits},
                        {"hum", p.human_logit},
                        {"verb", p.verb_logits},
                        {"q", p.q_proj}},
                       1e-6, 64);
    INFO(to_string(recon) << " " << r.worst);
    CHECK(r.max_rel_error < 1e-4);
  }

  Predictions p = random_predictions(rng, 1, 2, 3, 4, 2);
  GroundTruth gt{random_gt(rng, 3, 4)};
  const GtPair& g = gt[0];
  const double hb[4] = {g.human.cx, g.human.cy, g.human.w, g.human.h};
  const double ob[4] = {g.object.cx, g.object.cy, g.object.w, g.object.h};
  for (std::size_t k = 0; k < 4; ++k) {
    p.boxes_h.mutable_value()(1, k) = hb[k];
    p.boxes_o.mutable_value()(1, k) = ob[k];
  }
  const LossTerms t = compute_losses(p, {gt}, {{{1, 0}}}, Matrix(1, 2), LossWeights{}, ReconLoss::L1);
  CHECK(t.box == 0.0);
  CHECK(std::abs(t.giou) < 1e-15);
}

TEST_CASE("total loss is linear in each weight and recon variants match their formulas") {
  Rng rng(23);
  Predictions p = random_predictions(rng, 1, 4, 3, 4, 3);
  std::vector<GroundTruth> gts{{random_gt(rng, 3, 4), random_gt(rng, 3, 4)}};
  std::vector<Assignment> as{{{0, 1}, {3, 0}}};
  const Matrix sp = random_matrix(1, 3, rng);
  LossWeights w;
  const LossTerms base = compute_losses(p, gts, as, sp, w, ReconLoss::L1);
  LossWeights w2 = w;
  w2.verb *= 2;
  const double doubled = compute_losses(p, gts, as, sp, w2, ReconLoss::L1).total.item();
  CHECK(doubled - base.total.item() == doctest::Approx(base.verb).epsilon(1e-12));
  w2 = w;
  w2.box *= 2;
  CHECK(compute_losses(p, gts, as, sp, w2, ReconLoss::L1).total.item() - base.total.item() ==
        doctest::Approx(2.5 * base.box).epsilon(1e-12));

  // lambda_re = 0 equals the no-reconstruction setting.
  w2 = w;
  w2.recon = 0;
  CHECK(compute_losses(p, gts, as, sp, w2, ReconLoss::L1).total.item() ==
        doctest::Approx(compute_losses(p, gts, as, sp, w, ReconLoss::None).total.item()).epsilon(1e-15));

  // Recon oracles: mean over queries of the row L1 sum / row sum of squares.
  double l1 = 0, l2 = 0;
  for (std::size_t q = 0; q < 4; ++q)
    for (std::size_t k = 0; k < 3; ++k) {
      const double d = p.q_proj.value()(q, k) - sp(0, k);
      l1 += std::abs(d);
      l2 += d * d;
    }
  CHECK(base.recon == doctest::Approx(l1 / 4).epsilon(1e-12));
  CHECK(compute_losses(p, gts, as, sp, w, ReconLoss::L2).recon == doctest::Approx(l2 / 4).epsilon(1e-12));
  CHECK(compute_losses(p, gts, as, sp, w, ReconLoss::L1L2).recon == doctest::Approx((l1 + l2) / 8).epsilon(1e-12));
  CHECK(compute_losses(p, gts, as, sp, w, ReconLoss::None).recon == 0.0);
  for (double v : {base.box, base.giou, base.object, base.verb, base.recon}) CHECK(v >= 0.0);
}

TEST_CASE("loss is invariant to permuting queries together with the assignment") {
  Rng rng(24);
  Predictions p = random_predictions(rng, 1, 5, 3, 4, 3);
  std::vector<GroundTruth> gts{{random_gt(rng, 3, 4), random_gt(rng, 3, 4)}};
  const Matrix sp = random_matrix(1, 3, rng);
  const std::vector<std::size_t> perm{4, 2, 0, 3, 1};  // new row i holds old row perm[i]
  auto permute = [&](const Var& v) {
    Matrix m(v.rows(), v.cols());
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) m(i, j) = v.value()(perm[i], j);
    return ag::constant(m);
  };
  Predictions q = p;
  q.boxes_h = permute(p.boxes_h);
  q.boxes_o = permute(p.boxes_o);
  q.object_logits = permute(p.object_logits);
  q.human_logit = permute(p.human_logit);
  q.verb_logits = permute(p.verb_logits);
  q.q_proj = permute(p.q_proj);
  // Old rows 1 and 3 matched; they now live at rows 4 and 3.
  const double a = compute_losses(p, gts, {{{1, 0}, {3, 1}}}, sp, LossWeights{}, ReconLoss::L1).total.item();
  const double b = compute_losses(q, gts, {{{3, 1}, {4, 0}}}, sp, LossWeights{}, ReconLoss::L1).total.item();
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("recon loss names round trip") {
  for (ReconLoss r : {ReconLoss::None, ReconLoss::L1, ReconLoss::L2, ReconLoss::L1L2})
    CHECK(parse_recon_loss(to_string(r)) == r);
  CHECK_THROWS_AS(parse_recon_loss("l3"), ValidationError);
}
