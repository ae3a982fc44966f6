#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "eval_scenes.hpp"
#include "gradcheck.hpp"
#include "zhoi/inference_and_eval.hpp"

using namespace zhoi;
using namespace zhoi::testing;

TEST_CASE("average precision small cases") {
  CHECK(average_precision({true}, 1) == 1.0);
  CHECK(average_precision({false, true}, 1) == 0.5);
  CHECK(average_precision({}, 3) == 0.0);
  CHECK(average_precision({true, false, true, false}, 3) == doctest::Approx(5.0 / 9.0).epsilon(1e-14));
  // Recall never reaching 1 caps the area.
  CHECK(average_precision({true}, 4) == 0.25);
}

TEST_CASE("final scores follow the sum and product compositions") {
  const LabelSpace s = eval_toy_space();
  Matrix probs(1, 3, std::vector<double>{0.3, 0.6, 0.1});
  Matrix verbs(1, 2, std::vector<double>{std::log(0.2 / 0.8), 0.0});
  const Matrix out = final_scores({0.5}, probs, verbs, s);
  CHECK(out(0, 0) == doctest::Approx(1.0).epsilon(1e-15));  // 0.5 + 0.3 + 0.2
  CHECK(final_scores({0.0}, Matrix(1, 3), Matrix(1, 2, -1e9), s) == Matrix(1, 3));

  Rng rng(1);
  const Matrix p = random_matrix(5, 3, rng), v = random_matrix(5, 2, rng);
  std::vector<double> sh(5);
  for (double& x : sh) x = rng.uniform();
  for (Fusion f : {Fusion::Sum, Fusion::Product}) {
    const Matrix got = final_scores(sh, p, v, s, f);
    for (std::size_t n = 0; n < 5; ++n)
      for (std::size_t vb = 0; vb < 2; ++vb)
        for (std::size_t o = 0; o < 2; ++o) {
          const auto h = s.hoi_id(vb, o);
          if (!h) continue;
          const double sig = 1.0 / (1.0 + std::exp(-v(n, vb)));
          const double expect = f == Fusion::Sum ? sh[n] + p(n, o) + sig : sh[n] * p(n, o) * sig;
          CHECK(got(n, *h) == expect);
        }
  }
}

TEST_CASE("assemble detections keeps the top k of a full sort") {
  const LabelSpace s = eval_toy_space();
  Rng rng(2);
  Matrix boxes(6, 4);
  for (std::size_t r = 0; r < 6; ++r) boxes(r, 0) = boxes(r, 1) = 0.5, boxes(r, 2) = boxes(r, 3) = 0.2;
  Matrix scores(6, 3);
  for (double& x : scores.storage()) x = std::round(rng.uniform() * 4) / 4;  // many ties
  const auto all = assemble_detections("i", boxes, boxes, scores, s, 1000);
  CHECK(all.size() == 18);
  std::vector<std::size_t> idx(18);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  for (std::size_t k : {1u, 5u, 18u}) {
    const auto top = assemble_detections("i", boxes, boxes, scores, s, k);
    REQUIRE(top.size() == k);
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(top[i].hoi_id == idx[i] % 3);
      CHECK(top[i].score == scores[idx[i]]);
    }
  }
}

TEST_CASE("match detections: single match rule") {
  const LabelSpace s = eval_toy_space();
  std::vector<GtInstance> g{gti(kP1, 0)};
  CHECK(match_detections({det("a", kP1, 0, s, 0.9)}, g) == std::vector<bool>{true});
  CHECK(match_detections({det("a", kP1, 0, s, 0.9), det("a", kP1, 0, s, 0.8)}, g) == std::vector<bool>{true, false});
  CHECK(match_detections({det("a", kP1Shifted, 0, s, 0.9)}, g) == std::vector<bool>{false});
  CHECK(match_detections({det("a", kP1, 2, s, 0.9)}, g) == std::vector<bool>{false});
}

namespace {

double iou_oracle(const geometry::CornerBox& a, const geometry::CornerBox& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  return inter / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter);
}

// Greedy in score order; among eligible GTs take the largest min-IoU, the
// lowest index on ties.
std::vector<bool> greedy_oracle(const std::vector<Detection>& d, const std::vector<GtInstance>& g) {
  std::vector<bool> out(d.size(), false), used(g.size(), false);
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (used[j] || g[j].hoi_id != d[i].hoi_id) continue;
      const double q = std::min(iou_oracle(d[i].h_box, g[j].h_box), iou_oracle(d[i].o_box, g[j].o_box));
      if (q >= 0.5) cand.emplace_back(-q, j);
    }
    if (cand.empty()) continue;
    const auto best = *std::min_element(cand.begin(), cand.end());
    used[best.second] = true;
    out[i] = true;
  }
  return out;
}

}  // namespace

TEST_CASE("match detections equals the greedy oracle on random scenes") {
  const LabelSpace s = eval_toy_space();
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    auto [gt, dets] = random_eval_scene(s, rng);
    for (std::size_t i = 0; i < gt.image_ids.size(); ++i) {
      std::vector<Detection> d;
      for (const auto& x : dets)
        if (x.image_id == gt.image_ids[i]) d.push_back(x);
      std::sort(d.begin(), d.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
      CHECK(match_detections(d, gt.instances[i]) == greedy_oracle(d, gt.instances[i]));
    }
  }
}

TEST_CASE("evaluate reproduces the hand-computed scenes") {
  const LabelSpace s = eval_toy_space();
  for (const auto& scene : hand_scenes()) {
    INFO(scene.name);
    const EvalReport r = evaluate(scene.dets, scene.gt, s);
    CHECK(r.default_protocol.full.map == doctest::Approx(scene.default_full).epsilon(1e-12));
    CHECK(r.default_protocol.rare.map == doctest::Approx(scene.default_rare).epsilon(1e-12));
    CHECK(r.default_protocol.non_rare.map == doctest::Approx(scene.default_non_rare).epsilon(1e-12));
    CHECK(r.known_object.full.map == doctest::Approx(scene.known_full).epsilon(1e-12));
    CHECK(r.known_object.rare.map == doctest::Approx(scene.known_rare).epsilon(1e-12));
    CHECK(r.known_object.non_rare.map == doctest::Approx(scene.known_non_rare).epsilon(1e-12));
  }
}

TEST_CASE("a perfect detector scores 1 everywhere and empty detections 0") {
  const LabelSpace s = eval_toy_space();
  const auto scene = hand_scenes()[1];
  std::vector<Detection> perfect;
  for (std::size_t i = 0; i < scene.gt.image_ids.size(); ++i)
    for (const auto& g : scene.gt.instances[i])
      perfect.push_back({scene.gt.image_ids[i], g.h_box, g.o_box, s.hoi(g.hoi_id).second, g.hoi_id, 1.0});
  const EvalReport r = evaluate(perfect, scene.gt, s);
  CHECK(r.default_protocol.full.map == 1.0);
  CHECK(r.known_object.full.map == 1.0);
  CHECK(r.default_protocol.rare.map == 1.0);
  CHECK(evaluate({}, scene.gt, s).default_protocol.full.map == 0.0);
}

TEST_CASE("evaluation properties on random scenes") {
  const LabelSpace s = eval_toy_space();
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    auto [gt, dets] = random_eval_scene(s, rng);
    const EvalReport r = evaluate(dets, gt, s);
    // Known Object only removes detections on images lacking the object.
    CHECK(r.known_object.full.map >= r.default_protocol.full.map);
    for (std::size_t h = 0; h < s.num_hois(); ++h)
      if (r.default_protocol.per_hoi_ap[h]) CHECK(*r.known_object.per_hoi_ap[h] >= *r.default_protocol.per_hoi_ap[h]);

    const auto& d = r.default_protocol;
    if (d.full.classes > 0) {
      CHECK(d.full.map * d.full.classes ==
            doctest::Approx(d.rare.map * d.rare.classes + d.non_rare.map * d.non_rare.classes).epsilon(1e-9));
    }

    auto shuffled = dets;
    rng.shuffle(shuffled.begin(), shuffled.end());
    CHECK(evaluate(shuffled, gt, s) == r);

    // A strictly monotone transform of the scores leaves AP unchanged.
    auto squashed = dets;
    for (auto& x : squashed) x.score = std::exp(3 * x.score) - 7;
    CHECK(evaluate(squashed, gt, s) == r);
  }
}

TEST_CASE("seen and unseen means follow the split") {
  const LabelSpace s = eval_toy_space();
  const auto scene = hand_scenes()[1];
  SplitSpec split;
  split.setting = Setting::UC;
  split.unseen_hoi_ids = {2};
  const EvalReport r = evaluate(scene.dets, scene.gt, s, &split);
  CHECK(r.default_protocol.unseen.map == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.default_protocol.seen.map == doctest::Approx((5.0 / 6.0 + 0.0) / 2.0).epsilon(1e-12));
  CHECK(r.setting == Setting::UC);
  const std::string table = format_report(r);
  CHECK(table.find("Unseen") != std::string::npos);
  CHECK(table.find("Known Object") != std::string::npos);
}

TEST_CASE("detections round trip through jsonl") {
  const LabelSpace s = eval_toy_space();
  const auto scene = hand_scenes()[1];
  const auto path = std::filesystem::temp_directory_path() / "zhoi_dets_roundtrip.jsonl";
  write_detections_jsonl(path, scene.dets);
  CHECK(read_detections_jsonl(path, s) == scene.dets);
  std::filesystem::remove(path);
}
