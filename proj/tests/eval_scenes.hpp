#pragma once

// Hand-built evaluation scenes with their APs computed by hand, shared by the
// unit tests and the acceptance runner.

#include <string>
#include <vector>

#include "zhoi/inference_and_eval.hpp"
#include "zhoi/label_space.hpp"
#include "zhoi/rng.hpp"

namespace zhoi::testing {

// hold-cup (20 train instances), ride-horse (3: rare), hold-horse (15).
inline LabelSpace eval_toy_space() {
  return LabelSpace::build({"hold", "ride"}, {"cup", "horse"}, {{0, 0}, {1, 1}, {0, 1}}, {20, 3, 15}, 10);
}

struct BoxPair {
  geometry::CornerBox h, o;
};

inline const BoxPair kP1{{0.1, 0.1, 0.4, 0.6}, {0.5, 0.2, 0.8, 0.5}};
inline const BoxPair kP2{{0.2, 0.3, 0.5, 0.9}, {0.1, 0.05, 0.3, 0.25}};
inline const BoxPair kP3{{0.6, 0.4, 0.9, 0.95}, {0.3, 0.6, 0.55, 0.9}};
inline const BoxPair kP4{{0.05, 0.5, 0.3, 0.95}, {0.7, 0.7, 0.95, 0.95}};
// kP1 with the object moved right by half its width: object IoU 1/3.
inline const BoxPair kP1Shifted{{0.1, 0.1, 0.4, 0.6}, {0.65, 0.2, 0.95, 0.5}};

inline Detection det(const std::string& img, const BoxPair& p, std::size_t hoi, const LabelSpace& s, double score) {
  return Detection{img, p.h, p.o, s.hoi(hoi).second, hoi, score};
}

inline GtInstance gti(const BoxPair& p, std::size_t hoi) { return GtInstance{p.h, p.o, hoi}; }

struct EvalScene {
  std::string name;
  EvalGroundTruth gt;
  std::vector<Detection> dets;
  // Expected values.
  double default_full, default_rare, default_non_rare;
  double known_full, known_rare, known_non_rare;
};

inline std::vector<EvalScene> hand_scenes() {
  const LabelSpace s = eval_toy_space();
  std::vector<EvalScene> out;

  // A: one GT; a wrong-box detection outranks the right one.
  // PR: (FP .9, TP .8) -> recall 0, 1 / precision 0, 1/2 -> AP 1/2.
  {
    EvalScene e{"fp-then-tp", {}, {}, 0.5, 0.0, 0.5, 0.5, 0.0, 0.5};
    e.gt.image_ids = {"a"};
    e.gt.instances = {{gti(kP1, 0)}};
    e.dets = {det("a", kP2, 0, s, 0.9), det("a", kP1, 0, s, 0.8)};
    out.push_back(e);
  }
  // B: duplicates and a Known Object filter.
  //   hold-cup, n_gt 2: TP .9, duplicate FP .8, TP .7
  //     precision 1, 1/2, 2/3 -> envelope 1, 2/3, 2/3 -> AP = 1/2 + 1/2 * 2/3 = 5/6
  //   hold-horse, n_gt 1: FP .95 on image x (no horse), TP .6 on image y
  //     Default AP 1/2; Known Object drops image x -> AP 1
  //   ride-horse, n_gt 1, no detections -> AP 0 (rare)
  {
    EvalScene e{"duplicates-known-object", {}, {}, 0, 0, 0, 0, 0, 0};
    e.gt.image_ids = {"x", "y"};
    e.gt.instances = {{gti(kP1, 0), gti(kP2, 0)}, {gti(kP3, 2), gti(kP4, 1)}};
    e.dets = {det("x", kP1, 0, s, 0.9), det("x", kP1, 0, s, 0.8), det("x", kP2, 0, s, 0.7),
              det("x", kP3, 2, s, 0.95), det("y", kP3, 2, s, 0.6)};
    e.default_full = (5.0 / 6.0 + 0.5 + 0.0) / 3.0;
    e.default_rare = 0.0;
    e.default_non_rare = (5.0 / 6.0 + 0.5) / 2.0;
    e.known_full = (5.0 / 6.0 + 1.0 + 0.0) / 3.0;
    e.known_rare = 0.0;
    e.known_non_rare = (5.0 / 6.0 + 1.0) / 2.0;
    out.push_back(e);
  }
  // C: three images, one hold-cup GT each; one detection misses on IoU.
  //   TP .9 (p), FP .8 (q, object IoU 1/3), TP .7 (r), FP .6 (duplicate on p)
  //   recall 1/3, 1/3, 2/3, 2/3; precision 1, 1/2, 2/3, 1/2
  //   envelope 1, 2/3, 2/3, 1/2 -> AP = 1/3 + 1/3 * 2/3 = 5/9
  {
    EvalScene e{"iou-miss", {}, {}, 5.0 / 9.0, 0.0, 5.0 / 9.0, 5.0 / 9.0, 0.0, 5.0 / 9.0};
    e.gt.image_ids = {"p", "q", "r"};
    e.gt.instances = {{gti(kP1, 0)}, {gti(kP1, 0)}, {gti(kP2, 0)}};
    e.dets = {det("p", kP1, 0, s, 0.9), det("q", kP1Shifted, 0, s, 0.8), det("r", kP2, 0, s, 0.7),
              det("p", kP1, 0, s, 0.6)};
    out.push_back(e);
  }
  return out;
}

/// Random scene over `space`: a few images with GT pairs and noisy
/// detections (jittered copies of GT, random boxes, random classes).
inline std::pair<EvalGroundTruth, std::vector<Detection>> random_eval_scene(const LabelSpace& space, Rng& rng) {
  EvalGroundTruth gt;
  std::vector<Detection> dets;
  auto box = [&] {
    const double x = rng.uniform(0, 0.7), y = rng.uniform(0, 0.7);
    return geometry::CornerBox{x, y, x + rng.uniform(0.1, 0.3), y + rng.uniform(0.1, 0.3)};
  };
  auto jitter = [&](geometry::CornerBox b) {
    const double dx = rng.uniform(-0.05, 0.05), dy = rng.uniform(-0.05, 0.05);
    return geometry::CornerBox{b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy};
  };
  const std::size_t images = 2 + rng.below(5);
  for (std::size_t i = 0; i < images; ++i) {
    const std::string id = "img" + std::to_string(i);
    gt.image_ids.push_back(id);
    auto& list = gt.instances.emplace_back();
    const std::size_t pairs = rng.below(4);
    for (std::size_t k = 0; k < pairs; ++k) {
      GtInstance g{box(), box(), rng.below(space.num_hois())};
      list.push_back(g);
      const std::size_t copies = rng.below(3);
      for (std::size_t c = 0; c < copies; ++c) {
        const std::size_t hoi = rng.uniform() < 0.7 ? g.hoi_id : rng.below(space.num_hois());
        dets.push_back({id, jitter(g.h_box), jitter(g.o_box), space.hoi(hoi).second, hoi, rng.uniform()});
      }
    }
    const std::size_t noise = rng.below(4);
    for (std::size_t k = 0; k < noise; ++k) {
      const std::size_t hoi = rng.below(space.num_hois());
      dets.push_back({id, box(), box(), space.hoi(hoi).second, hoi, rng.uniform()});
    }
  }
  return {gt, dets};
}

}  // namespace zhoi::testing
