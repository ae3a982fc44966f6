#include "zhoi/inference_and_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

#include "zhoi/errors.hpp"

namespace zhoi {

std::string_view to_string(Fusion f) { return f == Fusion::Sum ? "sum" : "product"; }

Fusion parse_fusion(std::string_view s) {
  if (s == "sum") return Fusion::Sum;
  if (s == "product") return Fusion::Product;
  throw ValidationError("unknown score fusion '" + std::string(s) + "'");
}

Matrix final_scores(const std::vector<double>& s_h, const Matrix& object_probs, const Matrix& verb_logits,
                    const LabelSpace& space, Fusion fusion) {
  const std::size_t n = s_h.size();
  if (object_probs.rows() != n || verb_logits.rows() != n) throw ValidationError("final_scores: row mismatch");
  if (object_probs.cols() < space.num_objects() || verb_logits.cols() != space.num_verbs()) {
    throw ValidationError("final_scores: column mismatch");
  }
  Matrix out(n, space.num_hois());
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t h = 0; h < space.num_hois(); ++h) {
      const auto [v, o] = space.hoi(h);
      const double verb = 1.0 / (1.0 + std::exp(-verb_logits(q, v)));
      out(q, h) = fusion == Fusion::Sum ? s_h[q] + object_probs(q, o) + verb : s_h[q] * object_probs(q, o) * verb;
    }
  }
  return out;
}

std::vector<Detection> assemble_detections(const std::string& image_id, const Matrix& boxes_h,
                                           const Matrix& boxes_o, const Matrix& scores, const LabelSpace& space,
                                           std::size_t top_k) {
  const std::size_t n = scores.rows(), hois = scores.cols();
  if (boxes_h.rows() != n || boxes_o.rows() != n || hois != space.num_hois()) {
    throw ValidationError("assemble_detections: shape mismatch");
  }
  std::vector<std::size_t> order(n * hois);
  std::iota(order.begin(), order.end(), 0);
  // Flat index q*H + h already encodes the (query, hoi) tie-break.
  auto better = [&](std::size_t a, std::size_t b) {
    const double sa = scores[a], sb = scores[b];
    return sa != sb ? sa > sb : a < b;
  };
  const std::size_t keep = std::min(top_k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), better);
  std::vector<Detection> dets;
  dets.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t q = order[i] / hois, h = order[i] % hois;
    Detection d;
    d.image_id = image_id;
    d.h_box = geometry::to_corners({boxes_h(q, 0), boxes_h(q, 1), boxes_h(q, 2), boxes_h(q, 3)});
    d.o_box = geometry::to_corners({boxes_o(q, 0), boxes_o(q, 1), boxes_o(q, 2), boxes_o(q, 3)});
    d.hoi_id = h;
    d.object_id = space.hoi(h).second;
    d.score = scores[order[i]];
    dets.push_back(std::move(d));
  }
  return dets;
}

EvalGroundTruth ground_truth_from(const Dataset& dataset, const LabelSpace& space) {
  EvalGroundTruth gt;
  for (const auto& s : dataset.samples) {
    gt.image_ids.push_back(s.id);
    auto& list = gt.instances.emplace_back();
    for (const auto& p : s.pairs) {
      for (auto v : p.verb_ids) {
        auto h = space.hoi_id(v, p.object_id);
        if (!h) throw ValidationError("image " + s.id + ": (verb " + std::to_string(v) + ", object " +
                                      std::to_string(p.object_id) + ") is not an HOI");
        list.push_back({p.human, p.object, *h});
      }
    }
  }
  return gt;
}

std::vector<bool> match_detections(const std::vector<Detection>& dets, const std::vector<GtInstance>& gts,
                                   double threshold) {
  std::vector<bool> flags(dets.size(), false);
  std::vector<bool> used(gts.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    // Among unmatched GTs of the class that pass the pair test, take the one
    // with the highest min(IoU_h, IoU_o); ties go to the lower index.
    double best = -1;
    std::size_t pick = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].hoi_id != dets[i].hoi_id) continue;
      if (!geometry::pair_match(dets[i].h_box, dets[i].o_box, gts[g].h_box, gts[g].o_box, threshold)) continue;
      const double q = std::min(geometry::iou(dets[i].h_box, gts[g].h_box), geometry::iou(dets[i].o_box, gts[g].o_box));
      if (q > best) {
        best = q;
        pick = g;
      }
    }
    if (pick < gts.size()) {
      used[pick] = true;
      flags[i] = true;
    }
  }
  return flags;
}

double average_precision(const std::vector<bool>& flags, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  std::vector<double> rec, prec;
  double tp = 0, fp = 0;
  for (bool f : flags) {
    (f ? tp : fp) += 1;
    rec.push_back(tp / static_cast<double>(n_gt));
    prec.push_back(tp / (tp + fp));
  }
  // Precision envelope, then area under the step curve.
  for (std::size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0, prev_r = 0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    ap += (rec[i] - prev_r) * prec[i];
    prev_r = rec[i];
  }
  return ap;
}

std::string_view to_string(Protocol p) { return p == Protocol::Default ? "Default" : "Known Object"; }

namespace {

bool det_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  auto key = [](const Detection& d) {
    return std::tie(d.image_id, d.hoi_id, d.object_id, d.h_box.x1, d.h_box.y1, d.h_box.x2, d.h_box.y2, d.o_box.x1,
                    d.o_box.y1, d.o_box.x2, d.o_box.y2);
  };
  return key(a) < key(b);
}

void finish_group(GroupMap& g, double sum) { g.map = g.classes ? sum / static_cast<double>(g.classes) : 0.0; }

}  // namespace

ProtocolReport evaluate_protocol(const std::vector<Detection>& dets, const EvalGroundTruth& gt,
                                 const LabelSpace& space, const SplitSpec* split, Protocol protocol) {
  const std::size_t H = space.num_hois();
  std::map<std::string, std::size_t> image_index;
  for (std::size_t i = 0; i < gt.image_ids.size(); ++i) image_index.emplace(gt.image_ids[i], i);

  // Images that contain each object category (Known Object protocol).
  std::vector<std::vector<bool>> has_object(space.num_objects(), std::vector<bool>(gt.image_ids.size(), false));
  std::vector<std::size_t> n_gt(H, 0);
  std::vector<std::vector<std::vector<GtInstance>>> by_class(H);
  for (std::size_t i = 0; i < gt.instances.size(); ++i) {
    for (const auto& g : gt.instances[i]) {
      if (g.hoi_id >= H) throw ValidationError("evaluate: GT hoi id out of range");
      has_object[space.hoi(g.hoi_id).second][i] = true;
      ++n_gt[g.hoi_id];
    }
  }

  std::vector<std::vector<const Detection*>> class_dets(H);
  for (const auto& d : dets) {
    if (d.hoi_id >= H) throw ValidationError("evaluate: detection hoi id out of range");
    auto it = image_index.find(d.image_id);
    if (it == image_index.end()) continue;  // detections on images without annotations are ignored
    if (protocol == Protocol::KnownObject && !has_object[space.hoi(d.hoi_id).second][it->second]) continue;
    class_dets[d.hoi_id].push_back(&d);
  }

  ProtocolReport rep;
  rep.per_hoi_ap.assign(H, std::nullopt);
  double s_full = 0, s_rare = 0, s_non = 0, s_seen = 0, s_unseen = 0;
  for (std::size_t h = 0; h < H; ++h) {
    if (n_gt[h] == 0) continue;
    auto& list = class_dets[h];
    std::sort(list.begin(), list.end(), [](const Detection* a, const Detection* b) { return det_before(*a, *b); });
    std::vector<bool> flags(list.size(), false);
    std::map<std::size_t, std::vector<std::size_t>> per_image;  // image -> positions in list
    for (std::size_t k = 0; k < list.size(); ++k) per_image[image_index.at(list[k]->image_id)].push_back(k);
    for (const auto& [img, positions] : per_image) {
      std::vector<Detection> sub;
      for (auto k : positions) sub.push_back(*list[k]);
      std::vector<GtInstance> g;
      for (const auto& inst : gt.instances[img])
        if (inst.hoi_id == h) g.push_back(inst);
      const auto f = match_detections(sub, g);
      for (std::size_t j = 0; j < positions.size(); ++j) flags[positions[j]] = f[j];
    }
    const double ap = average_precision(flags, n_gt[h]);
    rep.per_hoi_ap[h] = ap;
    ++rep.full.classes;
    s_full += ap;
    if (space.is_rare(h)) {
      ++rep.rare.classes;
      s_rare += ap;
    } else {
      ++rep.non_rare.classes;
      s_non += ap;
    }
    if (split) {
      if (split->is_unseen(h)) {
        ++rep.unseen.classes;
        s_unseen += ap;
      } else {
        ++rep.seen.classes;
        s_seen += ap;
      }
    }
  }
  finish_group(rep.full, s_full);
  finish_group(rep.rare, s_rare);
  finish_group(rep.non_rare, s_non);
  finish_group(rep.seen, s_seen);
  finish_group(rep.unseen, s_unseen);
  return rep;
}

EvalReport evaluate(const std::vector<Detection>& dets, const EvalGroundTruth& gt, const LabelSpace& space,
                    const SplitSpec* split) {
  EvalReport r;
  r.default_protocol = evaluate_protocol(dets, gt, space, split, Protocol::Default);
  r.known_object = evaluate_protocol(dets, gt, space, split, Protocol::KnownObject);
  if (split) r.setting = split->setting;
  return r;
}

namespace {

bool same_group(const GroupMap& a, const GroupMap& b) { return a.map == b.map && a.classes == b.classes; }

bool same_protocol(const ProtocolReport& a, const ProtocolReport& b) {
  return same_group(a.full, b.full) && same_group(a.rare, b.rare) && same_group(a.non_rare, b.non_rare) &&
         same_group(a.seen, b.seen) && same_group(a.unseen, b.unseen) && a.per_hoi_ap == b.per_hoi_ap;
}

nlohmann::json protocol_json(const ProtocolReport& p, bool with_split) {
  auto group = [](const GroupMap& g) { return nlohmann::json{{"mAP", g.map}, {"classes", g.classes}}; };
  nlohmann::json j{{"full", group(p.full)}, {"rare", group(p.rare)}, {"non_rare", group(p.non_rare)}};
  if (with_split) {
    j["seen"] = group(p.seen);
    j["unseen"] = group(p.unseen);
  }
  auto ap = nlohmann::json::array();
  for (const auto& a : p.per_hoi_ap) ap.push_back(a ? nlohmann::json(*a) : nlohmann::json(nullptr));
  j["per_hoi_ap"] = ap;
  return j;
}

}  // namespace

bool EvalReport::operator==(const EvalReport& o) const {
  return setting == o.setting && same_protocol(default_protocol, o.default_protocol) &&
         same_protocol(known_object, o.known_object);
}

nlohmann::json to_json(const EvalReport& r) {
  const bool with_split = r.setting.has_value();
  nlohmann::json j{{"default", protocol_json(r.default_protocol, with_split)},
                   {"known_object", protocol_json(r.known_object, with_split)}};
  j["setting"] = with_split ? nlohmann::json(std::string(to_string(*r.setting))) : nlohmann::json(nullptr);
  return j;
}

std::string format_report(const EvalReport& r) {
  const bool with_split = r.setting.has_value();
  std::ostringstream os;
  char buf[160];
  if (with_split) os << "Setting: " << to_string(*r.setting) << '\n';
  std::snprintf(buf, sizeof buf, "%-14s %9s %9s %9s", "Protocol", "Full", "Rare", "Non-rare");
  os << buf;
  if (with_split) {
    std::snprintf(buf, sizeof buf, " %9s %9s", "Seen", "Unseen");
    os << buf;
  }
  os << '\n';
  for (const auto* p : {&r.default_protocol, &r.known_object}) {
    std::snprintf(buf, sizeof buf, "%-14s %9.2f %9.2f %9.2f", std::string(to_string(p == &r.default_protocol ? Protocol::Default : Protocol::KnownObject)).c_str(),
                  100 * p->full.map, 100 * p->rare.map, 100 * p->non_rare.map);
    os << buf;
    if (with_split) {
      std::snprintf(buf, sizeof buf, " %9.2f %9.2f", 100 * p->seen.map, 100 * p->unseen.map);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

void write_detections_jsonl(const std::filesystem::path& path, const std::vector<Detection>& dets) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  for (const auto& d : dets) {
    nlohmann::json j{{"image_id", d.image_id},
                     {"h_box", {d.h_box.x1, d.h_box.y1, d.h_box.x2, d.h_box.y2}},
                     {"o_box", {d.o_box.x1, d.o_box.y1, d.o_box.x2, d.o_box.y2}},
                     {"object_id", d.object_id},
                     {"hoi_id", d.hoi_id},
                     {"score", d.score}};
    out << j.dump() << '\n';
  }
}

std::vector<Detection> read_detections_jsonl(const std::filesystem::path& path, const LabelSpace& space) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open " + path.string());
  std::vector<Detection> dets;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Detection d;
      d.image_id = j.at("image_id").is_string() ? j["image_id"].get<std::string>() : j["image_id"].dump();
      const auto hb = j.at("h_box").get<std::vector<double>>();
      const auto ob = j.at("o_box").get<std::vector<double>>();
      if (hb.size() != 4 || ob.size() != 4) throw ValidationError("boxes need 4 numbers");
      d.h_box = {hb[0], hb[1], hb[2], hb[3]};
      d.o_box = {ob[0], ob[1], ob[2], ob[3]};
      d.hoi_id = j.at("hoi_id").get<std::size_t>();
      if (d.hoi_id >= space.num_hois()) throw ValidationError("hoi_id out of range");
      d.object_id = space.hoi(d.hoi_id).second;
      d.score = j.at("score").get<double>();
      if (!std::isfinite(d.score)) throw ValidationError("non-finite score");
      dets.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return dets;
}

}  // namespace zhoi
