#include "zhoi/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "zhoi/errors.hpp"
#include "zhoi/rng.hpp"

namespace zhoi {

using geometry::CornerBox;

Relation parse_relation(std::string_view name) {
  if (name == "above") return Relation::Above;
  if (name == "below") return Relation::Below;
  if (name == "left_of") return Relation::LeftOf;
  if (name == "right_of") return Relation::RightOf;
  if (name == "overlapping") return Relation::Overlapping;
  throw ValidationError("scene: unknown relation '" + std::string(name) + "'");
}

namespace {

double overlap_1d(double a1, double a2, double b1, double b2) { return std::max(0.0, std::min(a2, b2) - std::max(a1, b1)); }

// Directional relations also need the boxes to share a band on the other
// axis, so "above" means roughly on top rather than diagonally up.
bool aligned_x(const CornerBox& h, const CornerBox& o) {
  return overlap_1d(h.x1, h.x2, o.x1, o.x2) >= 0.5 * std::min(h.x2 - h.x1, o.x2 - o.x1);
}
bool aligned_y(const CornerBox& h, const CornerBox& o) {
  return overlap_1d(h.y1, h.y2, o.y1, o.y2) >= 0.5 * std::min(h.y2 - h.y1, o.y2 - o.y1);
}

}  // namespace

bool relation_holds(Relation r, const CornerBox& h, const CornerBox& o, const SceneConfig& cfg) {
  switch (r) {
    case Relation::Above: return o.y2 + cfg.gap <= h.y1 && aligned_x(h, o);
    case Relation::Below: return o.y1 >= h.y2 + cfg.gap && aligned_x(h, o);
    case Relation::LeftOf: return o.x2 + cfg.gap <= h.x1 && aligned_y(h, o);
    case Relation::RightOf: return o.x1 >= h.x2 + cfg.gap && aligned_y(h, o);
    case Relation::Overlapping: {
      const double inter = overlap_1d(h.x1, h.x2, o.x1, o.x2) * overlap_1d(h.y1, h.y2, o.y1, o.y2);
      return inter >= cfg.overlap * geometry::area(o);
    }
  }
  return false;
}

std::array<double, 3> color_rgb(std::string_view name) {
  static const std::map<std::string_view, std::array<double, 3>> table{
      {"red", {0.9, 0.1, 0.1}},     {"green", {0.1, 0.8, 0.1}},   {"blue", {0.1, 0.2, 0.9}},
      {"yellow", {0.95, 0.9, 0.1}}, {"cyan", {0.1, 0.9, 0.9}},    {"magenta", {0.9, 0.1, 0.9}},
      {"orange", {1.0, 0.55, 0.0}}, {"purple", {0.5, 0.1, 0.6}},  {"white", {1.0, 1.0, 1.0}},
      {"brown", {0.55, 0.3, 0.1}},  {"pink", {1.0, 0.6, 0.75}},   {"teal", {0.0, 0.5, 0.5}}};
  auto it = table.find(name);
  if (it == table.end()) throw ValidationError("scene: unknown color '" + std::string(name) + "'");
  return it->second;
}

LabelSpace synthetic_label_space(const SceneConfig& cfg) {
  for (const auto& r : cfg.relations) parse_relation(r);
  for (const auto& c : cfg.colors) color_rgb(c);
  std::vector<LabelSpace::HoiPair> hois;
  for (std::size_t v = 0; v < cfg.relations.size(); ++v)
    for (std::size_t o = 0; o < cfg.colors.size(); ++o) hois.emplace_back(v, o);
  auto space = LabelSpace::build(cfg.relations, cfg.colors, hois, std::vector<std::uint64_t>(hois.size(), 0), 10);
  space.name = "synthetic";
  return space;
}

namespace {

CornerBox random_box(Rng& rng, const SceneConfig& cfg) {
  const double w = rng.uniform(cfg.min_size, cfg.max_size);
  const double h = rng.uniform(cfg.min_size, cfg.max_size);
  const double x = rng.uniform(0.0, 1.0 - w);
  const double y = rng.uniform(0.0, 1.0 - h);
  return {x, y, x + w, y + h};
}

// Object placed relative to the human according to the relation; may fall
// outside the image, in which case the caller retries.
CornerBox place_object(Rng& rng, Relation r, const CornerBox& h, const SceneConfig& cfg) {
  const double w = rng.uniform(cfg.min_size, cfg.max_size);
  const double hh = rng.uniform(cfg.min_size, cfg.max_size);
  const double hw = h.x2 - h.x1, hhgt = h.y2 - h.y1;
  const double cx = (h.x1 + h.x2) / 2 + rng.uniform(-0.2, 0.2) * hw;
  const double cy = (h.y1 + h.y2) / 2 + rng.uniform(-0.2, 0.2) * hhgt;
  const double gap = cfg.gap + rng.uniform(0.0, 0.1);
  switch (r) {
    case Relation::Above: return {cx - w / 2, h.y1 - gap - hh, cx + w / 2, h.y1 - gap};
    case Relation::Below: return {cx - w / 2, h.y2 + gap, cx + w / 2, h.y2 + gap + hh};
    case Relation::LeftOf: return {h.x1 - gap - w, cy - hh / 2, h.x1 - gap, cy + hh / 2};
    case Relation::RightOf: return {h.x2 + gap, cy - hh / 2, h.x2 + gap + w, cy + hh / 2};
    case Relation::Overlapping: {
      // Centre somewhere inside the inner part of the human box.
      const double ox = rng.uniform(h.x1 + 0.25 * hw, h.x2 - 0.25 * hw);
      const double oy = rng.uniform(h.y1 + 0.25 * hhgt, h.y2 - 0.25 * hhgt);
      return {ox - w / 2, oy - hh / 2, ox + w / 2, oy + hh / 2};
    }
  }
  return h;
}

bool inside(const CornerBox& b) { return b.x1 >= 0 && b.y1 >= 0 && b.x2 <= 1 && b.y2 <= 1; }

bool disjoint(const CornerBox& a, const CornerBox& b, double margin) {
  return a.x2 + margin <= b.x1 || b.x2 + margin <= a.x1 || a.y2 + margin <= b.y1 || b.y2 + margin <= a.y1;
}

// Pixels whose centre lies in the box.
void paint(Image& img, const CornerBox& b, const std::array<double, 3>& rgb) {
  const double s = static_cast<double>(img.width);
  const auto x0 = static_cast<std::size_t>(std::max(0.0, std::ceil(b.x1 * s - 0.5)));
  const auto x1 = static_cast<std::size_t>(std::max(0.0, std::ceil(b.x2 * s - 0.5)));
  const auto y0 = static_cast<std::size_t>(std::max(0.0, std::ceil(b.y1 * s - 0.5)));
  const auto y1 = static_cast<std::size_t>(std::max(0.0, std::ceil(b.y2 * s - 0.5)));
  for (std::size_t y = y0; y < std::min(y1, img.height); ++y)
    for (std::size_t x = x0; x < std::min(x1, img.width); ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
}

}  // namespace

SyntheticDataset generate_synthetic_dataset(const SceneConfig& cfg, const LabelSpace& space, std::size_t n_images,
                                            std::uint64_t seed, const std::optional<std::vector<std::size_t>>& allowed) {
  cfg.validate();
  if (space.num_verbs() != cfg.relations.size() || space.num_objects() != cfg.colors.size()) {
    throw ValidationError("scene: label space does not match the configured relations/colors");
  }
  std::vector<Relation> relations;
  for (std::size_t v = 0; v < space.num_verbs(); ++v) {
    if (space.verbs()[v] != cfg.relations[v]) throw ValidationError("scene: verb names must equal relation names");
    relations.push_back(parse_relation(cfg.relations[v]));
  }
  std::vector<std::array<double, 3>> colors;
  for (const auto& c : cfg.colors) colors.push_back(color_rgb(c));

  std::vector<std::size_t> pool;
  if (allowed) {
    pool = *allowed;
  } else {
    pool.resize(space.num_hois());
    std::iota(pool.begin(), pool.end(), 0);
  }
  if (pool.empty()) throw ValidationError("scene: no HOIs to draw from");
  for (auto h : pool)
    if (h >= space.num_hois()) throw ValidationError("scene: allowed hoi id out of range");

  Rng rank_rng(derive_seed(seed, "synthetic/rank"));
  std::vector<std::size_t> rank(pool.size());
  std::iota(rank.begin(), rank.end(), 0);
  rank_rng.shuffle(rank.begin(), rank.end());
  std::vector<double> cdf(pool.size());
  double acc = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    acc += std::pow(static_cast<double>(rank[i] + 1), -cfg.long_tail);
    cdf[i] = acc;
  }

  SyntheticDataset out;
  out.train_counts.assign(space.num_hois(), 0);
  const double s = static_cast<double>(cfg.image_size);
  for (std::size_t n = 0; n < n_images; ++n) {
    Rng rng(derive_seed(seed, "synthetic/image/" + std::to_string(n)));
    Sample sample;
    sample.id = "synth_" + std::to_string(n);
    sample.file = sample.id + ".ppm";
    sample.width_px = sample.height_px = s;
    sample.image = Image(3, cfg.image_size, cfg.image_size, 0.5);

    std::vector<std::size_t> hois;
    for (std::size_t k = 0; k < cfg.pairs_per_image; ++k) {
      const double u = rng.uniform() * acc;
      const std::size_t pick = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      hois.push_back(pool[std::min(pick, pool.size() - 1)]);
    }
    // An early pair can leave no room for a later one, so a failed pair
    // restarts the whole layout; both loops are bounded by max_retries.
    std::vector<CornerBox> placed;
    std::size_t failed_verb = 0;
    bool layout_ok = false;
    for (std::size_t layout = 0; layout < cfg.max_retries && !layout_ok; ++layout) {
      placed.clear();
      sample.pairs.clear();
      layout_ok = true;
      for (const std::size_t hoi : hois) {
        const auto [verb, object] = space.hoi(hoi);
        bool ok = false;
        for (std::size_t attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
          const CornerBox hb = random_box(rng, cfg);
          const CornerBox ob = place_object(rng, relations[verb], hb, cfg);
          if (!inside(ob) || !relation_holds(relations[verb], hb, ob, cfg)) continue;
          // The pair must not be ambiguous under another relation.
          bool unique = true;
          for (std::size_t r = 0; r < relations.size(); ++r)
            if (r != verb && relation_holds(relations[r], hb, ob, cfg)) unique = false;
          if (!unique) continue;
          const bool clear = std::all_of(placed.begin(), placed.end(), [&](const CornerBox& p) {
            return disjoint(p, hb, cfg.gap) && disjoint(p, ob, cfg.gap);
          });
          if (!clear) continue;
          placed.push_back(hb);
          placed.push_back(ob);
          PairAnnotation pa;
          pa.human = hb;
          pa.object = ob;
          pa.object_id = object;
          pa.verb_ids = {verb};
          sample.pairs.push_back(pa);
          ok = true;
        }
        if (!ok) {
          failed_verb = verb;
          layout_ok = false;
          break;
        }
      }
    }
    if (!layout_ok) {
      throw RuntimeFailure("scene: could not place '" + space.verbs()[failed_verb] + "' pair in image " + sample.id +
                           " after " + std::to_string(cfg.max_retries) + " attempts");
    }
    for (const std::size_t hoi : hois) ++out.train_counts[hoi];
    // Humans first so overlapping objects stay visible on top.
    for (const auto& p : sample.pairs) paint(sample.image, p.human, kHumanColor);
    for (const auto& p : sample.pairs) paint(sample.image, p.object, colors[p.object_id]);
    for (auto& px : sample.image.pixels) px = std::clamp(px + cfg.noise * rng.normal(), 0.0, 1.0);
    out.data.samples.push_back(std::move(sample));
  }
  return out;
}

}  // namespace zhoi
