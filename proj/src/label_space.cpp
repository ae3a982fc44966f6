#include "zhoi/label_space.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "zhoi/errors.hpp"
#include "zhoi/rng.hpp"

namespace zhoi {

namespace {

void require_unique(const std::vector<std::string>& names, const char* what) {
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) throw ValidationError(std::string("empty ") + what + " name");
    if (!seen.insert(n).second) throw ValidationError(std::string("duplicate ") + what + " name '" + n + "'");
  }
}

std::string spaced(std::string_view name) {
  std::string out(name);
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

std::string_view article(std::string_view object) {
  if (object.empty()) return "a";
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(object.front())));
  return (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') ? "an" : "a";
}

}  // namespace

LabelSpace LabelSpace::build(std::vector<std::string> verbs, std::vector<std::string> objects,
                             std::vector<HoiPair> hois, std::vector<std::uint64_t> train_counts,
                             std::uint64_t rare_threshold) {
  require_unique(verbs, "verb");
  require_unique(objects, "object");
  if (train_counts.size() != hois.size()) {
    throw ValidationError("train_counts has " + std::to_string(train_counts.size()) +
                          " entries for " + std::to_string(hois.size()) + " hois");
  }
  LabelSpace s;
  s.by_verb_.assign(verbs.size(), {});
  s.by_object_.assign(objects.size(), {});
  for (std::size_t h = 0; h < hois.size(); ++h) {
    const auto [v, o] = hois[h];
    if (v >= verbs.size() || o >= objects.size()) {
      throw ValidationError("hoi " + std::to_string(h) + " references verb " + std::to_string(v) +
                            ", object " + std::to_string(o) + " out of range");
    }
    if (!s.pair_index_.emplace(hois[h], h).second) {
      throw ValidationError("duplicate hoi pair (" + std::to_string(v) + ", " + std::to_string(o) + ")");
    }
    s.by_verb_[v].push_back(h);
    s.by_object_[o].push_back(h);
  }
  s.verbs_ = std::move(verbs);
  s.objects_ = std::move(objects);
  s.hois_ = std::move(hois);
  s.train_counts_ = std::move(train_counts);
  s.rare_threshold_ = rare_threshold;
  return s;
}

std::optional<std::size_t> LabelSpace::hoi_id(std::size_t verb, std::size_t object) const {
  auto it = pair_index_.find({verb, object});
  if (it == pair_index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> LabelSpace::rare_ids() const {
  std::vector<std::size_t> out;
  for (std::size_t h = 0; h < hois_.size(); ++h) {
    if (is_rare(h)) out.push_back(h);
  }
  return out;
}

LabelSpace LabelSpace::with_train_counts(std::vector<std::uint64_t> counts) const {
  if (counts.size() != hois_.size()) throw ValidationError("train_counts size mismatch");
  LabelSpace copy = *this;
  copy.train_counts_ = std::move(counts);
  return copy;
}

nlohmann::json LabelSpace::to_json() const {
  nlohmann::json doc;
  if (!name.empty()) doc["name"] = name;
  doc["verbs"] = verbs_;
  doc["objects"] = objects_;
  auto pairs = nlohmann::json::array();
  for (const auto& [v, o] : hois_) pairs.push_back({v, o});
  doc["hois"] = pairs;
  doc["train_counts"] = train_counts_;
  doc["rare_threshold"] = rare_threshold_;
  if (!protocol_sets.empty()) {
    nlohmann::json ps;
    for (const auto& [key, ids] : protocol_sets) {
      ps[key][key == "UV" ? "verbs" : "objects"] = ids;
    }
    doc["protocol_sets"] = ps;
  }
  return doc;
}

LabelSpace LabelSpace::from_json(const nlohmann::json& doc) {
  try {
    auto verbs = doc.at("verbs").get<std::vector<std::string>>();
    auto objects = doc.at("objects").get<std::vector<std::string>>();
    std::vector<HoiPair> hois;
    for (const auto& p : doc.at("hois")) {
      if (!p.is_array() || p.size() != 2) throw ValidationError("hoi entry must be [verb_id, object_id]");
      hois.emplace_back(p[0].get<std::size_t>(), p[1].get<std::size_t>());
    }
    auto counts = doc.contains("train_counts") ? doc["train_counts"].get<std::vector<std::uint64_t>>()
                                               : std::vector<std::uint64_t>(hois.size(), 0);
    const auto threshold = doc.value("rare_threshold", std::uint64_t{10});
    LabelSpace s = build(std::move(verbs), std::move(objects), std::move(hois), std::move(counts), threshold);
    s.name = doc.value("name", std::string{});
    if (doc.contains("protocol_sets")) {
      const auto& ps = doc["protocol_sets"];
      if (ps.contains("UV")) s.protocol_sets["UV"] = ps["UV"].at("verbs").get<std::vector<std::size_t>>();
      if (ps.contains("UO")) s.protocol_sets["UO"] = ps["UO"].at("objects").get<std::vector<std::size_t>>();
      for (auto v : s.protocol_sets["UV"]) {
        if (v >= s.num_verbs()) throw ValidationError("protocol UV verb out of range");
      }
      for (auto o : s.protocol_sets["UO"]) {
        if (o >= s.num_objects()) throw ValidationError("protocol UO object out of range");
      }
      std::erase_if(s.protocol_sets, [](const auto& kv) { return kv.second.empty(); });
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("label space: ") + e.what());
  }
}

std::string_view to_string(Setting s) {
  switch (s) {
    case Setting::Full: return "FULL";
    case Setting::UC: return "UC";
    case Setting::RF_UC: return "RF_UC";
    case Setting::NF_UC: return "NF_UC";
    case Setting::UO: return "UO";
    case Setting::UV: return "UV";
  }
  return "FULL";
}

Setting parse_setting(std::string_view s) {
  std::string up;
  for (char c : s) up.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (up == "FULL" || up == "DEFAULT") return Setting::Full;
  if (up == "UC") return Setting::UC;
  if (up == "RF_UC" || up == "RFUC") return Setting::RF_UC;
  if (up == "NF_UC" || up == "NFUC") return Setting::NF_UC;
  if (up == "UO") return Setting::UO;
  if (up == "UV") return Setting::UV;
  throw ValidationError("unknown zero-shot setting '" + std::string(s) + "'");
}

bool SplitSpec::is_unseen(std::size_t hoi) const {
  return std::binary_search(unseen_hoi_ids.begin(), unseen_hoi_ids.end(), hoi);
}

std::vector<std::size_t> SplitSpec::seen_hoi_ids(std::size_t num_hois) const {
  std::vector<std::size_t> out;
  for (std::size_t h = 0; h < num_hois; ++h) {
    if (!is_unseen(h)) out.push_back(h);
  }
  return out;
}

nlohmann::json SplitSpec::to_json() const {
  nlohmann::json doc;
  doc["setting"] = std::string(to_string(setting));
  doc["seed"] = seed;
  doc["unseen_hoi_ids"] = unseen_hoi_ids;
  if (!unseen_verbs.empty()) doc["unseen_verbs"] = unseen_verbs;
  if (!unseen_objects.empty()) doc["unseen_objects"] = unseen_objects;
  return doc;
}

SplitSpec SplitSpec::from_json(const nlohmann::json& doc) {
  try {
    SplitSpec s;
    s.setting = parse_setting(doc.at("setting").get<std::string>());
    s.seed = doc.value("seed", std::uint64_t{0});
    s.unseen_hoi_ids = doc.at("unseen_hoi_ids").get<std::vector<std::size_t>>();
    s.unseen_verbs = doc.value("unseen_verbs", std::vector<std::size_t>{});
    s.unseen_objects = doc.value("unseen_objects", std::vector<std::size_t>{});
    std::sort(s.unseen_hoi_ids.begin(), s.unseen_hoi_ids.end());
    if (std::adjacent_find(s.unseen_hoi_ids.begin(), s.unseen_hoi_ids.end()) != s.unseen_hoi_ids.end()) {
      throw ValidationError("split: duplicate unseen hoi id");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("split: ") + e.what());
  }
}

namespace {

// Walks candidates in order and holds out each one unless doing so would
// leave its verb or object without any seen HOI.
std::vector<std::size_t> pick_with_feasibility(const LabelSpace& space,
                                               const std::vector<std::size_t>& order,
                                               std::size_t n, Setting setting) {
  if (n > space.num_hois()) {
    throw InfeasibleSplitError("cannot hold out " + std::to_string(n) + " of " +
                               std::to_string(space.num_hois()) + " hois");
  }
  std::vector<std::size_t> seen_per_verb(space.num_verbs());
  std::vector<std::size_t> seen_per_object(space.num_objects());
  for (std::size_t v = 0; v < space.num_verbs(); ++v) seen_per_verb[v] = space.hois_of_verb(v).size();
  for (std::size_t o = 0; o < space.num_objects(); ++o) seen_per_object[o] = space.hois_of_object(o).size();

  std::vector<std::size_t> picked;
  for (std::size_t h : order) {
    if (picked.size() == n) break;
    const auto [v, o] = space.hoi(h);
    if (seen_per_verb[v] <= 1 || seen_per_object[o] <= 1) continue;
    --seen_per_verb[v];
    --seen_per_object[o];
    picked.push_back(h);
  }
  if (picked.size() < n) {
    throw InfeasibleSplitError(std::string(to_string(setting)) + ": only " + std::to_string(picked.size()) +
                               " of " + std::to_string(n) +
                               " hois can be held out while every verb and object stays seen");
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

std::vector<std::size_t> choose_ids(std::size_t total, std::size_t n, Rng& rng, const char* what) {
  if (n > total) {
    throw InfeasibleSplitError(std::string("cannot hold out ") + std::to_string(n) + " of " +
                               std::to_string(total) + " " + what);
  }
  std::vector<std::size_t> ids(total);
  for (std::size_t i = 0; i < total; ++i) ids[i] = i;
  rng.shuffle(ids.begin(), ids.end());
  ids.resize(n);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

SplitSpec make_split(const LabelSpace& space, Setting setting, const SplitParams& params,
                     std::uint64_t seed) {
  SplitSpec split;
  split.setting = setting;
  split.seed = seed;
  const std::size_t H = space.num_hois();
  Rng rng(derive_seed(seed, std::string("split/") + std::string(to_string(setting))));

  switch (setting) {
    case Setting::Full:
      break;
    case Setting::UC: {
      std::vector<std::size_t> order(H);
      for (std::size_t h = 0; h < H; ++h) order[h] = h;
      rng.shuffle(order.begin(), order.end());
      split.unseen_hoi_ids = pick_with_feasibility(space, order, params.n_unseen_hoi, setting);
      break;
    }
    case Setting::RF_UC:
    case Setting::NF_UC: {
      std::vector<std::size_t> order(H);
      for (std::size_t h = 0; h < H; ++h) order[h] = h;
      const auto& counts = space.train_counts();
      const bool rare_first = setting == Setting::RF_UC;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return rare_first ? counts[a] < counts[b] : counts[a] > counts[b];
      });
      split.unseen_hoi_ids = pick_with_feasibility(space, order, params.n_unseen_hoi, setting);
      break;
    }
    case Setting::UV: {
      auto it = space.protocol_sets.find("UV");
      if (params.use_protocol_sets && it != space.protocol_sets.end() &&
          it->second.size() == params.n_unseen_verb) {
        split.unseen_verbs = it->second;
        std::sort(split.unseen_verbs.begin(), split.unseen_verbs.end());
      } else {
        split.unseen_verbs = choose_ids(space.num_verbs(), params.n_unseen_verb, rng, "verbs");
      }
      for (auto v : split.unseen_verbs) {
        const auto& hs = space.hois_of_verb(v);
        split.unseen_hoi_ids.insert(split.unseen_hoi_ids.end(), hs.begin(), hs.end());
      }
      break;
    }
    case Setting::UO: {
      auto it = space.protocol_sets.find("UO");
      if (params.use_protocol_sets && it != space.protocol_sets.end() &&
          it->second.size() == params.n_unseen_object) {
        split.unseen_objects = it->second;
        std::sort(split.unseen_objects.begin(), split.unseen_objects.end());
      } else {
        split.unseen_objects = choose_ids(space.num_objects(), params.n_unseen_object, rng, "objects");
      }
      for (auto o : split.unseen_objects) {
        const auto& hs = space.hois_of_object(o);
        split.unseen_hoi_ids.insert(split.unseen_hoi_ids.end(), hs.begin(), hs.end());
      }
      break;
    }
  }
  std::sort(split.unseen_hoi_ids.begin(), split.unseen_hoi_ids.end());
  return split;
}

Dataset filter_training_annotations(const Dataset& dataset, const LabelSpace& space,
                                    const SplitSpec& split) {
  Dataset out;
  out.samples.reserve(dataset.samples.size());
  for (const auto& sample : dataset.samples) {
    Sample kept = sample;
    kept.pairs.clear();
    for (const auto& pair : sample.pairs) {
      PairAnnotation p = pair;
      std::erase_if(p.verb_ids, [&](std::size_t v) {
        auto h = space.hoi_id(v, pair.object_id);
        return !h || split.is_unseen(*h);
      });
      if (!p.verb_ids.empty()) kept.pairs.push_back(std::move(p));
    }
    out.samples.push_back(std::move(kept));
  }
  return out;
}

std::string hoi_prompt(std::string_view verb, std::string_view object) {
  return "A photo of a person " + spaced(verb) + " " + std::string(article(object)) + " " + spaced(object);
}

std::string object_prompt(std::string_view object) {
  return "A photo of " + std::string(article(object)) + " " + spaced(object);
}

std::vector<std::uint64_t> count_hoi_instances(const Dataset& dataset, const LabelSpace& space) {
  std::vector<std::uint64_t> counts(space.num_hois(), 0);
  for (const auto& sample : dataset.samples) {
    for (const auto& pair : sample.pairs) {
      for (auto v : pair.verb_ids) {
        if (auto h = space.hoi_id(v, pair.object_id)) ++counts[*h];
      }
    }
  }
  return counts;
}

}  // namespace zhoi
