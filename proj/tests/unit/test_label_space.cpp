#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "doctest.h"
#include "zhoi/errors.hpp"
#include "zhoi/label_space.hpp"
#include "zhoi/rng.hpp"

using namespace zhoi;

namespace {

LabelSpace load_hico() {
  std::ifstream in(std::string(ZHOI_DATA_DIR) + "/hico_det/label_space.json");
  REQUIRE(in.good());
  return LabelSpace::from_json(nlohmann::json::parse(in));
}

nlohmann::json hico_doc() {
  std::ifstream in(std::string(ZHOI_DATA_DIR) + "/hico_det/label_space.json");
  return nlohmann::json::parse(in);
}

LabelSpace grid_space(std::vector<std::uint64_t> counts = {}) {
  std::vector<std::string> verbs{"above", "below", "left_of", "right_of", "overlapping"};
  std::vector<std::string> objects{"red", "green", "blue", "yellow", "cyan", "magenta", "orange", "white"};
  std::vector<LabelSpace::HoiPair> hois;
  for (std::size_t v = 0; v < verbs.size(); ++v) {
    for (std::size_t o = 0; o < objects.size(); ++o) hois.emplace_back(v, o);
  }
  if (counts.empty()) counts.assign(hois.size(), 20);
  return LabelSpace::build(verbs, objects, hois, counts, 10);
}

void check_partition(const SplitSpec& s, std::size_t H) {
  auto seen = s.seen_hoi_ids(H);
  std::set<std::size_t> all(seen.begin(), seen.end());
  for (auto h : s.unseen_hoi_ids) {
    CHECK(h < H);
    CHECK(all.insert(h).second);
  }
  CHECK(all.size() == H);
  CHECK(std::is_sorted(s.unseen_hoi_ids.begin(), s.unseen_hoi_ids.end()));
}

void check_parts_seen(const LabelSpace& space, const SplitSpec& s) {
  std::vector<bool> verb_seen(space.num_verbs()), object_seen(space.num_objects());
  for (auto h : s.seen_hoi_ids(space.num_hois())) {
    verb_seen[space.hoi(h).first] = true;
    object_seen[space.hoi(h).second] = true;
  }
  CHECK(std::all_of(verb_seen.begin(), verb_seen.end(), [](bool b) { return b; }));
  CHECK(std::all_of(object_seen.begin(), object_seen.end(), [](bool b) { return b; }));
}

}  // namespace

TEST_CASE("label space construction and validation") {
  auto hico = load_hico();
  CHECK(hico.num_verbs() == 117);
  CHECK(hico.num_objects() == 80);
  CHECK(hico.num_hois() == 600);
  CHECK(hico.rare_ids().size() == 138);

  auto one = LabelSpace::build({"hold"}, {"cup"}, {{0, 0}}, {0}, 10);
  CHECK(one.num_hois() == 1);
  CHECK(one.rare_ids() == std::vector<std::size_t>{0});

  auto grid = grid_space();
  REQUIRE(grid.num_hois() == 40);
  std::size_t expected = 0;
  for (std::size_t v = 0; v < 5; ++v) {
    for (std::size_t o = 0; o < 8; ++o) {
      CHECK(grid.hoi_id(v, o) == expected);
      CHECK(grid.hoi(expected) == LabelSpace::HoiPair{v, o});
      ++expected;
    }
  }

  CHECK_THROWS_AS(LabelSpace::build({"a", "a"}, {"x"}, {}, {}, 10), ValidationError);
  CHECK_THROWS_AS(LabelSpace::build({"a"}, {"x"}, {{1, 0}}, {0}, 10), ValidationError);
  CHECK_THROWS_AS(LabelSpace::build({"a"}, {"x"}, {{0, 0}, {0, 0}}, {0, 0}, 10), ValidationError);
  CHECK_THROWS_AS(LabelSpace::build({"a"}, {"x"}, {{0, 0}}, {}, 10), ValidationError);

  auto round = LabelSpace::from_json(hico.to_json());
  CHECK(round.hois() == hico.hois());
  CHECK(round.train_counts() == hico.train_counts());
  CHECK(round.protocol_sets == hico.protocol_sets);
}

TEST_CASE("prompts") {
  CHECK(hoi_prompt("ride", "horse") == "A photo of a person ride a horse");
  CHECK(object_prompt("umbrella") == "A photo of an umbrella");
  CHECK(hoi_prompt("no_interaction", "dining_table") == "A photo of a person no interaction a dining table");
  CHECK(hoi_prompt("eat", "apple") == "A photo of a person eat an apple");
  CHECK(object_prompt("Orange") == "A photo of an Orange");
}

TEST_CASE("HICO split protocols") {
  auto hico = load_hico();
  auto doc = hico_doc();
  const auto& ref = doc["reference_unseen"];

  SUBCASE("UV holds out 84 of 600") {
    auto s = make_split(hico, Setting::UV, {}, 7);
    CHECK(s.unseen_hoi_ids.size() == 84);
    CHECK(s.seen_hoi_ids(600).size() == 516);
    CHECK(s.unseen_hoi_ids == ref["UV"].get<std::vector<std::size_t>>());
    check_partition(s, 600);
    std::set<std::size_t> verbs(s.unseen_verbs.begin(), s.unseen_verbs.end());
    for (std::size_t h = 0; h < 600; ++h) CHECK(s.is_unseen(h) == (verbs.count(hico.hoi(h).first) == 1));
  }
  SUBCASE("UO equals the object census") {
    auto s = make_split(hico, Setting::UO, {}, 7);
    CHECK(s.unseen_objects.size() == 12);
    std::set<std::size_t> objs(s.unseen_objects.begin(), s.unseen_objects.end());
    std::vector<std::size_t> census;
    for (std::size_t h = 0; h < 600; ++h) {
      if (objs.count(hico.hoi(h).second)) census.push_back(h);
    }
    CHECK(s.unseen_hoi_ids == census);
    CHECK(s.unseen_hoi_ids == ref["UO"].get<std::vector<std::size_t>>());
  }
  SUBCASE("RF/NF pick extreme counts") {
    const auto& c = hico.train_counts();
    std::vector<std::size_t> order(600);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return std::pair(c[a], a) < std::pair(c[b], b); });
    std::vector<std::size_t> lowest(order.begin(), order.begin() + 120);
    std::sort(lowest.begin(), lowest.end());
    auto rf = make_split(hico, Setting::RF_UC, {}, 0);
    CHECK(rf.unseen_hoi_ids == lowest);
    CHECK(rf.unseen_hoi_ids == ref["RF_UC"].get<std::vector<std::size_t>>());
    check_parts_seen(hico, rf);

    auto nf = make_split(hico, Setting::NF_UC, {}, 0);
    CHECK(nf.unseen_hoi_ids == ref["NF_UC"].get<std::vector<std::size_t>>());
    check_parts_seen(hico, nf);
  }
  SUBCASE("random UV/UO fall back to seeded draws") {
    SplitParams p;
    p.use_protocol_sets = false;
    auto a = make_split(hico, Setting::UV, p, 3);
    auto b = make_split(hico, Setting::UV, p, 3);
    CHECK(a == b);
    CHECK(a.unseen_verbs.size() == 20);
    check_partition(a, 600);
  }
  SUBCASE("UC keeps every verb and object seen") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto s = make_split(hico, Setting::UC, {}, seed);
      CHECK(s.unseen_hoi_ids.size() == 120);
      check_partition(s, 600);
      check_parts_seen(hico, s);
      CHECK(s.to_json().dump() == make_split(hico, Setting::UC, {}, seed).to_json().dump());
    }
  }
}

TEST_CASE("synthetic split oracles") {
  Rng rng(11);
  std::vector<std::uint64_t> counts(40);
  for (auto& c : counts) c = rng.below(6);  // many ties
  auto space = grid_space(counts);
  SplitParams p;
  p.n_unseen_hoi = 8;

  auto rf = make_split(space, Setting::RF_UC, p, 1);
  std::vector<std::size_t> order(40);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](auto a, auto b) { return counts[a] != counts[b] ? counts[a] < counts[b] : a < b; });
  std::vector<std::size_t> expect(order.begin(), order.begin() + 8);
  std::sort(expect.begin(), expect.end());
  CHECK(rf.unseen_hoi_ids == expect);

  SUBCASE("infeasible UC is reported") {
    p.n_unseen_hoi = 33;  // at most 40 - max(5, 8) = 32 can go
    CHECK_THROWS_AS(make_split(space, Setting::UC, p, 1), InfeasibleSplitError);
    p.n_unseen_hoi = 32;
    auto s = make_split(space, Setting::UC, p, 1);
    check_parts_seen(space, s);
  }
  SUBCASE("skipping keeps single-HOI verbs seen") {
    auto small = LabelSpace::build({"a", "b"}, {"x", "y"}, {{0, 0}, {1, 0}, {1, 1}}, {0, 5, 9}, 10);
    SplitParams q;
    q.n_unseen_hoi = 1;
    auto s = make_split(small, Setting::RF_UC, q, 0);
    // hoi 0 is rarest but is verb a's only HOI, and hoi 2 is object y's only one.
    CHECK(s.unseen_hoi_ids == std::vector<std::size_t>{1});
  }
  SUBCASE("json round trip") {
    auto s = make_split(space, Setting::UV, SplitParams{.n_unseen_verb = 1}, 5);
    CHECK(SplitSpec::from_json(s.to_json()) == s);
    CHECK(s.unseen_hoi_ids.size() == 8);
  }
}

TEST_CASE("filter_training_annotations") {
  auto space = grid_space();
  Dataset ds;
  Rng rng(5);
  for (int i = 0; i < 30; ++i) {
    Sample s;
    s.id = std::to_string(i);
    for (int k = 0; k < 3; ++k) {
      PairAnnotation p;
      p.object_id = rng.below(8);
      std::set<std::size_t> verbs;
      const auto nv = 1 + rng.below(3);
      while (verbs.size() < nv) verbs.insert(rng.below(5));
      p.verb_ids.assign(verbs.begin(), verbs.end());
      s.pairs.push_back(p);
    }
    ds.samples.push_back(s);
  }

  auto full = make_split(space, Setting::Full, {}, 0);
  auto same = filter_training_annotations(ds, space, full);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) CHECK(same.samples[i].pairs == ds.samples[i].pairs);

  auto uv = make_split(space, Setting::UV, SplitParams{.n_unseen_verb = 2}, 9);
  auto filtered = filter_training_annotations(ds, space, uv);
  CHECK(filtered.samples.size() == ds.samples.size());
  std::size_t unseen_labels = 0, expected_labels = 0;
  for (const auto& s : filtered.samples) {
    for (const auto& p : s.pairs) {
      CHECK(!p.verb_ids.empty());
      for (auto v : p.verb_ids) unseen_labels += uv.is_unseen(*space.hoi_id(v, p.object_id));
    }
  }
  for (const auto& s : ds.samples) {
    for (const auto& p : s.pairs) {
      for (auto v : p.verb_ids) expected_labels += !uv.is_unseen(*space.hoi_id(v, p.object_id));
    }
  }
  auto census = count_hoi_instances(filtered, space);
  CHECK(unseen_labels == 0);
  CHECK(std::accumulate(census.begin(), census.end(), std::uint64_t{0}) == expected_labels);

  auto twice = filter_training_annotations(filtered, space, uv);
  for (std::size_t i = 0; i < filtered.samples.size(); ++i) CHECK(twice.samples[i].pairs == filtered.samples[i].pairs);

  SUBCASE("mixed pair keeps only seen verbs") {
    Dataset one;
    one.samples.push_back(Sample{});
    PairAnnotation p;
    p.object_id = 0;
    p.verb_ids = {0, 1};
    one.samples[0].pairs.push_back(p);
    SplitSpec s;
    s.setting = Setting::UC;
    s.unseen_hoi_ids = {*space.hoi_id(1, 0)};
    auto out = filter_training_annotations(one, space, s);
    REQUIRE(out.samples[0].pairs.size() == 1);
    CHECK(out.samples[0].pairs[0].verb_ids == std::vector<std::size_t>{0});
  }
}
