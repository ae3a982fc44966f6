#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "zhoi/dataset.hpp"

namespace zhoi {

/// Verb/object/HOI taxonomy with per-HOI training frequencies.
class LabelSpace {
 public:
  using HoiPair = std::pair<std::size_t, std::size_t>;  // (verb_id, object_id)

  /// Validates names, ids and uniqueness; throws ValidationError.
  static LabelSpace build(std::vector<std::string> verbs, std::vector<std::string> objects,
                          std::vector<HoiPair> hois, std::vector<std::uint64_t> train_counts,
                          std::uint64_t rare_threshold = 10);

  std::size_t num_verbs() const { return verbs_.size(); }
  std::size_t num_objects() const { return objects_.size(); }
  std::size_t num_hois() const { return hois_.size(); }

  const std::vector<std::string>& verbs() const { return verbs_; }
  const std::vector<std::string>& objects() const { return objects_; }
  const std::vector<HoiPair>& hois() const { return hois_; }
  const HoiPair& hoi(std::size_t id) const { return hois_.at(id); }
  std::optional<std::size_t> hoi_id(std::size_t verb, std::size_t object) const;

  const std::vector<std::uint64_t>& train_counts() const { return train_counts_; }
  std::uint64_t rare_threshold() const { return rare_threshold_; }
  bool is_rare(std::size_t hoi) const { return train_counts_.at(hoi) < rare_threshold_; }
  std::vector<std::size_t> rare_ids() const;

  const std::vector<std::size_t>& hois_of_verb(std::size_t verb) const { return by_verb_.at(verb); }
  const std::vector<std::size_t>& hois_of_object(std::size_t object) const {
    return by_object_.at(object);
  }

  /// Returns a copy with replaced training counts (e.g. recounted from data).
  LabelSpace with_train_counts(std::vector<std::uint64_t> counts) const;

  /// Optional published verb/object choices for UV/UO ("UV" -> verb ids, "UO" -> object ids).
  std::map<std::string, std::vector<std::size_t>> protocol_sets;
  std::string name;

  nlohmann::json to_json() const;
  static LabelSpace from_json(const nlohmann::json& doc);

 private:
  std::vector<std::string> verbs_;
  std::vector<std::string> objects_;
  std::vector<HoiPair> hois_;
  std::vector<std::uint64_t> train_counts_;
  std::uint64_t rare_threshold_ = 10;
  std::map<HoiPair, std::size_t> pair_index_;
  std::vector<std::vector<std::size_t>> by_verb_;
  std::vector<std::vector<std::size_t>> by_object_;
};

enum class Setting { Full, UC, RF_UC, NF_UC, UO, UV };

std::string_view to_string(Setting s);
Setting parse_setting(std::string_view s);

struct SplitParams {
  std::size_t n_unseen_hoi = 120;   // UC, RF_UC, NF_UC
  std::size_t n_unseen_object = 12;  // UO
  std::size_t n_unseen_verb = 20;    // UV
  /// Use the label space's published UV/UO sets when their size matches.
  bool use_protocol_sets = true;
};

/// A zero-shot partition of the HOI ids.
struct SplitSpec {
  Setting setting = Setting::Full;
  std::uint64_t seed = 0;
  std::vector<std::size_t> unseen_hoi_ids;  // sorted
  std::vector<std::size_t> unseen_verbs;    // UV only
  std::vector<std::size_t> unseen_objects;  // UO only

  bool is_unseen(std::size_t hoi) const;
  std::vector<std::size_t> seen_hoi_ids(std::size_t num_hois) const;

  nlohmann::json to_json() const;
  static SplitSpec from_json(const nlohmann::json& doc);
  bool operator==(const SplitSpec&) const = default;
};

/// Deterministic zero-shot split; throws InfeasibleSplitError when the
/// every-verb/object-stays-seen constraint of the UC family cannot be met.
SplitSpec make_split(const LabelSpace& space, Setting setting, const SplitParams& params,
                     std::uint64_t seed);

/// Drops unseen (verb, object) labels from every pair; pairs left without
/// verbs are removed. Images are kept.
Dataset filter_training_annotations(const Dataset& dataset, const LabelSpace& space,
                                    const SplitSpec& split);

std::string hoi_prompt(std::string_view verb, std::string_view object);
std::string object_prompt(std::string_view object);

/// Per-HOI instance census of a dataset (one count per (pair, verb)).
std::vector<std::uint64_t> count_hoi_instances(const Dataset& dataset, const LabelSpace& space);

}  // namespace zhoi
