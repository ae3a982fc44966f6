#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "zhoi/dataset.hpp"
#include "zhoi/geometry.hpp"
#include "zhoi/label_space.hpp"
#include "zhoi/matrix.hpp"

namespace zhoi {

enum class Fusion { Sum, Product };
std::string_view to_string(Fusion f);
Fusion parse_fusion(std::string_view s);

/// score[n, h] = S_h[n] + C_o[n, o] + sigmoid(verb_logits[n, v]) for h = (v, o)
/// (or the product of the three terms). object_probs may carry a trailing
/// background column, which is ignored.
Matrix final_scores(const std::vector<double>& s_h, const Matrix& object_probs, const Matrix& verb_logits,
                    const LabelSpace& space, Fusion fusion = Fusion::Sum);

struct Detection {
  std::string image_id;
  geometry::CornerBox h_box;
  geometry::CornerBox o_box;
  std::size_t object_id = 0;
  std::size_t hoi_id = 0;
  double score = 0;
  bool operator==(const Detection&) const = default;
};

/// Flattens (query, hoi) candidates and keeps the top_k by score, ordered by
/// descending score, then query index, then hoi id. Boxes are center form.
std::vector<Detection> assemble_detections(const std::string& image_id, const Matrix& boxes_h,
                                           const Matrix& boxes_o, const Matrix& scores, const LabelSpace& space,
                                           std::size_t top_k = 100);

struct GtInstance {
  geometry::CornerBox h_box;
  geometry::CornerBox o_box;
  std::size_t hoi_id = 0;
};

/// Evaluation ground truth: one list per image, keyed by image id.
struct EvalGroundTruth {
  std::vector<std::string> image_ids;
  std::vector<std::vector<GtInstance>> instances;
};
EvalGroundTruth ground_truth_from(const Dataset& dataset, const LabelSpace& space);

/// Greedy matching of detections (sorted by descending score) of one HOI
/// class in one image against that image's GT instances of the class.
std::vector<bool> match_detections(const std::vector<Detection>& dets, const std::vector<GtInstance>& gts,
                                   double threshold = 0.5);

/// All-point interpolated AP; flags must be in descending-score order.
double average_precision(const std::vector<bool>& flags, std::size_t n_gt);

enum class Protocol { Default, KnownObject };
std::string_view to_string(Protocol p);

struct GroupMap {
  double map = 0;
  std::size_t classes = 0;  // classes with at least one GT instance
};

struct ProtocolReport {
  GroupMap full, rare, non_rare, seen, unseen;
  std::vector<std::optional<double>> per_hoi_ap;  // nullopt: no GT for the class
};

struct EvalReport {
  ProtocolReport default_protocol;
  ProtocolReport known_object;
  std::optional<Setting> setting;
  bool operator==(const EvalReport& o) const;
};

ProtocolReport evaluate_protocol(const std::vector<Detection>& dets, const EvalGroundTruth& gt,
                                 const LabelSpace& space, const SplitSpec* split, Protocol protocol);
EvalReport evaluate(const std::vector<Detection>& dets, const EvalGroundTruth& gt, const LabelSpace& space,
                    const SplitSpec* split = nullptr);

nlohmann::json to_json(const EvalReport& r);
/// Plain-text table: one row per protocol, columns Full / Rare / Non-rare
/// (and Seen / Unseen when a split is given), values in percent.
std::string format_report(const EvalReport& r);

void write_detections_jsonl(const std::filesystem::path& path, const std::vector<Detection>& dets);
std::vector<Detection> read_detections_jsonl(const std::filesystem::path& path, const LabelSpace& space);

}  // namespace zhoi
