#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "zhoi/config.hpp"
#include "zhoi/dataset.hpp"
#include "zhoi/label_space.hpp"

namespace zhoi {

/// Spatial relation predicates between a human box and an object box.
enum class Relation { Above, Below, LeftOf, RightOf, Overlapping };
Relation parse_relation(std::string_view name);

/// True iff (human, object) satisfies the relation under the scene margins.
bool relation_holds(Relation r, const geometry::CornerBox& human, const geometry::CornerBox& object,
                    const SceneConfig& cfg);

/// Verbs = relations, objects = colours, every (relation, colour) pair an HOI,
/// train counts zero (fill them from a generated dataset).
LabelSpace synthetic_label_space(const SceneConfig& cfg);

std::array<double, 3> color_rgb(std::string_view name);
/// The human figure's colour; no object colour may equal it.
inline constexpr std::array<double, 3> kHumanColor{0.05, 0.05, 0.05};

struct SyntheticDataset {
  Dataset data;
  std::vector<std::uint64_t> train_counts;  // per HOI, census of the emitted labels
};

/// Deterministic per seed. `allowed_hois` (optional) restricts which HOIs are
/// drawn; otherwise all HOIs are drawn with Zipf weights (long_tail exponent)
/// over a seeded ranking. Throws RuntimeFailure when placement fails after
/// max_retries attempts.
SyntheticDataset generate_synthetic_dataset(const SceneConfig& cfg, const LabelSpace& space, std::size_t n_images,
                                            std::uint64_t seed,
                                            const std::optional<std::vector<std::size_t>>& allowed_hois = std::nullopt);

}  // namespace zhoi
