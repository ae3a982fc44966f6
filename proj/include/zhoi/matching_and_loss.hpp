#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "zhoi/autograd.hpp"
#include "zhoi/geometry.hpp"
#include "zhoi/matrix.hpp"

namespace zhoi {

using ag::Var;

/// Matched (row, col) pairs sorted by row.
using Assignment = std::vector<std::pair<std::size_t, std::size_t>>;

/// Minimum-cost assignment of min(N, M) pairs. Among optimal assignments
/// (equal within 1e-9 relative) the lexicographically smallest row-sorted
/// pair list is returned. Throws ValidationError on non-finite costs.
Assignment hungarian_solve(const Matrix& cost);
double assignment_cost(const Matrix& cost, const Assignment& a);

struct LossWeights {
  double box = 2.5;       // L1
  double giou = 1.0;
  double object = 1.0;    // object category (+ human confidence)
  double verb = 1.0;      // interaction
  double recon = 1.0;
  double eos = 0.1;       // background class weight in the object cross-entropy
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

enum class ReconLoss { None, L1, L2, L1L2 };
std::string_view to_string(ReconLoss r);
ReconLoss parse_recon_loss(std::string_view s);

/// One annotated pair in normalized center form with its verb labels.
struct GtPair {
  geometry::CenterBox human;
  geometry::CenterBox object;
  std::size_t object_id = 0;
  std::vector<std::size_t> verbs;
};
using GroundTruth = std::vector<GtPair>;  // one image

/// Model outputs for a batch; every Var has batch*N rows.
struct Predictions {
  Var boxes_h;        // x 4 center form
  Var boxes_o;
  Var object_logits;  // x (C_obj + 1)
  Var human_logit;    // x 1
  Var verb_logits;    // x A
  Var q_proj;         // x D_clip (projected interaction queries)
  std::size_t batch = 1;
  std::size_t queries() const { return boxes_h.rows() / batch; }
};

/// N x M matching cost for image `image` of the batch.
Matrix match_cost(const Predictions& pred, std::size_t image, const GroundTruth& gt, const LossWeights& w);

struct LossTerms {
  Var total;
  double box = 0, giou = 0, object = 0, verb = 0, recon = 0;
};

/// Composite loss over a batch. `spatial_mean` is batch x D_clip (mean V_sp
/// token per image). Box and GIoU terms average over matched pairs, the
/// interaction focal loss over positive labels, the reconstruction term over
/// queries.
LossTerms compute_losses(const Predictions& pred, const std::vector<GroundTruth>& gts,
                         const std::vector<Assignment>& assignments, const Matrix& spatial_mean,
                         const LossWeights& w, ReconLoss recon);

}  // namespace zhoi
