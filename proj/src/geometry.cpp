#include "zhoi/geometry.hpp"

#include <algorithm>

namespace zhoi::geometry {

CornerBox to_corners(const CenterBox& b) noexcept {
  return {b.cx - 0.5 * b.w, b.cy - 0.5 * b.h, b.cx + 0.5 * b.w, b.cy + 0.5 * b.h};
}

CenterBox to_center(const CornerBox& b) noexcept {
  return {0.5 * (b.x1 + b.x2), 0.5 * (b.y1 + b.y2), b.x2 - b.x1, b.y2 - b.y1};
}

CenterBox clamp_box(const CenterBox& b, double min_size) noexcept {
  return {std::clamp(b.cx, 0.0, 1.0), std::clamp(b.cy, 0.0, 1.0), std::clamp(b.w, min_size, 1.0),
          std::clamp(b.h, min_size, 1.0)};
}

CornerBox normalize_pixel_box(const CornerBox& px, double width, double height) noexcept {
  return {std::clamp(px.x1 / width, 0.0, 1.0), std::clamp(px.y1 / height, 0.0, 1.0),
          std::clamp(px.x2 / width, 0.0, 1.0), std::clamp(px.y2 / height, 0.0, 1.0)};
}

double area(const CornerBox& b) noexcept {
  return std::max(b.x2 - b.x1, 0.0) * std::max(b.y2 - b.y1, 0.0);
}

double iou(const CornerBox& a, const CornerBox& b) noexcept {
  return iou_generic<double>({a.x1, a.y1, a.x2, a.y2}, {b.x1, b.y1, b.x2, b.y2});
}

double giou(const CornerBox& a, const CornerBox& b) noexcept {
  return giou_generic<double>({a.x1, a.y1, a.x2, a.y2}, {b.x1, b.y1, b.x2, b.y2});
}

bool pair_match(const CornerBox& pred_h, const CornerBox& pred_o, const CornerBox& gt_h,
                const CornerBox& gt_o, double threshold) noexcept {
  return iou(pred_h, gt_h) >= threshold && iou(pred_o, gt_o) >= threshold;
}

}  // namespace zhoi::geometry
