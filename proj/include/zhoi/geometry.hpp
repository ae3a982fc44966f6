#pragma once

#include <array>

#include "zhoi/dual.hpp"

namespace zhoi::geometry {

/// Normalized center-form box: the canonical box representation.
struct CenterBox {
  double cx = 0, cy = 0, w = 0, h = 0;
  bool operator==(const CenterBox&) const = default;
};

/// Corner-form box (x1 <= x2, y1 <= y2).
struct CornerBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  bool operator==(const CornerBox&) const = default;
};

CornerBox to_corners(const CenterBox& b) noexcept;
CenterBox to_center(const CornerBox& b) noexcept;

/// Clamp into the unit square: centers to [0,1], sizes to [min_size, 1].
CenterBox clamp_box(const CenterBox& b, double min_size = 1e-6) noexcept;

/// Pixel-coordinate corners to normalized corners.
CornerBox normalize_pixel_box(const CornerBox& px, double width, double height) noexcept;

double area(const CornerBox& b) noexcept;

/// Intersection over union; boxes of zero area score 0.
double iou(const CornerBox& a, const CornerBox& b) noexcept;
/// Generalized IoU in (-1, 1].
double giou(const CornerBox& a, const CornerBox& b) noexcept;

/// True iff both the human and the object boxes overlap their ground truth
/// with IoU >= threshold.
bool pair_match(const CornerBox& pred_h, const CornerBox& pred_o, const CornerBox& gt_h,
                const CornerBox& gt_o, double threshold = 0.5) noexcept;

/// Shared overlap arithmetic on corner arrays {x1, y1, x2, y2}; T is double
/// or a Dual for exact derivatives.
template <class T>
T iou_generic(const std::array<T, 4>& a, const std::array<T, 4>& b) {
  const T zero(0.0);
  const T area_a = vmax(a[2] - a[0], zero) * vmax(a[3] - a[1], zero);
  const T area_b = vmax(b[2] - b[0], zero) * vmax(b[3] - b[1], zero);
  if (value_of(area_a) <= 0.0 || value_of(area_b) <= 0.0) return zero;
  const T iw = vmax(vmin(a[2], b[2]) - vmax(a[0], b[0]), zero);
  const T ih = vmax(vmin(a[3], b[3]) - vmax(a[1], b[1]), zero);
  const T inter = iw * ih;
  const T uni = area_a + area_b - inter;
  return inter / uni;
}

template <class T>
T giou_generic(const std::array<T, 4>& a, const std::array<T, 4>& b) {
  const T zero(0.0);
  const T area_a = vmax(a[2] - a[0], zero) * vmax(a[3] - a[1], zero);
  const T area_b = vmax(b[2] - b[0], zero) * vmax(b[3] - b[1], zero);
  const T iw = vmax(vmin(a[2], b[2]) - vmax(a[0], b[0]), zero);
  const T ih = vmax(vmin(a[3], b[3]) - vmax(a[1], b[1]), zero);
  const T inter = iw * ih;
  const T uni = area_a + area_b - inter;
  const T iou_v = (value_of(area_a) <= 0.0 || value_of(area_b) <= 0.0) ? zero : inter / uni;
  const T hull = (vmax(a[2], b[2]) - vmin(a[0], b[0])) * (vmax(a[3], b[3]) - vmin(a[1], b[1]));
  if (value_of(hull) <= 0.0) return iou_v;
  return iou_v - (hull - uni) / hull;
}

}  // namespace zhoi::geometry
