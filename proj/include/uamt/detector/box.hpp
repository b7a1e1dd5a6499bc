// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace uamt::detector {

/// Axis-aligned BEV box. orient = 0 puts the long side l along x, orient = 1 along y.
struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double l = 0.0;
  int orient = 0;

  double extent_x() const noexcept { return orient == 0 ? l : w; }
  double extent_y() const noexcept { return orient == 0 ? w : l; }
  double area() const noexcept { return w * l; }
  double min_x() const noexcept { return cx - 0.5 * extent_x(); }
  double max_x() const noexcept { return cx + 0.5 * extent_x(); }
  double min_y() const noexcept { return cy - 0.5 * extent_y(); }
  double max_y() const noexcept { return cy + 0.5 * extent_y(); }

  /// Closed containment test.
  bool contains(double x, double y) const noexcept {
    return std::abs(x - cx) <= 0.5 * extent_x() && std::abs(y - cy) <= 0.5 * extent_y();
  }

  bool valid() const noexcept {
    return w > 0.0 && l > 0.0 && (orient == 0 || orient == 1) && std::isfinite(cx) && std::isfinite(cy);
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Detection {
  BBox box;
  double confidence = 0.0;
  double roi_logit = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

inline double intersection_area(const BBox& a, const BBox& b) noexcept {
  const double ix = std::min(a.max_x(), b.max_x()) - std::max(a.min_x(), b.min_x());
  const double iy = std::min(a.max_y(), b.max_y()) - std::max(a.min_y(), b.min_y());
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  return ix * iy;
}

/// Axis-aligned intersection over union using orientation-aware extents.
inline double iou(const BBox& a, const BBox& b) noexcept {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Descending confidence, then ascending cx, then ascending cy.
inline bool ranks_before(const Detection& a, const Detection& b) noexcept {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.box.cx != b.box.cx) return a.box.cx < b.box.cx;
  return a.box.cy < b.box.cy;
}

/// Indices of `dets` in rank order.
inline std::vector<std::size_t> rank_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return ranks_before(dets[i], dets[j]); });
  return order;
}

/// Greedy non-maximum suppression: a detection is dropped when its IoU with an
/// already kept, higher-ranked detection exceeds iou_thresh.
inline std::vector<Detection> nms(std::span<const Detection> dets, double iou_thresh, std::size_t top_k) {
  std::vector<Detection> kept;
  if (top_k == 0) return kept;
  for (auto i : rank_order(dets)) {
    const auto& d = dets[i];
    const bool suppressed =
        std::any_of(kept.begin(), kept.end(), [&](const Detection& k) { return iou(k.box, d.box) > iou_thresh; });
    if (suppressed) continue;
    kept.push_back(d);
    if (kept.size() == top_k) break;
  }
  return kept;
}

}  // namespace uamt::detector
