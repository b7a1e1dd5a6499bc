// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uamt/detector/box.hpp"
#include "uamt/scenegen/scene.hpp"

namespace uamt::evalkit {

using detector::BBox;
using detector::Detection;

enum class Difficulty { Easy = 0, Moderate = 1, Hard = 2, Ignored = 3 };

inline constexpr std::array<Difficulty, 3> kTiers = {Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard};

inline const char* to_string(Difficulty d) noexcept {
  switch (d) {
    case Difficulty::Easy: return "Easy";
    case Difficulty::Moderate: return "Moderate";
    case Difficulty::Hard: return "Hard";
    default: return "Ignored";
  }
}

/// Point-count (occlusion proxy) and range thresholds for the tiers.
struct TierRules {
  long easy_min_points = 40;
  double easy_max_range = 8.0;
  long moderate_min_points = 15;
  long hard_min_points = 5;
};

inline Difficulty difficulty_bin(long points_in_box, double range, const TierRules& rules = {}) noexcept {
  if (points_in_box >= rules.easy_min_points && range < rules.easy_max_range) return Difficulty::Easy;
  if (points_in_box >= rules.moderate_min_points) return Difficulty::Moderate;
  if (points_in_box >= rules.hard_min_points) return Difficulty::Hard;
  return Difficulty::Ignored;
}

inline long points_in_box(const BBox& box, const scenegen::PointScene& scene) noexcept {
  long n = 0;
  for (const auto& p : scene.points) n += box.contains(p.x, p.y) ? 1 : 0;
  return n;
}

inline Difficulty difficulty_bin(const BBox& box, const scenegen::PointScene& scene, const TierRules& rules = {}) {
  return difficulty_bin(points_in_box(box, scene), std::hypot(box.cx, box.cy), rules);
}

/// Tiers are cumulative: an Easy box also counts toward Moderate and Hard.
inline bool in_tier(Difficulty box, Difficulty tier) noexcept {
  return box != Difficulty::Ignored && static_cast<int>(box) <= static_cast<int>(tier);
}

enum class MatchKind { TruePositive, FalsePositive, DontCare };

struct MatchResult {
  /// Indexed like the input detections.
  std::vector<MatchKind> det;
  /// Index of the detection matched to each GT, -1 when missed.
  std::vector<int> gt_match;
};

/// Greedy matching in rank order (descending confidence, then cx, cy). Each
/// detection takes the unmatched counted GT of highest IoU >= iou_thresh. A
/// detection without such a GT that still overlaps a don't-care GT at the
/// threshold is neither TP nor FP. `counted` marks GTs that belong to the
/// tier being evaluated; empty means all count.
inline MatchResult match_detections(std::span<const Detection> dets, std::span<const BBox> gts, double iou_thresh,
                                    std::span<const bool> counted = {}) {
  MatchResult r{std::vector<MatchKind>(dets.size(), MatchKind::FalsePositive), std::vector<int>(gts.size(), -1)};
  auto counts = [&](std::size_t g) { return counted.empty() || counted[g]; };
  for (auto i : detector::rank_order(dets)) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (!counts(g) || r.gt_match[g] >= 0) continue;
      const double v = detector::iou(dets[i].box, gts[g]);
      if (v >= iou_thresh && (best < 0 || v > best_iou)) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      r.gt_match[static_cast<std::size_t>(best)] = static_cast<int>(i);
      r.det[i] = MatchKind::TruePositive;
      continue;
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (!counts(g) && detector::iou(dets[i].box, gts[g]) >= iou_thresh) {
        r.det[i] = MatchKind::DontCare;
        break;
      }
    }
  }
  return r;
}

/// One scored detection after matching, pooled across a dataset.
struct ScoredMatch {
  double confidence = 0.0;
  bool true_positive = false;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

/// Precision/recall at every prefix of the confidence-sorted list. Ties keep input order.
inline std::vector<PrPoint> pr_curve(std::vector<ScoredMatch> matches, std::size_t total_gt) {
  std::stable_sort(matches.begin(), matches.end(),
                   [](const ScoredMatch& a, const ScoredMatch& b) { return a.confidence > b.confidence; });
  std::vector<PrPoint> curve;
  curve.reserve(matches.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < matches.size(); ++k) {
    tp += matches[k].true_positive ? 1 : 0;
    curve.push_back({static_cast<double>(tp) / static_cast<double>(total_gt),
                     static_cast<double>(tp) / static_cast<double>(k + 1)});
  }
  return curve;
}

/// Interpolated AP: mean over sampled recall levels r of the maximum precision
/// at recall >= r. 40 points samples r in {1/40, ..., 1}; 11 points samples
/// r in {0, 0.1, ..., 1}. std::nullopt when there is no ground truth.
inline std::optional<double> average_precision(const std::vector<ScoredMatch>& matches, std::size_t total_gt,
                                               int points = 40) {
  if (total_gt == 0) return std::nullopt;
  const auto curve = pr_curve(matches, total_gt);
  // Envelope from the right: best precision achievable at this recall or higher.
  std::vector<double> env(curve.size());
  double best = 0.0;
  for (std::size_t k = curve.size(); k-- > 0;) {
    best = std::max(best, curve[k].precision);
    env[k] = best;
  }
  double sum = 0.0;
  std::size_t k = 0;
  const double eps = 1e-12;
  const bool eleven = points == 11;
  for (int i = eleven ? 0 : 1; i <= (eleven ? 10 : points); ++i) {
    const double r = static_cast<double>(i) / (eleven ? 10 : points);
    while (k < curve.size() && curve[k].recall + eps < r) ++k;
    if (k == curve.size()) break;
    sum += env[k];
  }
  return sum / points;
}

}  // namespace uamt::evalkit
