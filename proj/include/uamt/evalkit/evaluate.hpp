// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uamt/detector/network.hpp"
#include "uamt/evalkit/metrics.hpp"
#include "uamt/scenegen/scene.hpp"

namespace uamt::evalkit {

struct EvalConfig {
  double iou_threshold = 0.7;
  double correct_iou = 0.5;
  int ap_points = 40;
  TierRules tiers;
};

struct TierReport {
  Difficulty tier = Difficulty::Moderate;
  std::optional<double> ap;  // absent when the tier has no ground truth
  std::vector<PrPoint> curve;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t gt = 0;
};

struct EvalReport {
  std::array<TierReport, 3> tiers;
  std::size_t scenes = 0;
  std::size_t detections = 0;

  const TierReport& tier(Difficulty d) const { return tiers[static_cast<std::size_t>(d)]; }
  /// Moderate AP in [0, 1], 0 when the tier is empty.
  double moderate_ap() const { return tier(Difficulty::Moderate).ap.value_or(0.0); }
};

/// Tier-wise AP of per-scene detections against the scenes' ground truth.
/// detections[i] belongs to scenes[i].
inline EvalReport evaluate_detections(const scenegen::Dataset& scenes,
                                      const std::vector<std::vector<Detection>>& detections, const EvalConfig& cfg) {
  EvalReport rep;
  rep.scenes = scenes.size();
  std::array<std::vector<ScoredMatch>, 3> pooled;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& scene = scenes[i];
    const auto& dets = detections[i];
    rep.detections += dets.size();
    std::vector<Difficulty> bins;
    for (const auto& g : scene.gt_boxes) bins.push_back(difficulty_bin(g, scene, cfg.tiers));
    for (auto tier : kTiers) {
      const auto t = static_cast<std::size_t>(tier);
      auto counted = std::make_unique<bool[]>(bins.size() + 1);
      std::size_t n_counted = 0;
      for (std::size_t g = 0; g < bins.size(); ++g) {
        counted[g] = in_tier(bins[g], tier);
        n_counted += counted[g] ? 1 : 0;
      }
      const auto m = match_detections(dets, scene.gt_boxes, cfg.iou_threshold,
                                      std::span<const bool>(counted.get(), bins.size()));
      for (std::size_t d = 0; d < dets.size(); ++d) {
        if (m.det[d] == MatchKind::DontCare) continue;
        const bool tp = m.det[d] == MatchKind::TruePositive;
        pooled[t].push_back({dets[d].confidence, tp});
        (tp ? rep.tiers[t].tp : rep.tiers[t].fp)++;
      }
      rep.tiers[t].gt += n_counted;
      for (std::size_t g = 0; g < bins.size(); ++g)
        if (counted[g] && m.gt_match[g] < 0) ++rep.tiers[t].fn;
    }
  }
  for (auto tier : kTiers) {
    const auto t = static_cast<std::size_t>(tier);
    auto& tr = rep.tiers[t];
    tr.tier = tier;
    if (tr.gt > 0) {
      tr.curve = pr_curve(pooled[t], tr.gt);
      tr.ap = average_precision(pooled[t], tr.gt, cfg.ap_points);
    }
  }
  return rep;
}

inline std::vector<std::vector<Detection>> run_detector(const nnkit::ParamSet& params, const scenegen::Dataset& scenes,
                                                        const detector::DetectorConfig& det) {
  std::vector<std::vector<Detection>> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(detector::detect(s, params, det));
  return out;
}

inline EvalReport evaluate_model(const nnkit::ParamSet& params, const scenegen::Dataset& scenes,
                                 const detector::DetectorConfig& det, const EvalConfig& cfg) {
  return evaluate_detections(scenes, run_detector(params, scenes, det), cfg);
}

}  // namespace uamt::evalkit
