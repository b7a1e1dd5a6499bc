// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdio>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "uamt/adapt/types.hpp"
#include "uamt/evalkit/evaluate.hpp"
#include "uamt/nnkit/layers.hpp"

namespace uamt::evalkit {

namespace detail {

inline std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline const scenegen::PointScene* find_scene(const scenegen::Dataset& ds, const std::string& id) {
  for (const auto& s : ds)
    if (s.scene_id == id) return &s;
  return nullptr;
}

inline double best_iou(const BBox& b, const scenegen::PointScene& scene) {
  double best = 0.0;
  for (const auto& g : scene.gt_boxes) best = std::max(best, detector::iou(b, g));
  return best;
}

inline bool has_ground_truth(const scenegen::Dataset& ds) {
  return std::any_of(ds.begin(), ds.end(), [](const auto& s) { return !s.gt_boxes.empty(); });
}

}  // namespace detail

// --- pseudo-label confidence vs correctness ---------------------------------

struct ConfidenceDensityRow {
  int iteration = 0;
  std::vector<std::size_t> correct;    // per confidence bin
  std::vector<std::size_t> incorrect;  // per confidence bin
  std::size_t total = 0;
  double mean_conf_correct = 0.0;
  double mean_conf_incorrect = 0.0;
  double incorrect_above_08 = 0.0;  // fraction of incorrect labels with confidence > 0.8
};

/// Histograms pseudo-label confidence split by IoU with ground truth
/// (correct iff IoU >= correct_iou). std::nullopt when `labeled` has no boxes.
inline std::optional<std::vector<ConfidenceDensityRow>> confidence_density_report(
    const std::vector<adapt::PseudoLabelSet>& sets, const scenegen::Dataset& labeled, double correct_iou = 0.5,
    std::size_t bins = 20) {
  if (!detail::has_ground_truth(labeled)) return std::nullopt;
  std::vector<ConfidenceDensityRow> rows;
  for (const auto& set : sets) {
    ConfidenceDensityRow row;
    row.iteration = set.iteration;
    row.correct.assign(bins, 0);
    row.incorrect.assign(bins, 0);
    double sum_c = 0.0, sum_i = 0.0;
    std::size_t n_c = 0, n_i = 0, hi_i = 0;
    for (const auto& sl : set.scenes) {
      const auto* scene = detail::find_scene(labeled, sl.scene_id);
      if (scene == nullptr) continue;
      for (const auto& d : sl.detections) {
        const auto bin = std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, d.confidence) * bins));
        if (detail::best_iou(d.box, *scene) >= correct_iou) {
          ++row.correct[bin];
          sum_c += d.confidence;
          ++n_c;
        } else {
          ++row.incorrect[bin];
          sum_i += d.confidence;
          ++n_i;
          hi_i += d.confidence > 0.8 ? 1 : 0;
        }
      }
    }
    row.total = n_c + n_i;
    row.mean_conf_correct = n_c ? sum_c / static_cast<double>(n_c) : 0.0;
    row.mean_conf_incorrect = n_i ? sum_i / static_cast<double>(n_i) : 0.0;
    row.incorrect_above_08 = n_i ? static_cast<double>(hi_i) / static_cast<double>(n_i) : 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string confidence_density_csv(const std::vector<ConfidenceDensityRow>& rows) {
  std::string out = "iteration,bin_lo,bin_hi,correct,incorrect\n";
  for (const auto& r : rows) {
    const auto bins = r.correct.size();
    for (std::size_t b = 0; b < bins; ++b) {
      out += std::to_string(r.iteration) + "," + detail::fmt_real(static_cast<double>(b) / bins) + "," +
             detail::fmt_real(static_cast<double>(b + 1) / bins) + "," + std::to_string(r.correct[b]) + "," +
             std::to_string(r.incorrect[b]) + "\n";
    }
  }
  return out;
}

// --- teacher variance of incorrect ROIs -------------------------------------

struct VarianceRow {
  int epoch = 0;
  std::vector<std::size_t> histogram;  // incorrect ROIs per variance bin
  std::size_t incorrect = 0;
  std::size_t total = 0;
  double median_variance = 0.0;
  double fraction_below_one = 0.0;
};

inline constexpr double kVarianceBinWidth = 0.25;

/// For each snapshot epoch, the teacher variance of ROIs whose pseudo class
/// (sigmoid(mean logit) >= 0.5) disagrees with ground truth (IoU >= correct_iou).
inline std::vector<VarianceRow> variance_report(const std::vector<adapt::VarianceSample>& samples,
                                                const scenegen::Dataset& labeled, double correct_iou = 0.5,
                                                std::size_t bins = 20) {
  if (samples.empty()) throw EvaluationError("variance_report: no variance snapshots were logged");
  if (!detail::has_ground_truth(labeled)) throw EvaluationError("variance_report: ground truth unavailable");
  std::unordered_map<std::string, const scenegen::PointScene*> index;
  for (const auto& s : labeled) index.emplace(s.scene_id, &s);
  std::vector<int> epochs;
  for (const auto& s : samples)
    if (std::find(epochs.begin(), epochs.end(), s.epoch) == epochs.end()) epochs.push_back(s.epoch);
  std::sort(epochs.begin(), epochs.end());
  std::vector<VarianceRow> rows;
  for (int e : epochs) {
    VarianceRow row;
    row.epoch = e;
    row.histogram.assign(bins, 0);
    std::vector<double> vars;
    for (const auto& s : samples) {
      if (s.epoch != e) continue;
      ++row.total;
      const auto it = index.find(s.scene_id);
      if (it == index.end()) continue;
      const bool pseudo_object = nnkit::sigmoid(s.mean_logit) >= 0.5;
      const bool true_object = detail::best_iou(s.box, *it->second) >= correct_iou;
      if (pseudo_object == true_object) continue;
      vars.push_back(s.variance);
      const auto bin = std::min(bins - 1, static_cast<std::size_t>(s.variance / kVarianceBinWidth));
      ++row.histogram[bin];
    }
    row.incorrect = vars.size();
    if (!vars.empty()) {
      std::sort(vars.begin(), vars.end());
      const auto n = vars.size();
      row.median_variance = n % 2 ? vars[n / 2] : 0.5 * (vars[n / 2 - 1] + vars[n / 2]);
      row.fraction_below_one =
          static_cast<double>(std::count_if(vars.begin(), vars.end(), [](double v) { return v < 1.0; })) /
          static_cast<double>(n);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string variance_csv(const std::vector<VarianceRow>& rows) {
  std::string out = "epoch,bin_lo,bin_hi,incorrect_rois\n";
  for (const auto& r : rows) {
    for (std::size_t b = 0; b < r.histogram.size(); ++b) {
      const bool last = b + 1 == r.histogram.size();
      out += std::to_string(r.epoch) + "," + detail::fmt_real(b * kVarianceBinWidth) + "," +
             (last ? std::string("inf") : detail::fmt_real((b + 1) * kVarianceBinWidth)) + "," +
             std::to_string(r.histogram[b]) + "\n";
    }
  }
  return out;
}

// --- AP per pseudo-label iteration ------------------------------------------

struct CurvePoint {
  int iteration = 0;
  double moderate_ap = 0.0;
};

inline std::vector<CurvePoint> map_over_iterations(const std::vector<nnkit::ParamSet>& models,
                                                   const scenegen::Dataset& eval_set,
                                                   const detector::DetectorConfig& det, const EvalConfig& cfg,
                                                   int first_iteration = 1) {
  std::vector<CurvePoint> curve;
  for (std::size_t j = 0; j < models.size(); ++j)
    curve.push_back({first_iteration + static_cast<int>(j), evaluate_model(models[j], eval_set, det, cfg).moderate_ap()});
  return curve;
}

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "iteration,moderate_ap\n";
  for (const auto& p : curve) out += std::to_string(p.iteration) + "," + detail::fmt_real(p.moderate_ap) + "\n";
  return out;
}

inline std::string eval_csv(const EvalReport& rep) {
  std::string out = "tier,ap,tp,fp,fn,gt\n";
  for (const auto& t : rep.tiers) {
    out += std::string(to_string(t.tier)) + "," + (t.ap ? detail::fmt_real(*t.ap) : std::string("absent")) + "," +
           std::to_string(t.tp) + "," + std::to_string(t.fp) + "," + std::to_string(t.fn) + "," +
           std::to_string(t.gt) + "\n";
  }
  return out;
}

inline std::string pr_csv(const EvalReport& rep) {
  std::string out = "tier,recall,precision\n";
  for (const auto& t : rep.tiers)
    for (const auto& p : t.curve)
      out += std::string(to_string(t.tier)) + "," + detail::fmt_real(p.recall) + "," + detail::fmt_real(p.precision) + "\n";
  return out;
}

inline std::string train_log_csv(const std::vector<adapt::TrainLogRow>& rows) {
  std::string out = "epoch,step,rpn_cls,rpn_reg,rpn_dir,roi_cls,roi_tea,total,mean_c,lower_clip_fraction\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.step);
    for (double v : {r.rpn_cls, r.rpn_reg, r.rpn_dir, r.roi_cls, r.roi_tea, r.total, r.mean_weight,
                     r.lower_clip_fraction})
      out += "," + detail::fmt_real(v);
    out += "\n";
  }
  return out;
}

}  // namespace uamt::evalkit
