// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "uamt/detector/box.hpp"
#include "uamt/errors.hpp"

namespace uamt::adapt {

using detector::BBox;
using detector::Detection;

/// Training schedule and mean-teacher settings. Defaults are the published
/// settings: thresholds {0.1, 0.6, 0.8}, T = 15, alpha = 0.999, 50 epochs,
/// batch 16.
struct AdaptConfig {
  std::vector<double> delta_schedule = {0.1, 0.6, 0.8};
  int iterations = 3;  // J
  int mc_passes = 15;  // T
  double alpha = 0.999;
  int source_epochs = 50;
  int epochs = 50;  // pseudo-label rounds and mean-teacher stage
  int batch_size = 16;
  double lr = 1e-3;         // pseudo-label rounds and mean-teacher stage
  double source_lr = 1e-3;  // source pre-training
  std::uint64_t seed = 1;

  double object_scale_min = 0.9;
  double object_scale_max = 1.1;

  /// false forces every loss weight C to 1 (plain mean teacher).
  bool uncertainty = true;
  /// Apply the EMA once per epoch instead of once per batch.
  bool per_epoch_ema = false;
  /// Weight the teacher-consistency term by C as well.
  bool weight_teacher_loss = true;
  /// Dropout active in the student's own ROI head while training.
  bool student_dropout = true;
  /// Compute MC variance over sigmoid probabilities instead of raw logits.
  bool variance_over_probabilities = false;

  /// Threshold used in round j; rounds beyond the schedule reuse its last entry.
  double delta_for_round(int j) const {
    const auto n = static_cast<int>(delta_schedule.size());
    return delta_schedule[static_cast<std::size_t>(std::min(j, n - 1))];
  }

  void validate() const {
    if (delta_schedule.empty()) throw ConfigError("adapt.delta must have at least one entry");
    for (double d : delta_schedule)
      if (!(d > 0.0 && d < 1.0)) throw ConfigError("adapt.delta entries must lie in (0, 1)");
    if (iterations < 0) throw ConfigError("adapt.iterations must be >= 0");
    if (mc_passes < 2) throw ConfigError("adapt.mc_passes must be >= 2");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("adapt.alpha must lie in [0, 1]");
    if (epochs < 0 || source_epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("adapt.batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("adapt.lr must be positive");
    if (!(source_lr > 0.0)) throw ConfigError("adapt.source_lr must be positive");
    if (!(object_scale_min > 0.0 && object_scale_max >= object_scale_min))
      throw ConfigError("object scale range must satisfy 0 < min <= max");
  }
};

struct SceneLabels {
  std::string scene_id;
  std::vector<Detection> detections;
};

/// Thresholded detections for every target scene from one round.
struct PseudoLabelSet {
  int iteration = 0;
  double threshold = 0.0;
  std::string model_hash;
  std::vector<SceneLabels> scenes;

  std::size_t label_count() const noexcept {
    std::size_t n = 0;
    for (const auto& s : scenes) n += s.detections.size();
    return n;
  }

  const SceneLabels* find(const std::string& id) const noexcept {
    for (const auto& s : scenes)
      if (s.scene_id == id) return &s;
    return nullptr;
  }
};

/// Monte-Carlo dropout statistics for a set of ROIs.
struct TeacherStats {
  std::vector<double> mean_logit;
  std::vector<double> variance;
  std::vector<double> weight;       // C
  std::vector<double> pseudo_prob;  // sigmoid(mean_logit)
};

/// One ROI seen by the teacher during a snapshot epoch.
struct VarianceSample {
  int epoch = 0;
  std::string scene_id;
  BBox box;
  double mean_logit = 0.0;
  double variance = 0.0;
  double weight = 1.0;
};

/// Per-step training record.
struct TrainLogRow {
  int epoch = 0;
  long step = 0;
  double rpn_cls = 0.0;
  double rpn_reg = 0.0;
  double rpn_dir = 0.0;
  double roi_cls = 0.0;
  double roi_tea = 0.0;
  double total = 0.0;
  double mean_weight = 1.0;
  double lower_clip_fraction = 0.0;
};

}  // namespace uamt::adapt
