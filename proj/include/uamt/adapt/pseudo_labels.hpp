// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uamt/adapt/training.hpp"
#include "uamt/adapt/types.hpp"
#include "uamt/scenegen/dataset_io.hpp"

namespace uamt::adapt {

/// Runs full inference (dropout off) and keeps detections with confidence >= delta.
inline PseudoLabelSet infer_pseudo_labels(const ParamSet& params, const scenegen::Dataset& scenes,
                                          const DetectorConfig& det, double delta, int iteration = 0) {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("pseudo-label threshold must lie in (0, 1)");
  PseudoLabelSet out;
  out.iteration = iteration;
  out.threshold = delta;
  out.model_hash = nnkit::checkpoint_hash(params);
  out.scenes.reserve(scenes.size());
  for (const auto& s : scenes) {
    SceneLabels sl{s.scene_id, {}};
    for (const auto& d : detector::detect(s, params, det))
      if (d.confidence >= delta) sl.detections.push_back(d);
    out.scenes.push_back(std::move(sl));
  }
  return out;
}

/// Every post-NMS detection, unthresholded (threshold recorded as 0). The
/// confidence-vs-correctness analysis looks at this full set so that low
/// confidence errors stay visible.
inline PseudoLabelSet infer_candidates(const ParamSet& params, const scenegen::Dataset& scenes,
                                       const DetectorConfig& det, int iteration = 0) {
  PseudoLabelSet out;
  out.iteration = iteration;
  out.threshold = 0.0;
  out.model_hash = nnkit::checkpoint_hash(params);
  out.scenes.reserve(scenes.size());
  for (const auto& s : scenes) out.scenes.push_back({s.scene_id, detector::detect(s, params, det)});
  return out;
}

/// Pairs each scene with its pseudo-label boxes (scenes without an entry get none).
inline std::vector<TrainItem> pseudo_training_set(const scenegen::Dataset& scenes, const PseudoLabelSet& labels) {
  std::vector<TrainItem> items;
  items.reserve(scenes.size());
  for (const auto& s : scenes) {
    TrainItem it{s, {}};
    it.scene.gt_boxes.clear();
    if (const auto* sl = labels.find(s.scene_id))
      for (const auto& d : sl->detections) it.labels.push_back(d.box);
    items.push_back(std::move(it));
  }
  return items;
}

struct PseudoRoundsResult {
  /// labels[j] for j = 0..J; labels.back() feeds the mean teacher.
  std::vector<PseudoLabelSet> labels;
  /// models[j - 1] is the model trained in round j.
  std::vector<ParamSet> models;
};

using RoundCallback = std::function<void(int round, const PseudoLabelSet&, const ParamSet* model)>;

inline TrainOptions pseudo_round_options(const AdaptConfig& cfg, int round) {
  TrainOptions opt;
  opt.epochs = cfg.epochs;
  opt.batch_size = cfg.batch_size;
  opt.lr = cfg.lr;
  opt.seed = cfg.seed;
  opt.salt = nnkit::stream_key(0x5052, round);
  opt.augment = false;
  opt.student_dropout = cfg.student_dropout;
  return opt;
}

/// Iterative pseudo-label generation. Every round restarts from the source
/// model, trains on the previous round's labels and relabels the target set.
inline PseudoRoundsResult iterative_pseudo_rounds(const ParamSet& source, const scenegen::Dataset& target,
                                                  const DetectorConfig& det, const AdaptConfig& cfg,
                                                  const RoundCallback& on_round = {}) {
  cfg.validate();
  PseudoRoundsResult res;
  auto check = [&](const PseudoLabelSet& set, int round) {
    if (set.label_count() == 0)
      throw StageError("pseudo-iter", "round " + std::to_string(round) + " produced no pseudo-labels at threshold " +
                                          std::to_string(set.threshold));
  };
  res.labels.push_back(infer_pseudo_labels(source, target, det, cfg.delta_for_round(0), 0));
  check(res.labels.back(), 0);
  if (on_round) on_round(0, res.labels.back(), nullptr);
  for (int j = 1; j <= cfg.iterations; ++j) {
    const auto items = pseudo_training_set(target, res.labels.back());
    res.models.push_back(train_detector(items, source, det, pseudo_round_options(cfg, j)));
    res.labels.push_back(infer_pseudo_labels(res.models.back(), target, det, cfg.delta_for_round(j), j));
    check(res.labels.back(), j);
    if (on_round) on_round(j, res.labels.back(), &res.models.back());
  }
  return res;
}

// --- pseudo-label files -----------------------------------------------------
//
// Line 1: {"iteration":j,"threshold":d,"model_checkpoint_hash":"..", ...extra}
// Then one dataset-format record per scene with an added "confidence" array.

inline std::string pseudo_labels_to_string(const PseudoLabelSet& set, const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json header = extra;
  header["iteration"] = set.iteration;
  header["threshold"] = set.threshold;
  header["model_checkpoint_hash"] = set.model_hash;
  std::string out = header.dump() + "\n";
  for (const auto& s : set.scenes) {
    scenegen::PointScene rec;
    rec.scene_id = s.scene_id;
    rec.domain_tag = "pseudo";
    std::vector<double> conf;
    for (const auto& d : s.detections) {
      rec.gt_boxes.push_back(d.box);
      conf.push_back(d.confidence);
    }
    out += scenegen::scene_to_line(rec, false, &conf, false);
    out += '\n';
  }
  return out;
}

inline void write_pseudo_labels(const PseudoLabelSet& set, const std::string& path,
                                const nlohmann::json& extra = nlohmann::json::object()) {
  nnkit::write_file_bytes(path, pseudo_labels_to_string(set, extra));
}

inline PseudoLabelSet read_pseudo_labels(const std::string& path, nlohmann::json* header_out = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open pseudo-label file '" + path + "'");
  std::string line;
  if (!std::getline(f, line)) throw DataError(path + ":1: missing header");
  PseudoLabelSet set;
  try {
    const auto h = nlohmann::json::parse(line);
    set.iteration = h.at("iteration").get<int>();
    set.threshold = h.at("threshold").get<double>();
    set.model_hash = h.at("model_checkpoint_hash").get<std::string>();
    if (header_out != nullptr) *header_out = h;
  } catch (const std::exception& e) {
    throw DataError(path + ":1: " + e.what());
  }
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      std::vector<double> conf;
      const auto rec = scenegen::scene_from_line(line, &conf);
      SceneLabels sl{rec.scene_id, {}};
      for (std::size_t i = 0; i < rec.gt_boxes.size(); ++i) {
        Detection d;
        d.box = rec.gt_boxes[i];
        d.confidence = conf[i];
        d.roi_logit = std::log(conf[i] / (1.0 - conf[i]));
        sl.detections.push_back(d);
      }
      set.scenes.push_back(std::move(sl));
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return set;
}

}  // namespace uamt::adapt
