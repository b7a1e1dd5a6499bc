// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "uamt/adapt/types.hpp"
#include "uamt/detector/losses.hpp"
#include "uamt/detector/network.hpp"
#include "uamt/nnkit/optim.hpp"
#include "uamt/scenegen/augment.hpp"

namespace uamt::adapt {

using detector::DetectorConfig;
using nnkit::Grid;
using nnkit::ParamSet;
using nnkit::RngStream;
using scenegen::PointScene;

// Stream salts. Every random draw in training is addressed by
// (seed, key(salt, ...)) so runs are reproducible and order-independent.
inline constexpr std::uint64_t kSaltShuffle = 0x5348;
inline constexpr std::uint64_t kSaltAugment = 0x4147;
inline constexpr std::uint64_t kSaltStudentDropout = 0x5344;
inline constexpr std::uint64_t kSaltTeacher = 0x5444;

inline constexpr double kMinWeight = 1e-5;

/// C = clip(1 / variance, 1e-5, 1); zero variance maps to 1.
inline double uncertainty_weight(double variance) {
  if (variance < 0.0 || std::isnan(variance)) throw std::logic_error("uncertainty_weight: negative variance");
  if (variance <= 1.0) return 1.0;
  return std::max(1.0 / variance, kMinWeight);
}

/// T stochastic passes of the teacher ROI head over fixed proposals. Pass t
/// uses stream base.split(t), so the result does not depend on pass order.
inline TeacherStats mc_teacher_predict(const ParamSet& teacher, const Grid& features,
                                       std::span<const Detection> proposals, const DetectorConfig& det, int passes,
                                       const RngStream& base, bool variance_over_probabilities = false) {
  if (passes < 2) throw ConfigError("mc_teacher_predict: T must be >= 2");
  const std::size_t n = proposals.size();
  std::vector<std::vector<double>> logits(static_cast<std::size_t>(passes));
  for (int t = 0; t < passes; ++t) {
    RngStream s = base.split(static_cast<std::uint64_t>(t));
    auto out = detector::roi_forward(features, proposals, teacher, det, true, s);
    auto& row = logits[static_cast<std::size_t>(t)];
    row.resize(n);
    for (std::size_t r = 0; r < n; ++r) row[r] = out.rois[r].valid ? out.rois[r].logit : 0.0;
  }
  TeacherStats st;
  st.mean_logit.assign(n, 0.0);
  st.variance.assign(n, 0.0);
  st.weight.assign(n, 1.0);
  st.pseudo_prob.assign(n, 0.5);
  for (std::size_t r = 0; r < n; ++r) {
    double sum = 0.0;
    for (const auto& row : logits) sum += row[r];
    const double mean = sum / passes;
    double mean_v = mean;
    if (variance_over_probabilities) {
      mean_v = 0.0;
      for (const auto& row : logits) mean_v += nnkit::sigmoid(row[r]);
      mean_v /= passes;
    }
    double ss = 0.0;
    for (const auto& row : logits) {
      const double x = variance_over_probabilities ? nnkit::sigmoid(row[r]) : row[r];
      ss += (x - mean_v) * (x - mean_v);
    }
    st.mean_logit[r] = mean;
    st.variance[r] = ss / (passes - 1);
    st.weight[r] = uncertainty_weight(st.variance[r]);
    st.pseudo_prob[r] = nnkit::sigmoid(mean);
  }
  return st;
}

/// A scene with the boxes it is supervised by (ground truth or pseudo-labels).
struct TrainItem {
  PointScene scene;
  std::vector<BBox> labels;
};

/// Teacher side of a mean-teacher step.
struct TeacherContext {
  const ParamSet* params = nullptr;
  int passes = 15;
  bool uncertainty = true;
  bool weight_teacher_loss = true;
  bool variance_over_probabilities = false;
};

struct StepOptions {
  std::uint64_t seed = 1;
  std::uint64_t salt = 0;
  long step = 0;
  bool student_dropout = true;
  /// When set, ROI samples are appended here (used for variance snapshots).
  std::vector<VarianceSample>* snapshot = nullptr;
  int epoch = 0;
};

struct StepResult {
  detector::LossTerms terms;
  double total = 0.0;
  ParamSet grads;
  std::size_t rois = 0;
  double mean_weight = 1.0;
  double lower_clip_fraction = 0.0;
};

/// Proposals from an RPN output restricted to those the ROI head can pool.
inline std::vector<Detection> roi_proposals(const detector::RpnOutput& rpn, const DetectorConfig& det) {
  auto props = detector::propose(rpn, det);
  std::erase_if(props, [&](const Detection& d) {
    std::size_t ix = 0, iy = 0;
    return !det.grid.locate(d.box.cx, d.box.cy, ix, iy);
  });
  return props;
}

/// Loss and gradient of one batch. Teacher terms are zero when teacher is null.
inline StepResult compute_batch(const ParamSet& student, std::span<const TrainItem> batch, const DetectorConfig& det,
                                const StepOptions& opt, const TeacherContext* teacher = nullptr) {
  struct SceneWork {
    detector::RpnPass pass;
    detector::AnchorTargets targets;
    std::vector<Detection> proposals;
    detector::RoiOutput roi;
    std::vector<double> roi_target;
    TeacherStats stats;
  };
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  StepResult res;
  res.grads = student.zeros_like();
  std::vector<SceneWork> work(batch.size());
  std::vector<detector::RpnGrad> rpn_grads;
  rpn_grads.reserve(batch.size());

  std::size_t total_rois = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    auto& w = work[b];
    const auto& item = batch[b];
    w.pass = detector::run_rpn(detector::rasterize_bev(item.scene, det.grid), student, det);
    w.targets = detector::assign_targets(det.grid, item.labels, det.ignore_dilation);
    auto& g = rpn_grads.emplace_back(w.pass.out.cells());
    const auto& out = w.pass.out;
    res.terms.rpn_cls += inv_batch * detector::focal_loss(out.cls_logit, w.targets.cls, w.targets.valid, det.focal_gamma,
                                                          det.focal_alpha, g.cls, inv_batch).value;
    res.terms.rpn_reg += inv_batch * detector::smooth_l1(out.reg, w.targets.reg, w.targets.positive,
                                                         det.smooth_l1_beta, g.reg, inv_batch).value;
    res.terms.rpn_dir +=
        inv_batch * detector::dir_ce_loss(out.dir_logit, w.targets.dir, w.targets.positive, g.dir, inv_batch).value;

    w.proposals = roi_proposals(out, det);
    RngStream sdrop(opt.seed, nnkit::stream_key(opt.salt, kSaltStudentDropout, opt.step, b));
    w.roi = detector::roi_forward(w.pass.trace.features, w.proposals, student, det,
                                  opt.student_dropout, sdrop);
    w.roi_target.assign(w.proposals.size(), 0.0);
    for (std::size_t r = 0; r < w.proposals.size(); ++r) {
      double best = 0.0;
      for (const auto& l : item.labels) best = std::max(best, detector::iou(w.proposals[r].box, l));
      w.roi_target[r] = best >= det.roi_positive_iou ? 1.0 : 0.0;
    }
    total_rois += w.proposals.size();

    if (teacher != nullptr && !w.proposals.empty()) {
      const auto tfeat = detector::backbone_forward(w.pass.trace.input, *teacher->params, det).features;
      RngStream base(opt.seed, nnkit::stream_key(opt.salt, kSaltTeacher, opt.step, b));
      w.stats = mc_teacher_predict(*teacher->params, tfeat, w.proposals, det, teacher->passes, base,
                                   teacher->variance_over_probabilities);
      if (opt.snapshot != nullptr) {
        for (std::size_t r = 0; r < w.proposals.size(); ++r)
          opt.snapshot->push_back({opt.epoch, item.scene.scene_id, w.proposals[r].box, w.stats.mean_logit[r],
                                   w.stats.variance[r], w.stats.weight[r]});
      }
    }
  }

  // ROI terms are averaged over every valid ROI in the batch.
  std::vector<std::vector<double>> roi_dlogit(batch.size());
  double weight_sum = 0.0;
  std::size_t lower_clipped = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    auto& w = work[b];
    const std::size_t n = w.proposals.size();
    roi_dlogit[b].assign(n, 0.0);
    if (n == 0) continue;
    std::vector<double> logits(n), c(n, 1.0), c_tea(n, 1.0);
    for (std::size_t r = 0; r < n; ++r) logits[r] = w.roi.rois[r].logit;
    if (teacher != nullptr) {
      for (std::size_t r = 0; r < n; ++r) {
        c[r] = teacher->uncertainty ? w.stats.weight[r] : 1.0;
        c_tea[r] = teacher->weight_teacher_loss ? c[r] : 1.0;
        weight_sum += c[r];
        lower_clipped += c[r] <= kMinWeight ? 1 : 0;
      }
    } else {
      weight_sum += static_cast<double>(n);
    }
    // roi_bce_loss averages over its own inputs; rescale to the batch count.
    const double share = static_cast<double>(n) / static_cast<double>(total_rois);
    res.terms.roi_cls += share * detector::roi_bce_loss(logits, w.roi_target, c, roi_dlogit[b], share).value;
    if (teacher != nullptr)
      res.terms.roi_tea += share * detector::roi_bce_loss(logits, w.stats.pseudo_prob, c_tea, roi_dlogit[b], share).value;
  }
  res.rois = total_rois;
  if (total_rois > 0) {
    res.mean_weight = weight_sum / static_cast<double>(total_rois);
    res.lower_clip_fraction = static_cast<double>(lower_clipped) / static_cast<double>(total_rois);
  }
  res.total = detector::total_loss(res.terms, opt.step);

  for (std::size_t b = 0; b < batch.size(); ++b) {
    auto& w = work[b];
    Grid gfeat = detector::rpn_heads_backward(w.pass.trace.features, student, rpn_grads[b], res.grads);
    detector::roi_backward(w.roi, roi_dlogit[b], student, res.grads, &gfeat);
    detector::backbone_backward(w.pass.trace, student, std::move(gfeat), res.grads);
  }
  return res;
}

struct TrainOptions {
  int epochs = 50;
  int batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::uint64_t salt = 0;
  /// Source mode: object scaling + global augmentation per sample.
  bool augment = false;
  double scale_min = 0.9;
  double scale_max = 1.1;
  bool student_dropout = true;
};

using StepCallback = std::function<void(const TrainLogRow&)>;

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t salt, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  RngStream rng(seed, nnkit::stream_key(salt, kSaltShuffle, epoch));
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

inline TrainItem augmented(const TrainItem& item, const TrainOptions& opt, int epoch, std::size_t index,
                           const scenegen::SceneExtent& ext) {
  RngStream rng(opt.seed, nnkit::stream_key(opt.salt, kSaltAugment, epoch, index));
  PointScene s = item.scene;
  s.gt_boxes = item.labels;
  s = scenegen::random_object_scaling(s, opt.scale_min, opt.scale_max, rng.split(0), ext);
  s = scenegen::global_augment(s, rng.split(1), ext);
  TrainItem out{std::move(s), {}};
  out.labels = out.scene.gt_boxes;
  return out;
}

inline TrainLogRow make_row(int epoch, long step, const StepResult& r) {
  return {epoch, step, r.terms.rpn_cls, r.terms.rpn_reg, r.terms.rpn_dir, r.terms.roi_cls, r.terms.roi_tea,
          r.total, r.mean_weight, r.lower_clip_fraction};
}

/// Supervised training on labeled (or pseudo-labeled) scenes with the four
/// base losses. epochs = 0 returns `init` unchanged.
inline ParamSet train_detector(std::span<const TrainItem> data, ParamSet init, const DetectorConfig& det,
                               const TrainOptions& opt, const StepCallback& on_step = {}) {
  if (opt.epochs <= 0 || data.empty()) return init;
  const scenegen::SceneExtent ext{det.grid.extent_x, det.grid.extent_y};
  nnkit::AdamState adam(init);
  const nnkit::AdamConfig acfg{opt.lr};
  long step = 0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    const auto order = epoch_order(data.size(), opt.seed, opt.salt, epoch);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      std::vector<TrainItem> batch;
      batch.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const auto& item = data[order[k]];
        batch.push_back(opt.augment ? augmented(item, opt, epoch, order[k], ext) : item);
      }
      StepOptions so{opt.seed, opt.salt, step, opt.student_dropout, nullptr, epoch};
      auto r = compute_batch(init, batch, det, so);
      nnkit::adam_step(init, r.grads, adam, acfg);
      if (on_step) on_step(make_row(epoch, step, r));
      ++step;
    }
  }
  return init;
}

/// Observer hook for mean-teacher training, called after every optimizer step
/// (and EMA update when per batch).
using MeanTeacherObserver = std::function<void(long step, const ParamSet& student, const ParamSet& teacher)>;

struct MeanTeacherResult {
  ParamSet student;
  ParamSet teacher;
  std::vector<TrainLogRow> log;
  /// Teacher MC statistics for every ROI seen in the first and last epochs.
  std::vector<VarianceSample> snapshots;
};

/// Uncertainty-aware mean-teacher training. Student and teacher both start
/// from `source`; only the student receives gradients, the teacher follows by
/// EMA.
inline MeanTeacherResult mean_teacher_train(const ParamSet& source, std::span<const TrainItem> data,
                                            const DetectorConfig& det, const AdaptConfig& cfg,
                                            std::uint64_t salt = 0x4D54, const MeanTeacherObserver& observer = {}) {
  cfg.validate();
  MeanTeacherResult res{source, source, {}, {}};
  if (cfg.epochs <= 0 || data.empty()) return res;
  nnkit::AdamState adam(res.student);
  const nnkit::AdamConfig acfg{cfg.lr};
  TeacherContext tctx{&res.teacher, cfg.mc_passes, cfg.uncertainty, cfg.weight_teacher_loss,
                      cfg.variance_over_probabilities};
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool snap = epoch == 0 || epoch == cfg.epochs - 1;
    const auto order = epoch_order(data.size(), cfg.seed, salt, epoch);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<TrainItem> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(data[order[k]]);
      StepOptions so{cfg.seed, salt, step, cfg.student_dropout, snap ? &res.snapshots : nullptr, epoch};
      auto r = compute_batch(res.student, batch, det, so, &tctx);
      nnkit::adam_step(res.student, r.grads, adam, acfg);
      if (!cfg.per_epoch_ema) nnkit::ema_update(res.teacher, res.student, cfg.alpha);
      res.log.push_back(make_row(epoch, step, r));
      if (observer) observer(step, res.student, res.teacher);
      ++step;
    }
    if (cfg.per_epoch_ema) nnkit::ema_update(res.teacher, res.student, cfg.alpha);
  }
  return res;
}

}  // namespace uamt::adapt
