// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

namespace {

using namespace uamt;
using namespace uamt::adapt;
namespace ut = uamt::testing;

std::vector<TrainItem> two_box_items(int n = 2) {
  std::vector<TrainItem> items;
  for (int i = 0; i < n; ++i) {
    auto s = ut::two_box_scene(static_cast<std::uint64_t>(3 + i));
    s.scene_id = "scene-" + std::to_string(i);
    items.push_back({s, s.gt_boxes});
  }
  return items;
}

scenegen::Dataset scenes_of(const std::vector<TrainItem>& items) {
  scenegen::Dataset ds;
  for (const auto& it : items) ds.push_back(it.scene);
  return ds;
}

/// All weights zero; every ROI logit equals the output bias.
ParamSet constant_confidence_model(const DetectorConfig& det, double roi_bias) {
  auto p = detector::init_detector_params(det, 1);
  for (auto& e : p.entries())
    for (auto& v : e.values) v = 0.0;
  p.at("roi.fc2.bias").values[0] = roi_bias;
  return p;
}

TEST(TrainDetector, ZeroEpochsReturnsInit) {
  const auto det = ut::small_detector();
  const auto init = ut::perturbed_params(det, 2);
  TrainOptions opt;
  opt.epochs = 0;
  const auto items = two_box_items();
  EXPECT_EQ(nnkit::checkpoint_hash(train_detector(items, init, det, opt)), nnkit::checkpoint_hash(init));
}

TEST(TrainDetector, FixedBatchLossStrictlyDecreasesOverTenSteps) {
  const DetectorConfig det;
  std::vector<TrainItem> batch;
  for (const auto& s : scenegen::generate_dataset(scenegen::source_domain(), 16, 1, 1)) batch.push_back({s, s.gt_boxes});
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto params = detector::init_detector_params(det, seed);
    nnkit::AdamState adam(params);
    const nnkit::AdamConfig acfg{1e-3};
    double prev = INFINITY;
    for (int step = 0; step < 10; ++step) {
      StepOptions so{seed, 0, 0, false, nullptr, 0};
      auto r = compute_batch(params, batch, det, so);
      EXPECT_LT(r.total, prev) << "seed " << seed << " step " << step;
      prev = r.total;
      nnkit::adam_step(params, r.grads, adam, acfg);
    }
  }
}

TEST(TrainDetector, DeterministicGivenSeed) {
  const auto det = ut::small_detector();
  const auto items = two_box_items();
  TrainOptions opt;
  opt.epochs = 2;
  opt.batch_size = 1;
  opt.augment = true;
  const auto init = detector::init_detector_params(det, 4);
  EXPECT_EQ(nnkit::checkpoint_hash(train_detector(items, init, det, opt)),
            nnkit::checkpoint_hash(train_detector(items, init, det, opt)));
}

TEST(PseudoLabels, ThresholdIsInclusive) {
  const auto det = ut::small_detector();
  const auto ds = scenes_of(two_box_items(1));
  const double keep_logit = std::log(0.1 / 0.9);
  const auto keep = constant_confidence_model(det, keep_logit);
  const double conf = nnkit::sigmoid(keep_logit);
  const auto kept = infer_pseudo_labels(keep, ds, det, conf);
  EXPECT_GT(kept.label_count(), 0u);
  for (const auto& s : kept.scenes)
    for (const auto& d : s.detections) EXPECT_EQ(d.confidence, conf);
  const auto drop = constant_confidence_model(det, std::log(0.09 / 0.91));
  EXPECT_EQ(infer_pseudo_labels(drop, ds, det, 0.1).label_count(), 0u);
  EXPECT_THROW(infer_pseudo_labels(keep, ds, det, 1.0), ConfigError);
}

TEST(PseudoLabels, ZeroModelGivesOneHalfEverywhere) {
  const auto det = ut::small_detector();
  const auto ds = scenes_of(two_box_items(1));
  const auto zero = constant_confidence_model(det, 0.0);
  const auto all = infer_candidates(zero, ds, det);
  ASSERT_GT(all.label_count(), 0u);
  for (const auto& d : all.scenes[0].detections) EXPECT_EQ(d.confidence, 0.5);
  EXPECT_EQ(infer_pseudo_labels(zero, ds, det, 0.6).label_count(), 0u);
}

TEST(PseudoLabels, HigherThresholdGivesASubset) {
  const auto det = ut::small_detector();
  const auto ds = scenes_of(two_box_items(3));
  for (std::uint64_t seed : {5u, 6u, 7u}) {
    const auto p = ut::perturbed_params(det, seed);
    const auto lo = infer_pseudo_labels(p, ds, det, 0.3), hi = infer_pseudo_labels(p, ds, det, 0.6);
    for (std::size_t s = 0; s < ds.size(); ++s)
      for (const auto& d : hi.scenes[s].detections)
        EXPECT_NE(std::find(lo.scenes[s].detections.begin(), lo.scenes[s].detections.end(), d),
                  lo.scenes[s].detections.end());
  }
}

TEST(PseudoRounds, ZeroIterationsIsTheThresholdedSourceModel) {
  const auto det = ut::small_detector();
  const auto ds = scenes_of(two_box_items(2));
  const auto src = constant_confidence_model(det, 1.0);
  AdaptConfig cfg;
  cfg.iterations = 0;
  const auto r = iterative_pseudo_rounds(src, ds, det, cfg);
  ASSERT_EQ(r.labels.size(), 1u);
  EXPECT_TRUE(r.models.empty());
  const auto direct = infer_pseudo_labels(src, ds, det, 0.1);
  EXPECT_EQ(pseudo_labels_to_string(r.labels[0]), pseudo_labels_to_string(direct));
}

TEST(PseudoRounds, ScheduleReusesItsLastEntry) {
  AdaptConfig cfg;
  EXPECT_EQ(cfg.delta_for_round(0), 0.1);
  EXPECT_EQ(cfg.delta_for_round(1), 0.6);
  EXPECT_EQ(cfg.delta_for_round(2), 0.8);
  EXPECT_EQ(cfg.delta_for_round(3), 0.8);
}

TEST(PseudoRounds, EmptyRoundAbortsNamingTheRound) {
  const auto det = ut::small_detector();
  const auto ds = scenes_of(two_box_items(1));
  AdaptConfig cfg;
  cfg.delta_schedule = {0.6};
  try {
    iterative_pseudo_rounds(constant_confidence_model(det, 0.0), ds, det, cfg);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_NE(std::string(e.what()).find("round 0"), std::string::npos) << e.what();
  }
}

TEST(PseudoRounds, RoundsTrainFromTheSourceModel) {
  const auto det = ut::small_detector();
  const auto ds = scenes_of(two_box_items(2));
  const auto src = ut::perturbed_params(det, 8);
  AdaptConfig cfg;
  cfg.iterations = 2;
  cfg.epochs = 1;
  cfg.delta_schedule = {0.05};
  const auto r = iterative_pseudo_rounds(src, ds, det, cfg);
  ASSERT_EQ(r.models.size(), 2u);
  // round j restarts from the source model and trains on labels j - 1
  EXPECT_EQ(nnkit::checkpoint_hash(r.models[1]),
            nnkit::checkpoint_hash(train_detector(pseudo_training_set(ds, r.labels[1]), src, det,
                                                  pseudo_round_options(cfg, 2))));
}

// --- Monte-Carlo teacher ---------------------------------------------------------

struct McFixture {
  DetectorConfig det = ut::small_detector();
  ParamSet teacher = ut::perturbed_params(det, 9);
  detector::RpnPass pass = detector::run_rpn(detector::rasterize_bev(ut::two_box_scene(), det.grid), teacher, det);
  std::vector<detector::Detection> props = roi_proposals(pass.out, det);
};

TEST(McTeacher, VarianceMatchesTwoPassOracle) {
  McFixture f;
  const nnkit::RngStream base(11, 22);
  const int T = 15;
  const auto st = mc_teacher_predict(f.teacher, f.pass.trace.features, f.props, f.det, T, base);
  ASSERT_EQ(st.variance.size(), f.props.size());
  // passes executed in reverse order: the result must not depend on it
  std::vector<std::vector<double>> per_roi(f.props.size());
  for (int t = T - 1; t >= 0; --t) {
    auto s = base.split(static_cast<std::uint64_t>(t));
    const auto out = detector::roi_forward(f.pass.trace.features, f.props, f.teacher, f.det, true, s);
    for (std::size_t r = 0; r < f.props.size(); ++r) per_roi[r].push_back(out.rois[r].logit);
  }
  bool any_positive = false;
  for (std::size_t r = 0; r < f.props.size(); ++r) {
    EXPECT_NEAR(st.variance[r], ut::two_pass_variance(per_roi[r]), 1e-12);
    long double mean = 0;
    for (double x : per_roi[r]) mean += x;
    EXPECT_NEAR(st.mean_logit[r], static_cast<double>(mean / T), 1e-12);
    EXPECT_EQ(st.pseudo_prob[r], nnkit::sigmoid(st.mean_logit[r]));
    EXPECT_EQ(st.weight[r], uncertainty_weight(st.variance[r]));
    any_positive |= st.variance[r] > 0;
  }
  EXPECT_TRUE(any_positive);
  EXPECT_THROW(mc_teacher_predict(f.teacher, f.pass.trace.features, f.props, f.det, 1, base), ConfigError);
}

TEST(McTeacher, NoDropoutMeansZeroVarianceAndUnitWeight) {
  McFixture f;
  f.det.roi_dropout = 0.0;
  const auto st = mc_teacher_predict(f.teacher, f.pass.trace.features, f.props, f.det, 5, nnkit::RngStream(1, 2));
  for (std::size_t r = 0; r < f.props.size(); ++r) {
    EXPECT_EQ(st.variance[r], 0.0);
    EXPECT_EQ(st.weight[r], 1.0);
  }
}

TEST(UncertaintyWeight, ReciprocalWithClipBounds) {
  EXPECT_EQ(uncertainty_weight(10.0), 0.1);
  EXPECT_EQ(uncertainty_weight(0.5), 1.0);
  EXPECT_EQ(uncertainty_weight(0.0), 1.0);
  EXPECT_EQ(uncertainty_weight(1.0), 1.0);
  EXPECT_EQ(uncertainty_weight(1e7), 1e-5);
  EXPECT_THROW(uncertainty_weight(-1e-9), std::logic_error);
}

TEST(UncertaintyWeight, RandomVariancesStayInBoundsAndMonotone) {
  nnkit::RngStream rng(17, 0);
  for (int i = 0; i < 100000; ++i) {
    const double v = std::pow(10.0, rng.uniform(-4.0, 9.0));
    const double c = uncertainty_weight(v);
    ASSERT_GE(c, 1e-5);
    ASSERT_LE(c, 1.0);
    if (v >= 1.0) {
      ASSERT_LE(uncertainty_weight(v * 1.5), c);
    }
  }
}

// --- mean teacher ---------------------------------------------------------------------

AdaptConfig tiny_mt_config() {
  AdaptConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 1;
  cfg.mc_passes = 3;
  return cfg;
}

TEST(MeanTeacher, KeepRatioOneFreezesTheTeacher) {
  const auto det = ut::small_detector();
  const auto src = ut::perturbed_params(det, 12);
  auto cfg = tiny_mt_config();
  cfg.alpha = 1.0;
  const auto items = two_box_items();
  const auto h = nnkit::checkpoint_hash(src);
  int calls = 0;
  const auto r = mean_teacher_train(src, items, det, cfg, 0x4D54, [&](long, const ParamSet& s, const ParamSet& t) {
    ++calls;
    EXPECT_EQ(nnkit::checkpoint_hash(t), h);
    EXPECT_NE(nnkit::checkpoint_hash(s), h);
  });
  EXPECT_EQ(calls, 4);
  EXPECT_EQ(nnkit::checkpoint_hash(r.teacher), h);
}

TEST(MeanTeacher, KeepRatioZeroCopiesTheStudent) {
  const auto det = ut::small_detector();
  auto cfg = tiny_mt_config();
  cfg.alpha = 0.0;
  const auto items = two_box_items();
  mean_teacher_train(ut::perturbed_params(det, 13), items, det, cfg, 0x4D54,
                     [&](long, const ParamSet& s, const ParamSet& t) {
                       EXPECT_EQ(nnkit::checkpoint_hash(t), nnkit::checkpoint_hash(s));
                     });
}

TEST(MeanTeacher, TeacherReplaysTheEmaOfTheStudentTrajectory) {
  const auto det = ut::small_detector();
  const auto src = ut::perturbed_params(det, 14);
  auto cfg = tiny_mt_config();
  cfg.alpha = 0.9;
  const auto items = two_box_items();
  ParamSet replay = src;
  double worst = 0.0;
  mean_teacher_train(src, items, det, cfg, 0x4D54, [&](long, const ParamSet& s, const ParamSet& t) {
    for (std::size_t e = 0; e < replay.entries().size(); ++e) {
      auto& rv = replay.entries()[e].values;
      for (std::size_t i = 0; i < rv.size(); ++i) {
        rv[i] = 0.9 * rv[i] + 0.1 * s.entries()[e].values[i];
        worst = std::max(worst, std::abs(rv[i] - t.entries()[e].values[i]));
      }
    }
  });
  EXPECT_LE(worst, 1e-9);
}

TEST(MeanTeacher, DisablingUncertaintyForcesUnitWeights) {
  const auto det = ut::small_detector();
  auto cfg = tiny_mt_config();
  cfg.uncertainty = false;
  const auto items = two_box_items();
  const auto r = mean_teacher_train(ut::perturbed_params(det, 15), items, det, cfg);
  for (const auto& row : r.log) {
    EXPECT_EQ(row.mean_weight, 1.0);
    EXPECT_EQ(row.lower_clip_fraction, 0.0);
  }
  for (const auto& v : r.snapshots) EXPECT_EQ(v.weight, 1.0);
}

TEST(MeanTeacher, SnapshotsCoverFirstAndLastEpochAndRunsAreDeterministic) {
  const auto det = ut::small_detector();
  auto cfg = tiny_mt_config();
  cfg.epochs = 3;
  const auto items = two_box_items();
  const auto src = ut::perturbed_params(det, 16);
  const auto a = mean_teacher_train(src, items, det, cfg);
  const auto b = mean_teacher_train(src, items, det, cfg);
  EXPECT_EQ(nnkit::checkpoint_hash(a.student), nnkit::checkpoint_hash(b.student));
  EXPECT_EQ(nnkit::checkpoint_hash(a.teacher), nnkit::checkpoint_hash(b.teacher));
  ASSERT_FALSE(a.snapshots.empty());
  for (const auto& v : a.snapshots) {
    EXPECT_TRUE(v.epoch == 0 || v.epoch == 2);
    EXPECT_GE(v.weight, 1e-5);
    EXPECT_LE(v.weight, 1.0);
  }
  EXPECT_EQ(a.log.size(), 6u);
}

TEST(MeanTeacher, ZeroEpochsReturnsTheSourcePair) {
  const auto det = ut::small_detector();
  auto cfg = tiny_mt_config();
  cfg.epochs = 0;
  const auto src = ut::perturbed_params(det, 17);
  const auto items = two_box_items();
  const auto r = mean_teacher_train(src, items, det, cfg);
  EXPECT_EQ(nnkit::checkpoint_hash(r.student), nnkit::checkpoint_hash(src));
  EXPECT_EQ(nnkit::checkpoint_hash(r.teacher), nnkit::checkpoint_hash(src));
}

}  // namespace
