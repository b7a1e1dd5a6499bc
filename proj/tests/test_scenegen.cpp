// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "support.hpp"

namespace {

using namespace uamt;
using namespace uamt::scenegen;
using nnkit::RngStream;
namespace ut = uamt::testing;

TEST(SampleScene, ZeroObjectsGivesClutterOnly) {
  DomainConfig cfg;
  cfg.n_objects_min = cfg.n_objects_max = 0;
  const auto s = sample_scene(cfg, RngStream(1, 1), "x");
  EXPECT_TRUE(s.gt_boxes.empty());
  EXPECT_GE(static_cast<long>(s.points.size()), cfg.clutter_min);
  EXPECT_LE(static_cast<long>(s.points.size()), cfg.clutter_max);
}

TEST(SampleScene, BoxPointCountsFollowThePoissonMean) {
  DomainConfig cfg;
  cfg.n_objects_min = cfg.n_objects_max = 1;
  cfg.object_w_mean = 2.0;
  cfg.object_l_mean = 4.0;
  cfg.object_size_sd = 0.0;
  cfg.points_per_m2 = 4.0;
  cfg.clutter_min = cfg.clutter_max = 0;
  double sum = 0;
  const int n = 200;
  for (int i = 0; i < n; ++i) sum += static_cast<double>(sample_scene(cfg, RngStream(3, i), "x").points.size());
  // mean of n Poisson(32) draws: sd = sqrt(32 / n)
  EXPECT_NEAR(sum / n, 32.0, 3.0 * std::sqrt(32.0 / n));
}

TEST(SampleScene, DeterministicNonOverlappingAndInsideTheExtent) {
  const auto cfg = source_domain();
  const auto a = sample_scene(cfg, RngStream(5, 9), "s");
  EXPECT_EQ(a, sample_scene(cfg, RngStream(5, 9), "s"));
  for (int i = 0; i < 50; ++i) {
    const auto s = sample_scene(cfg, RngStream(5, i), "s");
    for (std::size_t b = 0; b < s.gt_boxes.size(); ++b) {
      EXPECT_TRUE(cfg.extent.contains(s.gt_boxes[b]));
      EXPECT_FALSE(overlaps_any(s.gt_boxes[b], s.gt_boxes, b));
    }
  }
}

TEST(SampleScene, CanonicalDomainsDifferInDensityAndSize) {
  const auto src = source_domain(), tgt = target_domain();
  EXPECT_EQ(src.points_per_m2, 6.0);
  EXPECT_EQ(tgt.points_per_m2, 3.0);
  EXPECT_EQ(src.object_l_mean, 4.6);
  EXPECT_EQ(tgt.object_l_mean, 4.0);
  EXPECT_EQ(tgt.n_objects_max, 6);
  DomainConfig bad;
  bad.n_objects_max = -1;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(GenerateDataset, IdsAreIndexedAndSaltsAreIndependent) {
  const auto a = generate_dataset(source_domain(), 5, 1, 1);
  ASSERT_EQ(a.size(), 5u);
  EXPECT_EQ(a[3].scene_id, "source-000003");
  EXPECT_NE(a[0].points, generate_dataset(source_domain(), 1, 1, 2)[0].points);
  EXPECT_EQ(a[4], sample_scene(source_domain(), RngStream(1, nnkit::stream_key(1, 4)), "source-000004"));
}

PointScene ring_scene(int n) {
  PointScene s;
  s.scene_id = "ring";
  const SceneExtent ext;
  const double r = extent_radius(ext) * 0.999;
  for (int i = 0; i < n; ++i) {
    // points on the diagonals sit at (almost) the extent radius and inside the extent
    const double sx = (i % 2) ? 1.0 : -1.0, sy = (i % 4 < 2) ? 1.0 : -1.0;
    s.points.push_back({sx * r / std::sqrt(2.0), sy * r / std::sqrt(2.0), 0.5});
  }
  s.gt_boxes = {{0, 0, 2, 4, 0}};
  return s;
}

TEST(Rain, ZeroRateIsIdentity) {
  const auto s = ut::two_box_scene();
  EXPECT_EQ(apply_rain(s, 0.0, {}, RngStream(1, 1)), s);
  EXPECT_THROW(apply_rain(s, -1.0, {}, RngStream(1, 1)), ConfigError);
}

TEST(Rain, DropProbabilityAtTheExtentRadius) {
  const SceneExtent ext;
  EXPECT_NEAR(rain_drop_probability(extent_radius(ext), 100.0, {}, extent_radius(ext)),
              std::min(0.9, 0.05 * std::pow(100.0, 0.6)), 1e-12);
  EXPECT_NEAR(rain_drop_probability(extent_radius(ext), 100.0, {}, extent_radius(ext)), 0.7924, 1e-4);
  RainConfig heavy;
  heavy.drop_coeff = 1.0;
  EXPECT_EQ(rain_drop_probability(extent_radius(ext), 100.0, heavy, extent_radius(ext)), 0.9);
}

TEST(Rain, SurvivorCountMatchesBernoulliOracleAndLabelsStay) {
  RainConfig cfg;
  cfg.noise_sd_per_m = 0.0;
  const int n = 10000;
  const auto s = ring_scene(n);
  const auto out = apply_rain(s, 100.0, cfg, RngStream(4, 4));
  const double r = std::hypot(s.points[0].x, s.points[0].y);
  const double p = 1.0 - rain_drop_probability(r, 100.0, cfg, extent_radius({}));
  EXPECT_NEAR(static_cast<double>(out.points.size()), n * p, 3.0 * std::sqrt(n * p * (1 - p)));
  EXPECT_EQ(out.gt_boxes, s.gt_boxes);
}

TEST(ObjectScaling, UnitRangeIsIdentity) {
  const auto s = ut::two_box_scene();
  EXPECT_EQ(random_object_scaling(s, 1.0, 1.0, RngStream(1, 1)), s);
  EXPECT_THROW(random_object_scaling(s, 0.0, 1.0, RngStream(1, 1)), ConfigError);
}

TEST(ObjectScaling, FactorTwoIsAnAffineMapAboutTheCenter) {
  PointScene s;
  s.gt_boxes = {{1.0, -2.0, 2.0, 4.0, 0}};
  s.points = {{1.5, -1.8, 1.0}, {0.2, -2.5, 1.0}, {10.0, 10.0, 1.0}};
  const auto out = random_object_scaling(s, 2.0, 2.0, RngStream(1, 1));
  EXPECT_EQ(out.gt_boxes[0], (BBox{1.0, -2.0, 4.0, 8.0, 0}));
  EXPECT_DOUBLE_EQ(out.points[0].x, 1.0 + 2 * 0.5);
  EXPECT_DOUBLE_EQ(out.points[0].y, -2.0 + 2 * 0.2);
  EXPECT_DOUBLE_EQ(out.points[1].x, 1.0 - 2 * 0.8);
  EXPECT_EQ(out.points[2].x, 10.0);
}

TEST(ObjectScaling, InteriorPointsStayInterior) {
  const auto cfg = source_domain();
  for (int i = 0; i < 30; ++i) {
    const auto s = sample_scene(cfg, RngStream(8, i), "s");
    const auto out = random_object_scaling(s, 0.9, 1.1, RngStream(9, i));
    ASSERT_EQ(out.points.size(), s.points.size());
    for (std::size_t p = 0; p < s.points.size(); ++p)
      for (std::size_t b = 0; b < s.gt_boxes.size(); ++b)
        if (s.gt_boxes[b].contains(s.points[p].x, s.points[p].y)) {
          const auto& q = out.points[p];
          const auto& nb = out.gt_boxes[b];
          EXPECT_LE(std::abs(q.x - nb.cx), 0.5 * nb.extent_x() + 1e-9);
          EXPECT_LE(std::abs(q.y - nb.cy), 0.5 * nb.extent_y() + 1e-9);
        }
  }
}

TEST(GlobalAugment, IdentityAndQuarterTurn) {
  PointScene s;
  s.gt_boxes = {{3.0, 1.0, 2.0, 4.0, 0}};
  s.points = {{3.0, 1.0, 0.5}};
  EXPECT_EQ(global_transform(s, 1.0, 0), s);
  const auto r = global_transform(s, 1.0, 1);
  EXPECT_EQ(r.gt_boxes[0], (BBox{-1.0, 3.0, 2.0, 4.0, 1}));
  EXPECT_EQ(r.points[0].x, -1.0);
  EXPECT_EQ(r.points[0].y, 3.0);
}

TEST(GlobalAugment, PairwiseIouIsInvariant) {
  RngStream rng(12, 0);
  for (int i = 0; i < 100; ++i) {
    PointScene s;
    for (int k = 0; k < 3; ++k) s.gt_boxes.push_back(ut::random_box(rng, 4.0));
    const auto out = global_augment(s, RngStream(12, i + 1));
    ASSERT_EQ(out.gt_boxes.size(), s.gt_boxes.size());
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b)
        EXPECT_NEAR(detector::iou(out.gt_boxes[a], out.gt_boxes[b]), detector::iou(s.gt_boxes[a], s.gt_boxes[b]), 1e-12);
  }
}

TEST(DatasetIo, RoundTripIsFieldExact) {
  const auto ds = generate_dataset(target_domain(), 100, 3, 7);
  const auto dir = ut::fresh_dir("scenegen-io");
  write_dataset(ds, (dir / "a.jsonl").string(), false);
  EXPECT_EQ(read_dataset((dir / "a.jsonl").string()), ds);
  write_dataset(ds, (dir / "b.jsonl").string(), true);
  for (const auto& s : read_dataset((dir / "b.jsonl").string())) EXPECT_TRUE(s.gt_boxes.empty());
}

TEST(DatasetIo, TruncatedFileNamesTheBadLine) {
  const auto ds = generate_dataset(source_domain(), 3, 1, 1);
  auto text = dataset_to_string(ds, false);
  text.resize(text.size() - 40);
  const auto dir = ut::fresh_dir("scenegen-trunc");
  const auto path = (dir / "t.jsonl").string();
  nnkit::write_file_bytes(path, text);
  try {
    read_dataset(path);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(path + ":3:"), std::string::npos) << e.what();
  }
}

}  // namespace
