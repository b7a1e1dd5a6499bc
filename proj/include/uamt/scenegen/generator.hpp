// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>

#include "uamt/errors.hpp"
#include "uamt/nnkit/rng.hpp"
#include "uamt/scenegen/scene.hpp"

namespace uamt::scenegen {

using nnkit::RngStream;

/// Parameters of one synthetic domain. The shift axes are object size and
/// surface point density.
struct DomainConfig {
  std::string domain_tag = "source";
  long n_objects_min = 3;
  long n_objects_max = 8;
  double object_w_mean = 2.0;
  double object_l_mean = 4.6;
  double object_size_sd = 0.1;
  double points_per_m2 = 6.0;
  long clutter_min = 150;
  long clutter_max = 300;
  SceneExtent extent;
  /// Placement attempts per object before giving up.
  int max_attempts = 1000;

  void validate() const {
    if (n_objects_min < 0 || n_objects_max < n_objects_min) throw ConfigError("n_objects range is invalid");
    if (clutter_min < 0 || clutter_max < clutter_min) throw ConfigError("clutter_points range is invalid");
    if (!(object_w_mean > 0.0 && object_l_mean > 0.0)) throw ConfigError("object size means must be positive");
    if (!(object_size_sd >= 0.0)) throw ConfigError("object_size_sd must be non-negative");
    if (!(points_per_m2 > 0.0)) throw ConfigError("points_per_m2 must be positive");
    if (!(extent.size_x > 0.0 && extent.size_y > 0.0)) throw ConfigError("scene extent must be positive");
  }
};

/// Canonical source domain: larger, denser objects.
inline DomainConfig source_domain() { return {}; }

/// Canonical target domain: smaller, sparser objects, fewer of them.
inline DomainConfig target_domain() {
  DomainConfig d;
  d.domain_tag = "target";
  d.n_objects_min = 1;
  d.n_objects_max = 6;
  d.object_w_mean = 1.8;
  d.object_l_mean = 4.0;
  d.points_per_m2 = 3.0;
  return d;
}

struct SampleStats {
  /// Objects that could not be placed without overlap.
  long placement_failures = 0;
};

inline bool overlaps_any(const BBox& b, const std::vector<BBox>& boxes, std::size_t skip = SIZE_MAX) {
  for (std::size_t i = 0; i < boxes.size(); ++i)
    if (i != skip && detector::intersection_area(b, boxes[i]) > 0.0) return true;
  return false;
}

inline void fill_box(const BBox& box, double density, RngStream& rng, std::vector<Point>& points) {
  const long count = rng.poisson(density * box.area());
  for (long k = 0; k < count; ++k) {
    const double x = rng.uniform(box.min_x(), box.max_x());
    const double y = rng.uniform(box.min_y(), box.max_y());
    points.push_back({x, y, rng.uniform(0.4, 1.0)});
  }
}

/// Draws one labeled scene. Deterministic in (cfg, stream).
inline PointScene sample_scene(const DomainConfig& cfg, RngStream stream, std::string scene_id,
                               SampleStats* stats = nullptr) {
  cfg.validate();
  PointScene scene;
  scene.scene_id = std::move(scene_id);
  scene.domain_tag = cfg.domain_tag;
  const auto& ext = cfg.extent;
  const long n = stream.uniform_int(cfg.n_objects_min, cfg.n_objects_max);
  for (long k = 0; k < n; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      BBox b;
      b.w = std::max(0.2, stream.normal(cfg.object_w_mean, cfg.object_size_sd));
      b.l = std::max(0.2, stream.normal(cfg.object_l_mean, cfg.object_size_sd));
      if (b.w > b.l) std::swap(b.w, b.l);
      b.orient = static_cast<int>(stream.uniform_int(0, 1));
      const double hx = 0.5 * b.extent_x(), hy = 0.5 * b.extent_y();
      if (2.0 * hx > ext.size_x || 2.0 * hy > ext.size_y) continue;
      b.cx = stream.uniform(ext.min_x() + hx, ext.max_x() - hx);
      b.cy = stream.uniform(ext.min_y() + hy, ext.max_y() - hy);
      if (overlaps_any(b, scene.gt_boxes)) continue;
      scene.gt_boxes.push_back(b);
      placed = true;
    }
    if (!placed && stats != nullptr) ++stats->placement_failures;
  }
  for (const auto& b : scene.gt_boxes) fill_box(b, cfg.points_per_m2, stream, scene.points);
  const long clutter = stream.uniform_int(cfg.clutter_min, cfg.clutter_max);
  for (long k = 0; k < clutter; ++k) {
    const double x = stream.uniform(ext.min_x(), ext.max_x());
    const double y = stream.uniform(ext.min_y(), ext.max_y());
    scene.points.push_back({x, y, stream.uniform(0.0, 0.6)});
  }
  return scene;
}

inline std::string make_scene_id(const std::string& tag, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return tag + "-" + buf;
}

/// `count` scenes; scene i uses stream (seed, key(salt, i)) so datasets with
/// different salts are independent while each scene is individually replayable.
inline Dataset generate_dataset(const DomainConfig& cfg, std::size_t count, std::uint64_t seed, std::uint64_t salt,
                                SampleStats* stats = nullptr) {
  Dataset out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(sample_scene(cfg, RngStream(seed, nnkit::stream_key(salt, i)), make_scene_id(cfg.domain_tag, i), stats));
  return out;
}

}  // namespace uamt::scenegen
