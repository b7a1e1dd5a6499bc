// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>

#include "uamt/errors.hpp"
#include "uamt/nnkit/rng.hpp"
#include "uamt/scenegen/generator.hpp"
#include "uamt/scenegen/scene.hpp"

namespace uamt::scenegen {

// --- rain --------------------------------------------------------------------

/// Toy lidar-in-rain corruption: range-dependent return loss plus radial noise.
struct RainConfig {
  double rate_min = 0.0;  // mm/hr
  double rate_max = 100.0;
  double drop_coeff = 0.05;
  double noise_sd_per_m = 0.002;

  void validate() const {
    if (!(rate_min >= 0.0 && rate_max >= rate_min)) throw ConfigError("rain rate range must satisfy 0 <= low <= high");
    if (!(drop_coeff >= 0.0 && noise_sd_per_m >= 0.0)) throw ConfigError("rain coefficients must be non-negative");
  }
};

/// Distance from the sensor to the far corner of the extent.
inline double extent_radius(const SceneExtent& ext) noexcept { return 0.5 * std::hypot(ext.size_x, ext.size_y); }

inline double rain_drop_probability(double range, double rate, const RainConfig& cfg, double radius) noexcept {
  if (rate <= 0.0) return 0.0;
  return std::min(0.9, cfg.drop_coeff * std::pow(rate, 0.6) * range / radius);
}

/// Drops and jitters points; boxes are untouched. Points pushed outside the
/// extent by the noise are dropped.
inline PointScene apply_rain(const PointScene& scene, double rate, const RainConfig& cfg, RngStream stream,
                             const SceneExtent& ext = {}) {
  if (!(rate >= 0.0)) throw ConfigError("rain rate must be non-negative");
  if (rate == 0.0) return scene;
  PointScene out = scene;
  out.points.clear();
  const double radius = extent_radius(ext);
  for (const auto& p : scene.points) {
    const double r = std::hypot(p.x, p.y);
    if (stream.uniform() < rain_drop_probability(r, rate, cfg, radius)) continue;
    const double sd = cfg.noise_sd_per_m * r * (rate / 100.0);
    Point q = p;
    if (r > 0.0 && sd > 0.0) {
      const double shift = stream.normal(0.0, sd);
      q.x += shift * p.x / r;
      q.y += shift * p.y / r;
    }
    if (ext.contains(q.x, q.y)) out.points.push_back(q);
  }
  return out;
}

/// Rain at a per-scene rate drawn uniformly from the configured range.
inline PointScene apply_random_rain(const PointScene& scene, const RainConfig& cfg, RngStream stream,
                                    const SceneExtent& ext = {}) {
  cfg.validate();
  const double rate = stream.uniform(cfg.rate_min, cfg.rate_max);
  return apply_rain(scene, rate, cfg, stream.split(1), ext);
}

// --- source-training augmentation --------------------------------------------

/// Scales each object and the points inside it about the box center by a
/// factor drawn from [lo, hi]. A scaled box that would overlap another box or
/// leave the extent is redrawn once and otherwise left unscaled.
inline PointScene random_object_scaling(const PointScene& scene, double lo, double hi, RngStream stream,
                                        const SceneExtent& ext = {}) {
  if (!(lo > 0.0 && hi >= lo)) throw ConfigError("object scale range must satisfy 0 < lo <= hi");
  PointScene out = scene;
  std::vector<int> owner(out.points.size(), -1);
  for (std::size_t i = 0; i < out.points.size(); ++i) {
    for (std::size_t b = 0; b < scene.gt_boxes.size(); ++b) {
      if (scene.gt_boxes[b].contains(out.points[i].x, out.points[i].y)) {
        owner[i] = static_cast<int>(b);
        break;
      }
    }
  }
  for (std::size_t b = 0; b < out.gt_boxes.size(); ++b) {
    const BBox orig = out.gt_boxes[b];
    double factor = 1.0;
    for (int attempt = 0; attempt < 2; ++attempt) {
      const double s = stream.uniform(lo, hi);
      BBox cand = orig;
      cand.w *= s;
      cand.l *= s;
      if (ext.contains(cand) && !overlaps_any(cand, out.gt_boxes, b)) {
        factor = s;
        out.gt_boxes[b] = cand;
        break;
      }
    }
    if (factor == 1.0) continue;
    for (std::size_t i = 0; i < out.points.size(); ++i) {
      if (owner[i] != static_cast<int>(b)) continue;
      auto& p = out.points[i];
      p.x = orig.cx + factor * (p.x - orig.cx);
      p.y = orig.cy + factor * (p.y - orig.cy);
    }
  }
  return out;
}

/// Similarity transform about the origin: scale then rotate by quarter_turns * 90 degrees.
inline PointScene global_transform(const PointScene& scene, double scale, int quarter_turns,
                                   const SceneExtent& ext = {}) {
  PointScene out = scene;
  auto rot = [&](double& x, double& y) {
    for (int k = 0; k < ((quarter_turns % 4) + 4) % 4; ++k) {
      const double nx = -y, ny = x;
      x = nx;
      y = ny;
    }
  };
  out.points.clear();
  for (auto p : scene.points) {
    p.x *= scale;
    p.y *= scale;
    rot(p.x, p.y);
    if (ext.contains(p.x, p.y)) out.points.push_back(p);
  }
  out.gt_boxes.clear();
  for (auto b : scene.gt_boxes) {
    b.cx *= scale;
    b.cy *= scale;
    b.w *= scale;
    b.l *= scale;
    rot(b.cx, b.cy);
    if (quarter_turns % 2 != 0) b.orient = 1 - b.orient;
    if (ext.contains(b.cx, b.cy)) out.gt_boxes.push_back(b);
  }
  return out;
}

/// Global scaling in [0.95, 1.05] and a random multiple of 90 degree rotation.
inline PointScene global_augment(const PointScene& scene, RngStream stream, const SceneExtent& ext = {}) {
  const double scale = stream.uniform(0.95, 1.05);
  const int turns = static_cast<int>(stream.uniform_int(0, 3));
  return global_transform(scene, scale, turns, ext);
}

}  // namespace uamt::scenegen
