// SPDX-License-Identifier: Apache-2.0
// Independent oracles and fixtures shared by the unit tests and the
// acceptance runner. Oracles avoid calling the code they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uamt/uamt.hpp"

namespace uamt::testing {

using detector::BBox;
using detector::Detection;
using nnkit::ParamSet;
using nnkit::RngStream;

// --- geometry -------------------------------------------------------------------

inline BBox random_box(RngStream& rng, double span = 6.0) {
  BBox b;
  b.cx = rng.uniform(-span, span);
  b.cy = rng.uniform(-span, span);
  b.w = rng.uniform(0.5, 4.0);
  b.l = rng.uniform(0.5, 6.0);
  b.orient = static_cast<int>(rng.uniform_int(0, 1));
  return b;
}

/// Pair that overlaps often: b is a jittered copy of a half the time.
inline std::pair<BBox, BBox> random_pair(RngStream& rng) {
  const BBox a = random_box(rng, 3.0);
  BBox b = rng.uniform() < 0.5 ? random_box(rng, 3.0) : a;
  if (b == a) {
    b.cx += rng.normal(0.0, 0.8);
    b.cy += rng.normal(0.0, 0.8);
    b.w *= rng.uniform(0.7, 1.4);
    b.l *= rng.uniform(0.7, 1.4);
  }
  return {a, b};
}

/// IoU estimated by uniform sampling of the pair's bounding rectangle.
inline double iou_monte_carlo(const BBox& a, const BBox& b, RngStream& rng, int samples) {
  const double x0 = std::min(a.cx - 0.5 * a.extent_x(), b.cx - 0.5 * b.extent_x());
  const double x1 = std::max(a.cx + 0.5 * a.extent_x(), b.cx + 0.5 * b.extent_x());
  const double y0 = std::min(a.cy - 0.5 * a.extent_y(), b.cy - 0.5 * b.extent_y());
  const double y1 = std::max(a.cy + 0.5 * a.extent_y(), b.cy + 0.5 * b.extent_y());
  auto inside = [](const BBox& q, double x, double y) {
    return std::abs(x - q.cx) <= 0.5 * q.extent_x() && std::abs(y - q.cy) <= 0.5 * q.extent_y();
  };
  long both = 0, either = 0;
  for (int i = 0; i < samples; ++i) {
    const double x = rng.uniform(x0, x1), y = rng.uniform(y0, y1);
    const bool ia = inside(a, x, y), ib = inside(b, x, y);
    both += ia && ib;
    either += ia || ib;
  }
  return either == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(either);
}

/// Greedy NMS characterized as the unique subset S with: detection i is in S
/// iff no detection of S ranked above i overlaps it beyond the threshold.
/// Every subset is enumerated; returns S in rank order (empty vector and
/// `unique = false` when no or several subsets qualify).
inline std::vector<Detection> nms_brute_force(const std::vector<Detection>& dets, double thresh, bool& unique) {
  const std::size_t n = dets.size();
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) rank[i] = i;
  std::sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
    const auto &x = dets[a], &y = dets[b];
    if (x.confidence != y.confidence) return x.confidence > y.confidence;
    if (x.box.cx != y.box.cx) return x.box.cx < y.box.cx;
    return x.box.cy < y.box.cy;
  });
  auto overlap = [&](std::size_t i, std::size_t j) {
    const auto &a = dets[i].box, &b = dets[j].box;
    const double ix = std::min(a.max_x(), b.max_x()) - std::max(a.min_x(), b.min_x());
    const double iy = std::min(a.max_y(), b.max_y()) - std::max(a.min_y(), b.min_y());
    if (ix <= 0 || iy <= 0) return 0.0;
    return ix * iy / (a.area() + b.area() - ix * iy);
  };
  int found = 0;
  std::vector<Detection> out;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    bool ok = true;
    for (std::size_t r = 0; r < n && ok; ++r) {
      const std::size_t i = rank[r];
      bool blocked = false;
      for (std::size_t q = 0; q < r; ++q)
        if ((mask >> rank[q] & 1u) && overlap(rank[q], i) > thresh) blocked = true;
      ok = ((mask >> i & 1u) != 0) == !blocked;
    }
    if (!ok) continue;
    ++found;
    out.clear();
    for (std::size_t r = 0; r < n; ++r)
      if (mask >> rank[r] & 1u) out.push_back(dets[rank[r]]);
  }
  unique = found == 1;
  return out;
}

// --- average precision -----------------------------------------------------------

/// Interpolated AP by exhaustive enumeration of every PR prefix in exact
/// integer arithmetic: for recall level i/L the best precision over all
/// prefixes k with tp_k * L >= i * G.
inline double ap_enumeration(std::vector<evalkit::ScoredMatch> m, std::size_t gt, int points) {
  std::stable_sort(m.begin(), m.end(), [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
  const bool eleven = points == 11;
  const long levels = eleven ? 10 : points;
  double sum = 0.0;
  for (long i = eleven ? 0 : 1; i <= levels; ++i) {
    double best = 0.0;
    long tp = 0;
    for (std::size_t k = 0; k < m.size(); ++k) {
      tp += m[k].true_positive ? 1 : 0;
      if (tp * levels >= i * static_cast<long>(gt)) best = std::max(best, static_cast<double>(tp) / (k + 1.0));
    }
    sum += best;
  }
  return sum / points;
}

// --- statistics -------------------------------------------------------------------

/// Two-pass sample variance with the T - 1 denominator.
inline double two_pass_variance(const std::vector<double>& xs) {
  long double mean = 0;
  for (double x : xs) mean += x;
  mean /= xs.size();
  long double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return static_cast<double>(ss / (xs.size() - 1));
}

// --- detector fixtures ---------------------------------------------------------------

/// Full architecture on a smaller raster, so finite differences stay cheap.
inline detector::DetectorConfig small_detector() {
  detector::DetectorConfig det;
  det.grid.extent_x = det.grid.extent_y = 12.0;
  det.grid.cells_x = det.grid.cells_y = 24;
  det.backbone_channels = {4, 4, 6};
  det.roi_hidden = 8;
  det.top_k = 12;
  return det;
}

/// Two well-separated boxes densely filled with points plus light clutter.
inline scenegen::PointScene two_box_scene(std::uint64_t seed = 3) {
  scenegen::PointScene s;
  s.scene_id = "two-box";
  s.domain_tag = "source";
  s.gt_boxes = {{-2.5, -2.0, 2.0, 4.4, 0}, {2.5, 2.2, 1.9, 4.6, 1}};
  RngStream rng(seed, 1);
  for (const auto& b : s.gt_boxes)
    for (int k = 0; k < 60; ++k)
      s.points.push_back({rng.uniform(b.min_x(), b.max_x()), rng.uniform(b.min_y(), b.max_y()), 0.8});
  for (int k = 0; k < 40; ++k) s.points.push_back({rng.uniform(-6.0, 6.0), rng.uniform(-6.0, 6.0), 0.3});
  return s;
}

/// Parameters with non-trivial heads: ROI proposals exist and both classes
/// of ROI targets occur.
inline ParamSet perturbed_params(const detector::DetectorConfig& det, std::uint64_t seed) {
  auto p = detector::init_detector_params(det, seed);
  RngStream rng(seed, 99);
  for (auto& e : p.entries())
    for (auto& v : e.values) v += rng.normal(0.0, 0.05);
  return p;
}

/// Mean-teacher loss closure over the student; teacher fixed.
struct DetectorLoss {
  detector::DetectorConfig det;
  std::vector<adapt::TrainItem> batch;
  adapt::StepOptions opt;
  const ParamSet* teacher = nullptr;
  int passes = 4;

  double operator()(const ParamSet& params, ParamSet* grad) const {
    adapt::TeacherContext tctx{teacher, passes, true, true, false};
    auto r = adapt::compute_batch(params, batch, det, opt, teacher != nullptr ? &tctx : nullptr);
    if (grad != nullptr) *grad = std::move(r.grads);
    return r.total;
  }
};

// --- temp dirs ------------------------------------------------------------------------

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("uamt-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace uamt::testing
