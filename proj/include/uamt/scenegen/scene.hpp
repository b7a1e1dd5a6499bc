// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "uamt/detector/box.hpp"

namespace uamt::scenegen {

using detector::BBox;

struct Point {
  double x = 0.0;
  double y = 0.0;
  double intensity = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// One BEV sweep. gt_boxes is empty when labels are withheld.
struct PointScene {
  std::string scene_id;
  std::vector<Point> points;
  std::vector<BBox> gt_boxes;
  std::string domain_tag;

  friend bool operator==(const PointScene&, const PointScene&) = default;
};

using Dataset = std::vector<PointScene>;

/// Square scene footprint centered on the sensor at the origin.
struct SceneExtent {
  double size_x = 32.0;
  double size_y = 32.0;

  double min_x() const noexcept { return -0.5 * size_x; }
  double max_x() const noexcept { return 0.5 * size_x; }
  double min_y() const noexcept { return -0.5 * size_y; }
  double max_y() const noexcept { return 0.5 * size_y; }

  bool contains(double x, double y) const noexcept {
    return x >= min_x() && x < max_x() && y >= min_y() && y < max_y();
  }
  bool contains(const BBox& b) const noexcept {
    return b.min_x() >= min_x() && b.max_x() <= max_x() && b.min_y() >= min_y() && b.max_y() <= max_y();
  }
};

}  // namespace uamt::scenegen
