// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "uamt/errors.hpp"

namespace uamt::nnkit {

/// Channel-major feature map: value(c, y, x) = values[(c * height + y) * width + x].
struct Grid {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), values(c * h * w, fill) {
    if (c == 0 || h == 0 || w == 0) throw ConfigError("grid dimensions must be positive");
  }

  std::size_t plane() const noexcept { return height * width; }

  double& at(std::size_t c, std::size_t y, std::size_t x) noexcept { return values[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return values[(c * height + y) * width + x];
  }

  std::span<double> channel(std::size_t c) noexcept { return {values.data() + c * plane(), plane()}; }
  std::span<const double> channel(std::size_t c) const noexcept { return {values.data() + c * plane(), plane()}; }

  bool same_shape(const Grid& o) const noexcept {
    return channels == o.channels && height == o.height && width == o.width;
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

}  // namespace uamt::nnkit
