// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uamt/detector/box.hpp"
#include "uamt/errors.hpp"
#include "uamt/nnkit/grid.hpp"
#include "uamt/nnkit/layers.hpp"
#include "uamt/nnkit/param_set.hpp"
#include "uamt/nnkit/rng.hpp"
#include "uamt/scenegen/scene.hpp"

namespace uamt::detector {

using nnkit::Grid;
using nnkit::ParamSet;
using nnkit::RngStream;

/// BEV raster geometry. The grid is centered on the origin and each cell
/// carries one anchor of size anchor_w x anchor_l at its center.
struct GridSpec {
  double extent_x = 32.0;
  double extent_y = 32.0;
  std::size_t cells_x = 64;
  std::size_t cells_y = 64;
  double anchor_w = 2.0;
  double anchor_l = 4.0;

  double cell_x() const noexcept { return extent_x / static_cast<double>(cells_x); }
  double cell_y() const noexcept { return extent_y / static_cast<double>(cells_y); }
  double min_x() const noexcept { return -0.5 * extent_x; }
  double min_y() const noexcept { return -0.5 * extent_y; }
  std::size_t cell_count() const noexcept { return cells_x * cells_y; }

  double center_x(std::size_t ix) const noexcept { return min_x() + (static_cast<double>(ix) + 0.5) * cell_x(); }
  double center_y(std::size_t iy) const noexcept { return min_y() + (static_cast<double>(iy) + 0.5) * cell_y(); }

  /// Cell containing (x, y); false when outside the extent.
  bool locate(double x, double y, std::size_t& ix, std::size_t& iy) const noexcept {
    const double fx = std::floor((x - min_x()) / cell_x());
    const double fy = std::floor((y - min_y()) / cell_y());
    if (!(fx >= 0.0 && fy >= 0.0 && fx < static_cast<double>(cells_x) && fy < static_cast<double>(cells_y)))
      return false;
    ix = static_cast<std::size_t>(fx);
    iy = static_cast<std::size_t>(fy);
    return true;
  }

  void validate() const {
    if (!(extent_x > 0.0 && extent_y > 0.0)) throw ConfigError("grid extents must be positive");
    if (cells_x == 0 || cells_y == 0) throw ConfigError("grid cell counts must be positive");
    if (!(anchor_w > 0.0 && anchor_l > 0.0)) throw ConfigError("anchor size must be positive");
  }
};

struct DetectorConfig {
  GridSpec grid;
  /// Backbone: 3x3 conv + relu per entry; the last channel count is the feature width.
  std::vector<std::size_t> backbone_channels{8, 8, 16};
  std::vector<int> backbone_dilations{1, 2, 4};
  std::size_t roi_hidden = 32;
  double roi_dropout = 0.5;
  double nms_iou = 0.3;
  std::size_t top_k = 50;
  /// ROI classification target is 1 when IoU with a (pseudo) box reaches this.
  double roi_positive_iou = 0.5;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double smooth_l1_beta = 1.0;
  double ignore_dilation = 1.5;
  /// ROI pooling samples the 3x3 grid spanning the proposal box (corners,
  /// edge midpoints, center) instead of the 3x3 cells around its center.
  bool roi_box_aligned = false;

  std::size_t feature_channels() const { return backbone_channels.empty() ? 0 : backbone_channels.back(); }

  void validate() const {
    grid.validate();
    if (backbone_channels.empty() || backbone_channels.size() != backbone_dilations.size())
      throw ConfigError("backbone channel and dilation lists must be non-empty and equally long");
    for (auto c : backbone_channels)
      if (c == 0) throw ConfigError("backbone channel counts must be positive");
    for (int d : backbone_dilations)
      if (d < 1) throw ConfigError("backbone dilations must be >= 1");
    if (!(roi_dropout >= 0.0 && roi_dropout < 1.0)) throw ConfigError("roi dropout must lie in [0, 1)");
    if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ConfigError("nms iou must lie in (0, 1]");
    if (top_k == 0 || roi_hidden == 0) throw ConfigError("top_k and roi_hidden must be positive");
  }
};

inline std::string backbone_name(std::size_t layer, const char* what) {
  return "backbone.conv" + std::to_string(layer + 1) + "." + what;
}

inline constexpr std::size_t kRoiPatch = 3;

// --- rasterization -----------------------------------------------------------

/// Single-channel occupancy raster, cell value = log(1 + points in cell).
inline Grid rasterize_bev(const scenegen::PointScene& scene, const GridSpec& spec) {
  spec.validate();
  Grid g(1, spec.cells_y, spec.cells_x);
  for (const auto& p : scene.points) {
    std::size_t ix = 0, iy = 0;
    if (spec.locate(p.x, p.y, ix, iy)) g.at(0, iy, ix) += 1.0;
  }
  for (auto& v : g.values) v = std::log1p(v);
  return g;
}

// --- parameters --------------------------------------------------------------

/// He-normal weights, zero biases; the objectness bias starts at a 1% prior.
inline ParamSet init_detector_params(const DetectorConfig& cfg, std::uint64_t seed) {
  ParamSet p;
  RngStream rng(seed, nnkit::stream_key(0x1417, 0));
  auto he = [&](nnkit::ParamEntry& e, double fan_in) {
    const double sd = std::sqrt(2.0 / fan_in);
    for (auto& v : e.values) v = rng.normal(0.0, sd);
  };
  auto small = [&](nnkit::ParamEntry& e, double sd) {
    for (auto& v : e.values) v = rng.normal(0.0, sd);
  };
  cfg.validate();
  std::size_t in = 1;
  for (std::size_t i = 0; i < cfg.backbone_channels.size(); ++i) {
    const auto out = cfg.backbone_channels[i];
    he(p.add(backbone_name(i, "weight"), {out, in, 3, 3}), 9.0 * static_cast<double>(in));
    p.add(backbone_name(i, "bias"), {out});
    in = out;
  }
  const auto c2 = cfg.feature_channels(), hid = cfg.roi_hidden;
  small(p.add("rpn.cls.weight", {1, c2, 1, 1}), 0.01);
  p.add("rpn.cls.bias", {1}, -std::log(99.0));
  small(p.add("rpn.reg.weight", {4, c2, 1, 1}), 0.01);
  p.add("rpn.reg.bias", {4});
  small(p.add("rpn.dir.weight", {1, c2, 1, 1}), 0.01);
  p.add("rpn.dir.bias", {1});
  const auto patch = c2 * kRoiPatch * kRoiPatch;
  he(p.add("roi.fc1.weight", {hid, patch}), static_cast<double>(patch));
  p.add("roi.fc1.bias", {hid});
  small(p.add("roi.fc2.weight", {1, hid}), std::sqrt(1.0 / static_cast<double>(hid)));
  p.add("roi.fc2.bias", {1});
  return p;
}

// --- backbone + RPN ----------------------------------------------------------

struct BackboneTrace {
  Grid input;
  std::vector<Grid> hidden;  // post-relu outputs of all layers but the last
  std::vector<int> dilations;
  Grid features;
};

/// Layer count is read from the parameter set (backbone.conv1, conv2, ...).
inline BackboneTrace backbone_forward(const Grid& raster, const ParamSet& params,
                                      std::span<const int> dilations) {
  BackboneTrace t;
  t.input = raster;
  t.dilations.assign(dilations.begin(), dilations.end());
  const Grid* cur = &raster;
  for (std::size_t i = 0; i < dilations.size(); ++i) {
    const int d = dilations[i];
    Grid out = nnkit::conv2d(*cur, params.at(backbone_name(i, "weight")), params.at(backbone_name(i, "bias")), d, d);
    nnkit::relu_inplace(out.values);
    if (i + 1 == dilations.size()) {
      t.features = std::move(out);
    } else {
      t.hidden.push_back(std::move(out));
      cur = &t.hidden.back();
    }
  }
  return t;
}

inline BackboneTrace backbone_forward(const Grid& raster, const ParamSet& params, const DetectorConfig& cfg) {
  return backbone_forward(raster, params, cfg.backbone_dilations);
}

/// grad_features is consumed (relu mask applied in place).
inline void backbone_backward(const BackboneTrace& t, const ParamSet& params, Grid grad_features, ParamSet& grads) {
  Grid grad = std::move(grad_features);
  for (std::size_t i = t.dilations.size(); i-- > 0;) {
    const Grid& out = i + 1 == t.dilations.size() ? t.features : t.hidden[i];
    const Grid& in = i == 0 ? t.input : t.hidden[i - 1];
    nnkit::relu_backward_inplace(out.values, grad.values);
    const int d = t.dilations[i];
    Grid grad_in;
    if (i > 0) grad_in = Grid(in.channels, in.height, in.width);
    nnkit::conv2d_backward(in, params.at(backbone_name(i, "weight")), d, grad, i > 0 ? &grad_in : nullptr,
                           grads.at(backbone_name(i, "weight")).span(), grads.at(backbone_name(i, "bias")).span(), d);
    grad = std::move(grad_in);
  }
}

/// Per-cell RPN outputs, row-major over (y, x). reg is component-major:
/// reg[k * cells + cell] for k in (dx, dy, dlogw, dlogl).
struct RpnOutput {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> cls_logit;
  std::vector<double> dir_logit;
  std::vector<double> reg;

  std::size_t cells() const noexcept { return height * width; }
  double reg_at(std::size_t k, std::size_t cell) const noexcept { return reg[k * cells() + cell]; }
};

inline RpnOutput rpn_heads(const Grid& features, const ParamSet& params) {
  const auto cls = nnkit::conv2d(features, params.at("rpn.cls.weight"), params.at("rpn.cls.bias"), 0);
  const auto reg = nnkit::conv2d(features, params.at("rpn.reg.weight"), params.at("rpn.reg.bias"), 0);
  const auto dir = nnkit::conv2d(features, params.at("rpn.dir.weight"), params.at("rpn.dir.bias"), 0);
  return {features.height, features.width, cls.values, dir.values, reg.values};
}

struct RpnPass {
  BackboneTrace trace;
  RpnOutput out;
};

inline RpnPass run_rpn(const Grid& raster, const ParamSet& params, const DetectorConfig& cfg) {
  RpnPass pass{backbone_forward(raster, params, cfg), {}};
  pass.out = rpn_heads(pass.trace.features, params);
  return pass;
}

/// Backbone plus RPN heads on a raster. Deterministic; no dropout.
inline RpnOutput rpn_forward(const Grid& raster, const ParamSet& params, const DetectorConfig& cfg) {
  return run_rpn(raster, params, cfg).out;
}

/// Gradients of a loss with respect to the RPN outputs, same layout as RpnOutput.
struct RpnGrad {
  std::vector<double> cls;
  std::vector<double> dir;
  std::vector<double> reg;

  explicit RpnGrad(std::size_t cells) : cls(cells, 0.0), dir(cells, 0.0), reg(4 * cells, 0.0) {}
};

/// Accumulates head gradients into grads and returns d(loss)/d(features).
inline Grid rpn_heads_backward(const Grid& features, const ParamSet& params, const RpnGrad& g, ParamSet& grads) {
  Grid grad_features(features.channels, features.height, features.width);
  auto head = [&](const char* name, std::size_t outs, const std::vector<double>& gv) {
    Grid go(outs, features.height, features.width);
    go.values = gv;
    const std::string w = std::string("rpn.") + name + ".weight", b = std::string("rpn.") + name + ".bias";
    nnkit::conv2d_backward(features, params.at(w), 0, go, &grad_features, grads.at(w).span(), grads.at(b).span());
  };
  head("cls", 1, g.cls);
  head("reg", 4, g.reg);
  head("dir", 1, g.dir);
  return grad_features;
}

// --- decoding and targets ----------------------------------------------------

/// Anchor decoding; confidence starts at sigmoid(cls_logit). Cells with a
/// non-finite box are dropped and counted in *discarded.
inline std::vector<Detection> decode_boxes(const RpnOutput& rpn, const GridSpec& spec, std::size_t* discarded = nullptr) {
  std::vector<Detection> dets;
  dets.reserve(rpn.cells());
  std::size_t bad = 0;
  for (std::size_t iy = 0; iy < rpn.height; ++iy) {
    for (std::size_t ix = 0; ix < rpn.width; ++ix) {
      const std::size_t c = iy * rpn.width + ix;
      Detection d;
      d.box.cx = spec.center_x(ix) + rpn.reg_at(0, c) * spec.cell_x();
      d.box.cy = spec.center_y(iy) + rpn.reg_at(1, c) * spec.cell_y();
      d.box.w = spec.anchor_w * std::exp(rpn.reg_at(2, c));
      d.box.l = spec.anchor_l * std::exp(rpn.reg_at(3, c));
      d.box.orient = rpn.dir_logit[c] > 0.0 ? 1 : 0;
      d.roi_logit = rpn.cls_logit[c];
      d.confidence = nnkit::sigmoid(rpn.cls_logit[c]);
      const bool finite = std::isfinite(d.box.cx) && std::isfinite(d.box.cy) && std::isfinite(d.box.w) &&
                          std::isfinite(d.box.l) && std::isfinite(d.confidence) && d.box.w > 0.0 && d.box.l > 0.0;
      if (!finite) {
        ++bad;
        continue;
      }
      dets.push_back(d);
    }
  }
  if (discarded != nullptr) *discarded += bad;
  return dets;
}

/// Per-anchor training targets, indexed like RpnOutput cells.
struct AnchorTargets {
  std::vector<double> cls;            // 1 positive, 0 otherwise
  std::vector<std::uint8_t> valid;    // 0 for ignored anchors
  std::vector<std::uint8_t> positive;
  std::vector<double> reg;            // component-major, like RpnOutput::reg
  std::vector<double> dir;
  std::vector<int> assigned_box;      // -1 when not positive
  std::size_t positives = 0;
};

inline AnchorTargets assign_targets(const GridSpec& spec, std::span<const BBox> gts, double dilation = 1.5) {
  const std::size_t n = spec.cell_count();
  AnchorTargets t{std::vector<double>(n, 0.0),   std::vector<std::uint8_t>(n, 1), std::vector<std::uint8_t>(n, 0),
                  std::vector<double>(4 * n, 0.0), std::vector<double>(n, 0.0),  std::vector<int>(n, -1), 0};
  for (std::size_t iy = 0; iy < spec.cells_y; ++iy) {
    for (std::size_t ix = 0; ix < spec.cells_x; ++ix) {
      const std::size_t c = iy * spec.cells_x + ix;
      const double px = spec.center_x(ix), py = spec.center_y(iy);
      int best = -1;
      double best_d2 = 0.0;
      bool near_any = false;
      for (std::size_t b = 0; b < gts.size(); ++b) {
        const auto& g = gts[b];
        if (g.contains(px, py)) {
          const double d2 = (px - g.cx) * (px - g.cx) + (py - g.cy) * (py - g.cy);
          if (best < 0 || d2 < best_d2) {
            best = static_cast<int>(b);
            best_d2 = d2;
          }
        } else if (std::abs(px - g.cx) <= 0.5 * dilation * g.extent_x() &&
                   std::abs(py - g.cy) <= 0.5 * dilation * g.extent_y()) {
          near_any = true;
        }
      }
      if (best >= 0) {
        const auto& g = gts[static_cast<std::size_t>(best)];
        t.cls[c] = 1.0;
        t.positive[c] = 1;
        t.assigned_box[c] = best;
        t.reg[0 * n + c] = (g.cx - px) / spec.cell_x();
        t.reg[1 * n + c] = (g.cy - py) / spec.cell_y();
        t.reg[2 * n + c] = std::log(g.w / spec.anchor_w);
        t.reg[3 * n + c] = std::log(g.l / spec.anchor_l);
        t.dir[c] = static_cast<double>(g.orient);
        ++t.positives;
      } else if (near_any) {
        t.valid[c] = 0;
      }
    }
  }
  return t;
}

// --- ROI head ----------------------------------------------------------------

inline constexpr std::size_t kRoiSamples = kRoiPatch * kRoiPatch;

/// Forward record for one proposal; kept for the backward pass.
struct RoiRecord {
  bool valid = false;
  /// Flat cell index (y * width + x) of each pooled sample; -1 off the grid.
  std::array<long, kRoiSamples> cells{};
  std::vector<double> patch;
  std::vector<double> hidden;  // post-relu
  std::vector<double> mask;
  double logit = 0.0;
};

struct RoiOutput {
  std::vector<RoiRecord> rois;
  std::size_t skipped = 0;

  std::vector<double> logits() const {
    std::vector<double> out;
    for (const auto& r : rois)
      if (r.valid) out.push_back(r.logit);
    return out;
  }
};

/// Cells pooled for one box, row-major over the 3x3 sample layout. Returns
/// false when the box center lies outside the grid.
inline bool roi_sample_cells(const BBox& box, const GridSpec& spec, bool box_aligned,
                             std::array<long, kRoiSamples>& cells) {
  std::size_t ix = 0, iy = 0;
  if (!spec.locate(box.cx, box.cy, ix, iy)) return false;
  const long w = static_cast<long>(spec.cells_x), h = static_cast<long>(spec.cells_y);
  for (std::size_t dy = 0; dy < kRoiPatch; ++dy) {
    for (std::size_t dx = 0; dx < kRoiPatch; ++dx) {
      const int u = static_cast<int>(dx) - 1, v = static_cast<int>(dy) - 1;
      long x = static_cast<long>(ix) + u, y = static_cast<long>(iy) + v;
      if (box_aligned) {
        std::size_t sx = 0, sy = 0;
        const bool in = spec.locate(box.cx + 0.5 * u * box.extent_x(), box.cy + 0.5 * v * box.extent_y(), sx, sy);
        x = in ? static_cast<long>(sx) : -1;
        y = in ? static_cast<long>(sy) : -1;
      }
      const bool on_grid = x >= 0 && y >= 0 && x < w && y < h;
      cells[dy * kRoiPatch + dx] = on_grid ? y * w + x : -1;
    }
  }
  return true;
}

/// 3x3 pooled feature patch -> dense -> relu -> dropout -> dense -> one
/// logit. Proposals centered outside the grid are flagged invalid and skipped.
inline RoiOutput roi_forward(const Grid& features, std::span<const Detection> proposals, const ParamSet& params,
                             const DetectorConfig& cfg, bool dropout_enabled, RngStream& stream) {
  const auto& w1 = params.at("roi.fc1.weight");
  const auto& b1 = params.at("roi.fc1.bias");
  const auto& w2 = params.at("roi.fc2.weight");
  const auto& b2 = params.at("roi.fc2.bias");
  const std::size_t C = features.channels;
  const std::size_t plane = features.height * features.width;
  if (w1.shape.size() != 2 || w1.shape[1] != C * kRoiSamples)
    throw ConfigError("roi_forward: 'roi.fc1.weight' does not match the feature channel count");
  if (features.width != cfg.grid.cells_x || features.height != cfg.grid.cells_y)
    throw ConfigError("roi_forward: feature map does not match the grid");
  RoiOutput out;
  out.rois.resize(proposals.size());
  for (std::size_t r = 0; r < proposals.size(); ++r) {
    auto& rec = out.rois[r];
    if (!roi_sample_cells(proposals[r].box, cfg.grid, cfg.roi_box_aligned, rec.cells)) {
      ++out.skipped;
      continue;
    }
    rec.valid = true;
    rec.patch.assign(C * kRoiSamples, 0.0);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < kRoiSamples; ++k)
        if (rec.cells[k] >= 0) rec.patch[c * kRoiSamples + k] = features.values[c * plane + static_cast<std::size_t>(rec.cells[k])];
    auto h = nnkit::dense(rec.patch, w1, b1);
    nnkit::relu_inplace(h);
    auto dropped = nnkit::dropout(h, cfg.roi_dropout, stream, dropout_enabled);
    rec.hidden = std::move(h);
    rec.mask = std::move(dropped.mask);
    rec.logit = nnkit::dense(dropped.output, w2, b2)[0];
  }
  return out;
}

/// dlogits is indexed like out.rois (entries for invalid ROIs are ignored).
inline void roi_backward(const RoiOutput& out, std::span<const double> dlogits, const ParamSet& params,
                         ParamSet& grads, Grid* grad_features) {
  const auto& w1 = params.at("roi.fc1.weight");
  const auto& w2 = params.at("roi.fc2.weight");
  auto gw1 = grads.at("roi.fc1.weight").span();
  auto gb1 = grads.at("roi.fc1.bias").span();
  auto gw2 = grads.at("roi.fc2.weight").span();
  auto gb2 = grads.at("roi.fc2.bias").span();
  for (std::size_t r = 0; r < out.rois.size(); ++r) {
    const auto& rec = out.rois[r];
    if (!rec.valid || dlogits[r] == 0.0) continue;
    const double g = dlogits[r];
    const auto dropped = nnkit::apply_mask(rec.hidden, rec.mask);
    std::vector<double> gh(rec.hidden.size(), 0.0);
    nnkit::dense_backward(dropped, w2, std::span<const double>(&g, 1), gh, gw2, gb2);
    for (std::size_t i = 0; i < gh.size(); ++i) gh[i] *= rec.mask[i];
    nnkit::relu_backward_inplace(rec.hidden, gh);
    std::vector<double> gpatch;
    if (grad_features != nullptr) gpatch.assign(rec.patch.size(), 0.0);
    nnkit::dense_backward(rec.patch, w1, gh, gpatch, gw1, gb1);
    if (grad_features == nullptr) continue;
    const std::size_t C = grad_features->channels;
    const std::size_t plane = grad_features->height * grad_features->width;
    // a cell sampled twice receives both contributions
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < kRoiSamples; ++k)
        if (rec.cells[k] >= 0)
          grad_features->values[c * plane + static_cast<std::size_t>(rec.cells[k])] += gpatch[c * kRoiSamples + k];
  }
}

// --- inference ---------------------------------------------------------------

/// RPN proposals after NMS; confidence is the RPN objectness.
inline std::vector<Detection> propose(const RpnOutput& rpn, const DetectorConfig& cfg) {
  const auto decoded = decode_boxes(rpn, cfg.grid);
  return nms(decoded, cfg.nms_iou, cfg.top_k);
}

/// Full deterministic inference: RPN -> decode -> NMS -> ROI head (dropout
/// off). Confidence of each returned detection is sigmoid(roi logit).
inline std::vector<Detection> detect(const Grid& raster, const ParamSet& params, const DetectorConfig& cfg) {
  const auto pass = run_rpn(raster, params, cfg);
  const auto proposals = propose(pass.out, cfg);
  RngStream unused;
  const auto roi = roi_forward(pass.trace.features, proposals, params, cfg, false, unused);
  std::vector<Detection> dets;
  for (std::size_t r = 0; r < proposals.size(); ++r) {
    if (!roi.rois[r].valid) continue;
    Detection d = proposals[r];
    d.roi_logit = roi.rois[r].logit;
    d.confidence = nnkit::sigmoid(d.roi_logit);
    dets.push_back(d);
  }
  return dets;
}

inline std::vector<Detection> detect(const scenegen::PointScene& scene, const ParamSet& params,
                                     const DetectorConfig& cfg) {
  return detect(rasterize_bev(scene, cfg.grid), params, cfg);
}

}  // namespace uamt::detector
