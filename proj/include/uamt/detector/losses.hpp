// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include "uamt/errors.hpp"
#include "uamt/nnkit/layers.hpp"

namespace uamt::detector {

/// A reduced loss. `empty` is set when there was nothing to average over,
/// in which case value is 0 and no gradient is produced.
struct LossValue {
  double value = 0.0;
  bool empty = false;
};

namespace detail {

inline void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ConfigError(std::string(what) + ": input lengths differ");
}

/// Binary cross-entropy on a logit against a (possibly soft) target, and its derivative p - target.
inline double bce_logit(double z, double target) noexcept {
  return nnkit::softplus(z) - target * z;
}

}  // namespace detail

/// Sigmoid focal loss averaged over non-ignored anchors. `grad`, when non-empty,
/// receives scale * dL/dlogit.
inline LossValue focal_loss(std::span<const double> logits, std::span<const double> targets,
                            std::span<const std::uint8_t> valid, double gamma, double alpha,
                            std::span<double> grad = {}, double scale = 1.0) {
  detail::require_same(logits.size(), targets.size(), "focal_loss");
  detail::require_same(logits.size(), valid.size(), "focal_loss");
  std::size_t n = 0;
  for (auto v : valid) n += v ? 1 : 0;
  if (n == 0) return {0.0, true};
  double sum = 0.0;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!valid[i]) continue;
    const bool pos = targets[i] > 0.5;
    const double s = pos ? 1.0 : -1.0;
    const double zt = s * logits[i];
    // p_t = sigmoid(zt), 1 - p_t = sigmoid(-zt), log p_t = -softplus(-zt)
    const double pt = nnkit::sigmoid(zt);
    const double qt = nnkit::sigmoid(-zt);
    const double log_pt = -nnkit::softplus(-zt);
    const double at = pos ? alpha : 1.0 - alpha;
    const double mod = gamma == 0.0 ? 1.0 : std::pow(qt, gamma);
    sum += -at * mod * log_pt;
    if (!grad.empty()) grad[i] += scale * inv * s * at * mod * (gamma * pt * log_pt - qt);
  }
  return {sum * inv, false};
}

inline double smooth_l1_value(double x, double beta) noexcept {
  const double a = std::abs(x);
  return a < beta ? 0.5 * x * x / beta : a - 0.5 * beta;
}

inline double smooth_l1_slope(double x, double beta) noexcept {
  const double a = std::abs(x);
  if (a < beta) return x / beta;
  return x > 0.0 ? 1.0 : -1.0;
}

/// Smooth-L1 over the 4 regression components of positive anchors, averaged
/// over positives x 4. pred/target are component-major (k * cells + cell).
inline LossValue smooth_l1(std::span<const double> pred, std::span<const double> target,
                           std::span<const std::uint8_t> positive, double beta, std::span<double> grad = {},
                           double scale = 1.0) {
  detail::require_same(pred.size(), target.size(), "smooth_l1");
  detail::require_same(pred.size(), 4 * positive.size(), "smooth_l1");
  const std::size_t cells = positive.size();
  std::size_t n = 0;
  for (auto v : positive) n += v ? 1 : 0;
  if (n == 0) return {0.0, true};
  const double inv = 1.0 / (4.0 * static_cast<double>(n));
  double sum = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t c = 0; c < cells; ++c) {
      if (!positive[c]) continue;
      const std::size_t i = k * cells + c;
      const double x = pred[i] - target[i];
      sum += smooth_l1_value(x, beta);
      if (!grad.empty()) grad[i] += scale * inv * smooth_l1_slope(x, beta);
    }
  }
  return {sum * inv, false};
}

/// Binary cross-entropy on the orientation bit, averaged over positive anchors.
inline LossValue dir_ce_loss(std::span<const double> logits, std::span<const double> targets,
                             std::span<const std::uint8_t> positive, std::span<double> grad = {}, double scale = 1.0) {
  detail::require_same(logits.size(), targets.size(), "dir_ce_loss");
  detail::require_same(logits.size(), positive.size(), "dir_ce_loss");
  std::size_t n = 0;
  for (auto v : positive) n += v ? 1 : 0;
  if (n == 0) return {0.0, true};
  const double inv = 1.0 / static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!positive[i]) continue;
    sum += detail::bce_logit(logits[i], targets[i]);
    if (!grad.empty()) grad[i] += scale * inv * (nnkit::sigmoid(logits[i]) - targets[i]);
  }
  return {sum * inv, false};
}

/// (1/N) sum_i weight_i * BCE(sigmoid(logit_i), target_i). Targets may be soft.
inline LossValue roi_bce_loss(std::span<const double> logits, std::span<const double> targets,
                              std::span<const double> weights, std::span<double> grad = {}, double scale = 1.0) {
  detail::require_same(logits.size(), targets.size(), "roi_bce_loss");
  detail::require_same(logits.size(), weights.size(), "roi_bce_loss");
  const std::size_t n = logits.size();
  if (n == 0) return {0.0, true};
  const double inv = 1.0 / static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += weights[i] * detail::bce_logit(logits[i], targets[i]);
    if (!grad.empty()) grad[i] += scale * inv * weights[i] * (nnkit::sigmoid(logits[i]) - targets[i]);
  }
  return {sum * inv, false};
}

/// The five detector loss terms.
struct LossTerms {
  double rpn_cls = 0.0;
  double rpn_reg = 0.0;
  double rpn_dir = 0.0;
  double roi_cls = 0.0;  // uncertainty-weighted when a teacher is present
  double roi_tea = 0.0;  // zero in source-training mode

  static constexpr std::array<const char*, 5> names = {"rpn_cls", "rpn_reg", "rpn_dir", "roi_cls", "roi_tea"};

  std::array<double, 5> as_array() const noexcept { return {rpn_cls, rpn_reg, rpn_dir, roi_cls, roi_tea}; }

  LossTerms& operator+=(const LossTerms& o) noexcept {
    rpn_cls += o.rpn_cls;
    rpn_reg += o.rpn_reg;
    rpn_dir += o.rpn_dir;
    roi_cls += o.roi_cls;
    roi_tea += o.roi_tea;
    return *this;
  }
};

/// Unweighted sum of the five terms. Throws TrainingError naming the first
/// non-finite term.
inline double total_loss(const LossTerms& t, long step = -1) {
  const auto v = t.as_array();
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]))
      throw TrainingError(LossTerms::names[i], step,
                          std::string("non-finite loss term '") + LossTerms::names[i] + "' at step " +
                              std::to_string(step));
    sum += v[i];
  }
  return sum;
}

}  // namespace uamt::detector
