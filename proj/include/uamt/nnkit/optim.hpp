// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include "uamt/errors.hpp"
#include "uamt/nnkit/param_set.hpp"

namespace uamt::nnkit {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates plus the step count.
struct AdamState {
  ParamSet m;
  ParamSet v;
  long step = 0;

  AdamState() = default;
  explicit AdamState(const ParamSet& like) : m(like.zeros_like()), v(like.zeros_like()) {}
};

/// Bias-corrected Adam update, in place.
inline void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, const AdamConfig& cfg) {
  require_aligned(params, grads, "adam_step(params, grads)");
  require_aligned(params, state.m, "adam_step(params, state)");
  require_aligned(params, state.v, "adam_step(params, state)");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t e = 0; e < params.entry_count(); ++e) {
    auto& w = params.entries()[e].values;
    const auto& g = grads.entries()[e].values;
    auto& m = state.m.entries()[e].values;
    auto& v = state.v.entries()[e].values;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

/// Exponential moving average: teacher <- alpha * teacher + (1 - alpha) * student.
inline void ema_update(ParamSet& teacher, const ParamSet& student, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("ema_update: alpha must lie in [0, 1]");
  require_aligned(teacher, student, "ema_update");
  if (alpha == 1.0) return;
  for (std::size_t e = 0; e < teacher.entry_count(); ++e) {
    auto& t = teacher.entries()[e].values;
    const auto& s = student.entries()[e].values;
    if (alpha == 0.0) {
      t = s;
      continue;
    }
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = alpha * t[i] + (1.0 - alpha) * s[i];
  }
}

}  // namespace uamt::nnkit
