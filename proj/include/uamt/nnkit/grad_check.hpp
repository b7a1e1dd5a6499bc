// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "uamt/errors.hpp"
#include "uamt/nnkit/param_set.hpp"
#include "uamt/nnkit/rng.hpp"

namespace uamt::nnkit {

/// Evaluates the loss at `params`; when `grad` is non-null it must also
/// accumulate the reverse-mode gradient into it (grad arrives zeroed).
using LossClosure = std::function<double(const ParamSet& params, ParamSet* grad)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_entry;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;

  bool passed(double tolerance) const noexcept { return max_rel_error <= tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor so that gradients near zero are compared absolutely.
  double floor = 1e-6;
  /// Check at most this many coordinates per entry (0 = all), sampled deterministically.
  std::size_t max_per_entry = 0;
  std::uint64_t sample_seed = 7;
};

/// Compares the closure's reverse-mode gradient against central differences.
inline GradCheckReport grad_check(const LossClosure& loss, const ParamSet& params, const GradCheckOptions& opt = {}) {
  ParamSet analytic = params.zeros_like();
  const double base = loss(params, &analytic);
  if (!std::isfinite(base)) throw EvaluationError("grad_check: loss is not finite at the base point");

  GradCheckReport report;
  ParamSet probe = params;
  RngStream pick(opt.sample_seed, 0);
  for (std::size_t e = 0; e < params.entry_count(); ++e) {
    auto& values = probe.entries()[e].values;
    const std::size_t n = values.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (opt.max_per_entry != 0 && n > opt.max_per_entry) {
      pick.shuffle(std::span<std::size_t>(idx));
      idx.resize(opt.max_per_entry);
    }
    for (auto i : idx) {
      const double saved = values[i];
      values[i] = saved + opt.step;
      const double up = loss(probe, nullptr);
      values[i] = saved - opt.step;
      const double down = loss(probe, nullptr);
      values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw EvaluationError("grad_check: loss is not finite near '" + params.entries()[e].name + "'");
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic.entries()[e].values[i];
      const double rel = std::abs(a - numeric) / std::max({opt.floor, std::abs(a), std::abs(numeric)});
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_entry = params.entries()[e].name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace uamt::nnkit
