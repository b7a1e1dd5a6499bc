// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "uamt/errors.hpp"
#include "uamt/nnkit/grid.hpp"
#include "uamt/nnkit/param_set.hpp"
#include "uamt/nnkit/rng.hpp"

namespace uamt::nnkit {

// Each layer exposes a forward function and a matching backward function.
// Backward functions accumulate (+=) into the supplied gradient buffers so a
// caller can sum contributions from several paths before an optimizer step.

// --- activations -----------------------------------------------------------

inline double relu(double x) noexcept { return x > 0.0 ? x : 0.0; }

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + e^x) without overflow.
inline double softplus(double x) noexcept { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline void relu_inplace(std::span<double> xs) noexcept {
  for (auto& x : xs) x = relu(x);
}

/// grad *= 1[activation > 0], using the post-activation values.
inline void relu_backward_inplace(std::span<const double> activation, std::span<double> grad) noexcept {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(activation[i] > 0.0)) grad[i] = 0.0;
}

// --- conv2d ------------------------------------------------------------------

namespace detail {

inline void check_conv(const Grid& input, const ParamEntry& weights, const ParamEntry& bias, int pad, int dilation) {
  if (weights.shape.size() != 4) throw ConfigError("conv2d: '" + weights.name + "' must be [out, in, k, k]");
  const auto k = weights.shape[2];
  if (weights.shape[3] != k || k % 2 == 0) throw ConfigError("conv2d: kernel must be square with odd size");
  if (dilation < 1) throw ConfigError("conv2d: dilation must be >= 1");
  if (pad < 0 || static_cast<std::size_t>(pad) * 2 != (k - 1) * static_cast<std::size_t>(dilation))
    throw ConfigError("conv2d: pad must be dilation * (k - 1) / 2");
  if (weights.shape[1] != input.channels)
    throw ConfigError("conv2d: input has " + std::to_string(input.channels) + " channels, kernel '" + weights.name +
                      "' expects " + std::to_string(weights.shape[1]));
  if (bias.size() != weights.shape[0]) throw ConfigError("conv2d: bias '" + bias.name + "' length mismatch");
}

}  // namespace detail

/// Same-size (optionally dilated) cross-correlation plus bias.
/// weights: [out, in, k, k], bias: [out].
inline Grid conv2d(const Grid& input, const ParamEntry& weights, const ParamEntry& bias, int pad, int dilation = 1) {
  detail::check_conv(input, weights, bias, pad, dilation);
  const std::size_t co = weights.shape[0], ci = weights.shape[1], k = weights.shape[2];
  const long H = static_cast<long>(input.height), W = static_cast<long>(input.width);
  Grid out(co, input.height, input.width);
  for (std::size_t o = 0; o < co; ++o) {
    auto dst = out.channel(o);
    std::fill(dst.begin(), dst.end(), bias.values[o]);
    for (std::size_t i = 0; i < ci; ++i) {
      const auto src = input.channel(i);
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double w = weights.values[((o * ci + i) * k + ky) * k + kx];
          if (w == 0.0) continue;
          const long dy = static_cast<long>(ky) * dilation - pad, dx = static_cast<long>(kx) * dilation - pad;
          const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
          for (long y = std::max(0L, -dy); y < std::min(H, H - dy); ++y) {
            double* d = dst.data() + y * W;
            const double* s = src.data() + (y + dy) * W + dx;
            for (long x = x0; x < x1; ++x) d[x] += w * s[x];
          }
        }
      }
    }
  }
  return out;
}

/// Accumulates d(loss)/d(input, weights, bias) given d(loss)/d(output).
/// grad_input may be null when the input is data.
inline void conv2d_backward(const Grid& input, const ParamEntry& weights, int pad, const Grid& grad_output,
                            Grid* grad_input, std::span<double> grad_weights, std::span<double> grad_bias,
                            int dilation = 1) {
  const std::size_t co = weights.shape[0], ci = weights.shape[1], k = weights.shape[2];
  const long H = static_cast<long>(input.height), W = static_cast<long>(input.width);
  for (std::size_t o = 0; o < co; ++o) {
    const auto g = grad_output.channel(o);
    double gb = 0.0;
    for (double v : g) gb += v;
    grad_bias[o] += gb;
    for (std::size_t i = 0; i < ci; ++i) {
      const auto src = input.channel(i);
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t widx = ((o * ci + i) * k + ky) * k + kx;
          const long dy = static_cast<long>(ky) * dilation - pad, dx = static_cast<long>(kx) * dilation - pad;
          const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
          double acc[4] = {0.0, 0.0, 0.0, 0.0};
          for (long y = std::max(0L, -dy); y < std::min(H, H - dy); ++y) {
            const double* gr = g.data() + y * W;
            const double* s = src.data() + (y + dy) * W + dx;
            long x = x0;
            for (; x + 3 < x1; x += 4) {
              acc[0] += gr[x] * s[x];
              acc[1] += gr[x + 1] * s[x + 1];
              acc[2] += gr[x + 2] * s[x + 2];
              acc[3] += gr[x + 3] * s[x + 3];
            }
            for (; x < x1; ++x) acc[0] += gr[x] * s[x];
          }
          grad_weights[widx] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
          if (grad_input != nullptr) {
            const double w = weights.values[widx];
            if (w == 0.0) continue;
            auto gin = grad_input->channel(i);
            for (long y = std::max(0L, -dy); y < std::min(H, H - dy); ++y) {
              const double* gr = g.data() + y * W;
              double* d = gin.data() + (y + dy) * W + dx;
              for (long x = x0; x < x1; ++x) d[x] += w * gr[x];
            }
          }
        }
      }
    }
  }
}

// --- dense -------------------------------------------------------------------

/// y = W x + b with W: [out, in], b: [out].
inline std::vector<double> dense(std::span<const double> input, const ParamEntry& weights, const ParamEntry& bias) {
  if (weights.shape.size() != 2) throw ConfigError("dense: '" + weights.name + "' must be [out, in]");
  const std::size_t no = weights.shape[0], ni = weights.shape[1];
  if (input.size() != ni)
    throw ConfigError("dense: input length " + std::to_string(input.size()) + " does not match '" + weights.name +
                      "' input dimension " + std::to_string(ni));
  if (bias.size() != no) throw ConfigError("dense: bias '" + bias.name + "' length mismatch");
  std::vector<double> out(no);
  for (std::size_t o = 0; o < no; ++o) {
    const double* row = weights.values.data() + o * ni;
    double acc = bias.values[o];
    for (std::size_t i = 0; i < ni; ++i) acc += row[i] * input[i];
    out[o] = acc;
  }
  return out;
}

/// grad_input may be empty when not needed.
inline void dense_backward(std::span<const double> input, const ParamEntry& weights,
                           std::span<const double> grad_output, std::span<double> grad_input,
                           std::span<double> grad_weights, std::span<double> grad_bias) {
  const std::size_t no = weights.shape[0], ni = weights.shape[1];
  for (std::size_t o = 0; o < no; ++o) {
    const double g = grad_output[o];
    if (g == 0.0) continue;
    grad_bias[o] += g;
    double* gw = grad_weights.data() + o * ni;
    for (std::size_t i = 0; i < ni; ++i) gw[i] += g * input[i];
    if (!grad_input.empty()) {
      const double* row = weights.values.data() + o * ni;
      for (std::size_t i = 0; i < ni; ++i) grad_input[i] += g * row[i];
    }
  }
}

// --- dropout -----------------------------------------------------------------

struct DropoutResult {
  std::vector<double> output;
  /// Per-element multiplier: 0 for dropped units, 1/(1-p) for survivors, 1 when disabled.
  std::vector<double> mask;
};

/// Inverted dropout. Consumes one draw per element when enabled.
inline DropoutResult dropout(std::span<const double> input, double p, RngStream& stream, bool enabled) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: probability must lie in [0, 1)");
  DropoutResult r{std::vector<double>(input.begin(), input.end()), std::vector<double>(input.size(), 1.0)};
  if (!enabled) return r;
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < input.size(); ++i) {
    const bool drop = stream.uniform() < p;
    r.mask[i] = drop ? 0.0 : keep_scale;
    r.output[i] = input[i] * r.mask[i];
  }
  return r;
}

/// Replays a recorded mask (used by gradient checks and backward passes).
inline std::vector<double> apply_mask(std::span<const double> input, std::span<const double> mask) {
  std::vector<double> out(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] * mask[i];
  return out;
}

}  // namespace uamt::nnkit
