// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace uamt::nnkit {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Mixes any number of integers into one stream identifier.
template <class... Ts>
constexpr std::uint64_t stream_key(Ts... parts) noexcept {
  std::uint64_t h = 0x6A09E667F3BCC908ULL;
  ((h = detail::splitmix64(h ^ static_cast<std::uint64_t>(parts))), ...);
  return h;
}

/// Counter-based random stream. Draw n of a stream is a pure function of
/// (seed, stream_id, n), so streams can be split, replayed and evaluated in
/// any order.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  std::uint64_t counter = 0;

  RngStream() = default;
  RngStream(std::uint64_t s, std::uint64_t id, std::uint64_t c = 0) : seed(s), stream_id(id), counter(c) {}

  std::uint64_t next_u64() noexcept {
    const std::uint64_t key = detail::splitmix64(seed ^ detail::splitmix64(stream_id ^ 0xD1B54A32D192ED03ULL));
    return detail::splitmix64(key + 0x9E3779B97F4A7C15ULL * (counter++));
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  long uniform_int(long lo, long hi) noexcept {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<long>(next_u64() % span);
  }

  /// Box-Muller; always consumes two draws.
  double normal(double mean = 0.0, double sd = 1.0) noexcept {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return mean + sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Knuth's multiplication method; fine for the small means used here.
  long poisson(double mean) noexcept {
    if (mean <= 0.0) return 0;
    const double limit = std::exp(-mean);
    long k = 0;
    double prod = uniform();
    while (prod > limit) {
      ++k;
      prod *= uniform();
    }
    return k;
  }

  /// Independent child stream; the parent's counter is not touched.
  RngStream split(std::uint64_t index) const noexcept { return {seed, stream_key(stream_id, index), 0}; }

  template <class T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(next_u64() % i);
      std::swap(items[i - 1], items[j]);
    }
  }

  friend bool operator==(const RngStream&, const RngStream&) = default;
};

}  // namespace uamt::nnkit
