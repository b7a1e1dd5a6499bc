// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "uamt/errors.hpp"

namespace uamt::nnkit {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

/// One named parameter tensor.
struct ParamEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  std::span<double> span() noexcept { return values; }
  std::span<const double> span() const noexcept { return values; }

  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

inline std::size_t shape_product(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Ordered collection of named parameter tensors. Names are unique and every
/// entry holds exactly shape-product values.
class ParamSet {
 public:
  ParamSet() = default;

  ParamEntry& add(std::string name, std::vector<std::size_t> shape, double fill = 0.0) {
    if (name.empty() || name.size() > 0xFFFF) throw ConfigError("parameter name must be 1..65535 bytes");
    if (find(name) != nullptr) throw ConfigError("duplicate parameter name '" + name + "'");
    if (shape.empty() || shape.size() > 0xFF) throw ConfigError("parameter '" + name + "' needs rank 1..255");
    for (auto d : shape) {
      if (d == 0 || d > 0xFFFFFFFFu) throw ConfigError("parameter '" + name + "' has a non-positive dimension");
    }
    const auto n = shape_product(shape);
    entries_.push_back({std::move(name), std::move(shape), std::vector<double>(n, fill)});
    return entries_.back();
  }

  const ParamEntry* find(std::string_view name) const noexcept {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }
  ParamEntry* find(std::string_view name) noexcept {
    return const_cast<ParamEntry*>(std::as_const(*this).find(name));
  }

  const ParamEntry& at(std::string_view name) const {
    if (const auto* e = find(name)) return *e;
    throw ConfigError("missing parameter entry '" + std::string(name) + "'");
  }
  ParamEntry& at(std::string_view name) { return const_cast<ParamEntry&>(std::as_const(*this).at(name)); }

  std::size_t entry_count() const noexcept { return entries_.size(); }
  const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
  std::vector<ParamEntry>& entries() noexcept { return entries_; }

  std::size_t total_size() const noexcept {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.size();
    return n;
  }

  /// Same names and shapes, zero values.
  ParamSet zeros_like() const {
    ParamSet out = *this;
    for (auto& e : out.entries_) std::fill(e.values.begin(), e.values.end(), 0.0);
    return out;
  }

  void fill(double v) {
    for (auto& e : entries_) std::fill(e.values.begin(), e.values.end(), v);
  }

  /// this += scale * other; sets must be aligned.
  void axpy(double scale, const ParamSet& other);

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<ParamEntry> entries_;
};

/// Identical names and shapes in identical order.
inline bool aligned(const ParamSet& a, const ParamSet& b) noexcept {
  if (a.entry_count() != b.entry_count()) return false;
  for (std::size_t i = 0; i < a.entry_count(); ++i) {
    const auto& x = a.entries()[i];
    const auto& y = b.entries()[i];
    if (x.name != y.name || x.shape != y.shape) return false;
  }
  return true;
}

inline void require_aligned(const ParamSet& a, const ParamSet& b, std::string_view what) {
  if (!aligned(a, b)) throw ConfigError(std::string(what) + ": parameter sets are not aligned");
}

inline void ParamSet::axpy(double scale, const ParamSet& other) {
  require_aligned(*this, other, "axpy");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& dst = entries_[i].values;
    const auto& src = other.entries_[i].values;
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += scale * src[k];
  }
}

// --- checkpoint file -------------------------------------------------------
//
// "UAMT" | u32 version | u32 entry count | per entry:
//   u16 name length | name bytes | u8 rank | u32 dims[rank] | f64 values[]
// All integers and reals little-endian.

inline constexpr char kCheckpointMagic[4] = {'U', 'A', 'M', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > bytes_.size()) throw DataError(std::string("checkpoint truncated while reading ") + what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) throw DataError(std::string("checkpoint truncated while reading ") + what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const ParamSet& params) {
  std::string out(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.entry_count()));
  for (const auto& e : params.entries()) {
    detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
    for (auto d : e.shape) detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : e.values) detail::put<double>(out, v);
  }
  return out;
}

inline ParamSet decode_checkpoint(std::string_view bytes) {
  detail::Reader in(bytes);
  const auto magic = in.take(4, "magic");
  if (magic != std::string_view(kCheckpointMagic, 4)) throw DataError("not a UAMT checkpoint (bad magic)");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>("entry count");
  ParamSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = in.get<std::uint16_t>("name length");
    std::string name(in.take(len, "name"));
    const auto rank = in.get<std::uint8_t>("rank");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = in.get<std::uint32_t>("dims");
    try {
      auto& e = params.add(std::move(name), std::move(shape));
      for (auto& v : e.values) v = in.get<double>("values");
    } catch (const ConfigError& err) {
      throw DataError(std::string("invalid checkpoint entry: ") + err.what());
    }
  }
  if (!in.done()) throw DataError("trailing bytes after last checkpoint entry");
  return params;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

inline void save_checkpoint(const ParamSet& params, const std::string& path) {
  write_file_bytes(path, encode_checkpoint(params));
}

inline ParamSet load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

/// 64-bit FNV-1a; used to fingerprint artifacts and configs.
inline std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

inline std::string checkpoint_hash(const ParamSet& params) { return hex64(fnv1a64(encode_checkpoint(params))); }

}  // namespace uamt::nnkit
