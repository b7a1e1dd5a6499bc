// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cerrno>
#include <csignal>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "uamt/adapt/types.hpp"
#include "uamt/config.hpp"
#include "uamt/errors.hpp"
#include "uamt/nnkit/param_set.hpp"

namespace uamt::cli {

namespace fs = std::filesystem;

// --- sidecar metadata -------------------------------------------------------------
//
// Every artifact `<file>` has a `<file>.meta.json` holding the stage that wrote
// it, that stage's config hash, the full resolved config, the seed and a hash
// of the artifact bytes. Nothing time-dependent is recorded, so equal configs
// give byte-identical artifacts.

inline fs::path meta_path(const fs::path& artifact) { return fs::path(artifact.string() + ".meta.json"); }

inline std::string content_hash(std::string_view bytes) { return nnkit::hex64(nnkit::fnv1a64(bytes)); }

inline nlohmann::json artifact_meta(const RunConfig& cfg, Stage stage, std::string_view bytes,
                                    const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json m = extra;
  m["stage"] = to_string(stage);
  m["stage_hash"] = stage_hash(cfg, stage);
  m["config"] = artifact_config(cfg);
  m["seed"] = cfg.seed;
  m["content_hash"] = content_hash(bytes);
  return m;
}

inline void ensure_parent(const fs::path& p) {
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  if (ec) throw DataError("cannot create directory '" + p.parent_path().string() + "': " + ec.message());
}

/// Writes the artifact and its sidecar.
inline void write_artifact(const fs::path& path, std::string_view bytes, const RunConfig& cfg, Stage stage,
                           const nlohmann::json& extra = nlohmann::json::object()) {
  ensure_parent(path);
  nnkit::write_file_bytes(path.string(), bytes);
  nnkit::write_file_bytes(meta_path(path).string(), artifact_meta(cfg, stage, bytes, extra).dump(2) + "\n");
}

struct ArtifactCheck {
  std::string bytes;
  nlohmann::json meta;
  /// Set when --force let a hash mismatch through.
  std::optional<std::string> warning;
};

/// Loads an upstream artifact and verifies that it was produced by `stage`
/// under the current config and has not changed since. With `force` a config
/// mismatch becomes a warning; missing or altered files always fail.
inline ArtifactCheck require_artifact(const fs::path& path, const RunConfig& cfg, Stage stage, bool force) {
  if (!fs::exists(path)) throw ArtifactError("missing upstream artifact '" + path.string() + "' (run " +
                                             std::string(to_string(stage)) + " first)");
  if (!fs::exists(meta_path(path))) throw ArtifactError("artifact '" + path.string() + "' has no metadata sidecar");
  ArtifactCheck out;
  out.bytes = nnkit::read_file_bytes(path.string());
  try {
    out.meta = nlohmann::json::parse(nnkit::read_file_bytes(meta_path(path).string()));
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError("metadata of '" + path.string() + "' is unreadable: " + e.what());
  }
  const auto recorded = out.meta.value("content_hash", std::string{});
  if (recorded != content_hash(out.bytes))
    throw ArtifactError("artifact '" + path.string() + "' changed after it was written (content hash " +
                        content_hash(out.bytes) + ", recorded " + recorded + ")");
  const auto have = out.meta.value("stage_hash", std::string{});
  const auto want = stage_hash(cfg, stage);
  if (have != want) {
    std::string msg = "artifact '" + path.string() + "' was produced with " + to_string(stage) + " config hash " +
                      have + " but the supplied config hashes to " + want;
    if (!force) throw ArtifactError(msg + " (use --force to override)");
    out.warning = msg;
  }
  return out;
}

// --- directory lock ------------------------------------------------------------

/// Exclusive ownership of an output directory for the lifetime of the object.
/// A lock left by a process that no longer exists is reclaimed.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".uamt.lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory '" + dir.string() + "': " + ec.message());
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const auto pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
        ::close(fd);
        return;
      }
      if (errno != EEXIST) throw DataError("cannot create lock '" + path_.string() + "': " + std::strerror(errno));
      const long owner = read_owner();
      if (owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM))
        throw StageError("lock", "output directory '" + dir.string() + "' is in use by process " +
                                     std::to_string(owner) + " (lock file " + path_.string() + ")");
      fs::remove(path_, ec);
    }
    throw StageError("lock", "could not acquire '" + path_.string() + "'");
  }

  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

  const fs::path& path() const noexcept { return path_; }

 private:
  long read_owner() const {
    std::ifstream in(path_);
    long pid = 0;
    in >> pid;
    return in ? pid : 0;
  }

  fs::path path_;
};

// --- variance snapshots -------------------------------------------------------------

inline std::string variance_samples_csv(const std::vector<adapt::VarianceSample>& samples) {
  std::string out = "epoch,scene_id,cx,cy,w,l,orient,mean_logit,variance,weight\n";
  char buf[64];
  auto real = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    out += buf;
  };
  for (const auto& s : samples) {
    out += std::to_string(s.epoch) + "," + s.scene_id;
    real(s.box.cx);
    real(s.box.cy);
    real(s.box.w);
    real(s.box.l);
    out += "," + std::to_string(s.box.orient);
    real(s.mean_logit);
    real(s.variance);
    real(s.weight);
    out += "\n";
  }
  return out;
}

inline std::vector<adapt::VarianceSample> parse_variance_samples(const std::string& text, const std::string& origin) {
  std::vector<adapt::VarianceSample> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    if (++lineno == 1 || line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 10) throw DataError(origin + ":" + std::to_string(lineno) + ": expected 10 fields");
    try {
      adapt::VarianceSample s;
      s.epoch = std::stoi(f[0]);
      s.scene_id = f[1];
      s.box = {std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), std::stoi(f[6])};
      s.mean_logit = std::stod(f[7]);
      s.variance = std::stod(f[8]);
      s.weight = std::stod(f[9]);
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw DataError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace uamt::cli
