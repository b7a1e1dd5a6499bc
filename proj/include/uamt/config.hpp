// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "uamt/adapt/types.hpp"
#include "uamt/detector/network.hpp"
#include "uamt/errors.hpp"
#include "uamt/evalkit/evaluate.hpp"
#include "uamt/nnkit/param_set.hpp"
#include "uamt/scenegen/augment.hpp"
#include "uamt/scenegen/generator.hpp"

namespace uamt {

struct DatasetSizes {
  std::size_t source_train = 200;
  std::size_t source_eval = 100;
  std::size_t target_train = 200;
  std::size_t target_eval = 100;
};

struct ScenegenSection {
  scenegen::DomainConfig source = scenegen::source_domain();
  scenegen::DomainConfig target = scenegen::target_domain();
  scenegen::RainConfig rain;
  /// Apply per-scene rain to both target sets (the TARGET-RAIN domain).
  bool target_rain = false;
  DatasetSizes sizes;
};

struct IoSection {
  std::string out_dir = "uamt-run";
};

/// Every tunable of a pipeline run. Serialized as JSON with one object per section.
struct RunConfig {
  ScenegenSection scenegen;
  detector::DetectorConfig detector;
  adapt::AdaptConfig adapt;
  evalkit::EvalConfig eval;
  IoSection io;
  std::uint64_t seed = 1;

  void validate() const {
    scenegen.source.validate();
    scenegen.target.validate();
    scenegen.rain.validate();
    const auto& n = scenegen.sizes;
    if (n.source_train == 0 || n.source_eval == 0 || n.target_train == 0 || n.target_eval == 0)
      throw ConfigError("scenegen.sizes entries must be positive");
    detector.validate();
    adapt.validate();
    if (!(eval.iou_threshold > 0.0 && eval.iou_threshold <= 1.0)) throw ConfigError("eval.iou_threshold must lie in (0, 1]");
    if (!(eval.correct_iou > 0.0 && eval.correct_iou <= 1.0)) throw ConfigError("eval.correct_iou must lie in (0, 1]");
    if (eval.ap_points != 40 && eval.ap_points != 11) throw ConfigError("eval.ap_points must be 40 or 11");
    if (io.out_dir.empty()) throw ConfigError("io.out_dir must not be empty");
  }
};

// --- field tables --------------------------------------------------------------
//
// One table per struct drives serialization, strict parsing and overrides.

template <class V> void fields(V& v, scenegen::SceneExtent& c) {
  v("size_x", c.size_x);
  v("size_y", c.size_y);
}

template <class V> void fields(V& v, scenegen::DomainConfig& c) {
  v("domain_tag", c.domain_tag);
  v("n_objects_min", c.n_objects_min);
  v("n_objects_max", c.n_objects_max);
  v("object_w_mean", c.object_w_mean);
  v("object_l_mean", c.object_l_mean);
  v("object_size_sd", c.object_size_sd);
  v("points_per_m2", c.points_per_m2);
  v("clutter_min", c.clutter_min);
  v("clutter_max", c.clutter_max);
  v("extent", c.extent);
  v("max_attempts", c.max_attempts);
}

template <class V> void fields(V& v, scenegen::RainConfig& c) {
  v("rate_min", c.rate_min);
  v("rate_max", c.rate_max);
  v("drop_coeff", c.drop_coeff);
  v("noise_sd_per_m", c.noise_sd_per_m);
}

template <class V> void fields(V& v, DatasetSizes& c) {
  v("source_train", c.source_train);
  v("source_eval", c.source_eval);
  v("target_train", c.target_train);
  v("target_eval", c.target_eval);
}

template <class V> void fields(V& v, ScenegenSection& c) {
  v("source", c.source);
  v("target", c.target);
  v("rain", c.rain);
  v("target_rain", c.target_rain);
  v("sizes", c.sizes);
}

template <class V> void fields(V& v, detector::GridSpec& c) {
  v("extent_x", c.extent_x);
  v("extent_y", c.extent_y);
  v("cells_x", c.cells_x);
  v("cells_y", c.cells_y);
  v("anchor_w", c.anchor_w);
  v("anchor_l", c.anchor_l);
}

template <class V> void fields(V& v, detector::DetectorConfig& c) {
  v("grid", c.grid);
  v("backbone_channels", c.backbone_channels);
  v("backbone_dilations", c.backbone_dilations);
  v("roi_hidden", c.roi_hidden);
  v("roi_dropout", c.roi_dropout);
  v("nms_iou", c.nms_iou);
  v("top_k", c.top_k);
  v("roi_positive_iou", c.roi_positive_iou);
  v("focal_gamma", c.focal_gamma);
  v("focal_alpha", c.focal_alpha);
  v("smooth_l1_beta", c.smooth_l1_beta);
  v("ignore_dilation", c.ignore_dilation);
  v("roi_box_aligned", c.roi_box_aligned);
}

// adapt.seed is not a field: it always mirrors the top-level seed.
template <class V> void fields(V& v, adapt::AdaptConfig& c) {
  v("delta", c.delta_schedule);
  v("iterations", c.iterations);
  v("mc_passes", c.mc_passes);
  v("alpha", c.alpha);
  v("source_epochs", c.source_epochs);
  v("epochs", c.epochs);
  v("batch_size", c.batch_size);
  v("lr", c.lr);
  v("source_lr", c.source_lr);
  v("object_scale_min", c.object_scale_min);
  v("object_scale_max", c.object_scale_max);
  v("uncertainty", c.uncertainty);
  v("per_epoch_ema", c.per_epoch_ema);
  v("weight_teacher_loss", c.weight_teacher_loss);
  v("student_dropout", c.student_dropout);
  v("variance_over_probabilities", c.variance_over_probabilities);
}

template <class V> void fields(V& v, evalkit::TierRules& c) {
  v("easy_min_points", c.easy_min_points);
  v("easy_max_range", c.easy_max_range);
  v("moderate_min_points", c.moderate_min_points);
  v("hard_min_points", c.hard_min_points);
}

template <class V> void fields(V& v, evalkit::EvalConfig& c) {
  v("iou_threshold", c.iou_threshold);
  v("correct_iou", c.correct_iou);
  v("ap_points", c.ap_points);
  v("tiers", c.tiers);
}

template <class V> void fields(V& v, IoSection& c) { v("out_dir", c.out_dir); }

template <class V> void fields(V& v, RunConfig& c) {
  v("scenegen", c.scenegen);
  v("detector", c.detector);
  v("adapt", c.adapt);
  v("eval", c.eval);
  v("io", c.io);
  v("seed", c.seed);
}

namespace detail {

struct ProbeVisitor {
  template <class T> void operator()(const char*, T&) {}
};

template <class T>
concept HasFields = requires(ProbeVisitor& v, T& t) { fields(v, t); };

struct ToJson {
  nlohmann::json j = nlohmann::json::object();

  template <class T> void operator()(const char* key, T& value) {
    if constexpr (HasFields<T>) {
      ToJson sub;
      fields(sub, value);
      j[key] = std::move(sub.j);
    } else {
      j[key] = value;
    }
  }
};

struct FromJson {
  const nlohmann::json& j;
  std::string prefix;
  std::set<std::string> seen;

  template <class T> void operator()(const char* key, T& value) {
    seen.insert(key);
    const auto it = j.find(key);
    if (it == j.end()) return;  // keep the default
    const std::string path = prefix + key;
    if constexpr (HasFields<T>) {
      if (!it->is_object()) throw ConfigError("config key '" + path + "' must be an object");
      FromJson sub{*it, path + ".", {}};
      fields(sub, value);
      sub.reject_unknown();
    } else {
      try {
        check_kind(*it, value);
        value = it->template get<T>();
      } catch (const ConfigError& e) {
        throw ConfigError("config key '" + path + "': " + e.what());
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config key '" + path + "' has the wrong type: " + e.what());
      }
    }
  }

  void reject_unknown() const {
    for (const auto& [k, _] : j.items())
      if (!seen.count(k)) throw ConfigError("unknown config key '" + prefix + k + "'");
  }

 private:
  // nlohmann converts numbers and bools into each other silently; refuse that.
  template <class T> static void check_kind(const nlohmann::json& v, const T&) {
    auto fail = [&](const char* want) {
      throw ConfigError(std::string("expected ") + want + ", got " + v.type_name());
    };
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail("a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail("an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.is_number_integer() && !v.is_number_unsigned()) fail("a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail("a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail("a string");
    } else {
      if (!v.is_array()) fail("an array");
      for (const auto& e : v) check_kind(e, typename T::value_type{});
    }
  }
};

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& cfg) {
  detail::ToJson v;
  fields(v, const_cast<RunConfig&>(cfg));
  return v.j;
}

/// Strict parse: unknown keys and type mismatches raise ConfigError naming the key.
inline RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  RunConfig cfg;
  detail::FromJson v{j, "", {}};
  fields(v, cfg);
  v.reject_unknown();
  cfg.adapt.seed = cfg.seed;
  return cfg;
}

/// Applies one "dotted.key=value" override to a config document. The value is
/// parsed as JSON when possible and taken as a bare string otherwise.
inline void apply_override(nlohmann::json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override '" + std::string(assignment) + "' must have the form key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  auto value = nlohmann::json::parse(text, nullptr, false);
  *node = value.is_discarded() ? nlohmann::json(text) : std::move(value);
}

/// Defaults, then the optional file, then overrides in order. Validated.
inline RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  nlohmann::json doc = to_json(RunConfig{});
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file '" + path + "'");
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    config_from_json(file);  // reject unknown keys with their file path
    doc.merge_patch(file);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  auto cfg = config_from_json(doc);
  cfg.validate();
  return cfg;
}

// --- stage hashes --------------------------------------------------------------
//
// Each stage hash covers exactly the settings its artifacts depend on, so a
// downstream-only change (say, the MC pass count) does not invalidate
// upstream artifacts. adapt.uncertainty selects an artifact variant instead
// of entering a hash. Report outputs depend on the whole config.

enum class Stage { Data, Source, Pseudo, Adapt, Report };

inline const char* to_string(Stage s) noexcept {
  switch (s) {
    case Stage::Data: return "gen-data";
    case Stage::Source: return "train-source";
    case Stage::Pseudo: return "pseudo-iter";
    case Stage::Adapt: return "adapt";
    case Stage::Report: return "report";
  }
  return "?";
}

/// The config as embedded in artifacts: everything except io, which only
/// says where files go.
inline nlohmann::json artifact_config(const RunConfig& cfg) {
  auto j = to_json(cfg);
  j.erase("io");
  return j;
}

inline nlohmann::json stage_inputs(const RunConfig& cfg, Stage stage) {
  const auto full = artifact_config(cfg);
  if (stage == Stage::Report) return full;
  nlohmann::json in = nlohmann::json::object();
  in["seed"] = full["seed"];
  in["scenegen"] = full["scenegen"];
  if (stage == Stage::Data) return in;
  in["detector"] = full["detector"];
  const auto& a = full["adapt"];
  auto take = [&](std::initializer_list<const char*> keys) {
    for (const char* k : keys) in["adapt"][k] = a[k];
  };
  take({"source_epochs", "batch_size", "source_lr", "object_scale_min", "object_scale_max", "student_dropout"});
  if (stage == Stage::Source) return in;
  take({"delta", "iterations", "epochs", "lr"});
  if (stage == Stage::Pseudo) return in;
  take({"mc_passes", "alpha", "per_epoch_ema", "weight_teacher_loss", "variance_over_probabilities"});
  return in;
}

inline std::string stage_hash(const RunConfig& cfg, Stage stage) {
  return nnkit::hex64(nnkit::fnv1a64(stage_inputs(cfg, stage).dump()));
}

inline std::string config_hash(const RunConfig& cfg) {
  return nnkit::hex64(nnkit::fnv1a64(artifact_config(cfg).dump()));
}

}  // namespace uamt
