// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uamt/errors.hpp"
#include "uamt/scenegen/scene.hpp"

namespace uamt::scenegen {

// One scene per line:
//   {"scene_id":..,"domain_tag":..,"points":[[x,y,i],..],"gt_boxes":[[cx,cy,w,l,o],..]}
// Reals are written with 17 significant digits so they read back exactly.

inline void append_real(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

inline void append_string(std::string& out, const std::string& s) { out += nlohmann::json(s).dump(); }

inline void append_box(std::string& out, const BBox& b) {
  out += '[';
  append_real(out, b.cx);
  out += ',';
  append_real(out, b.cy);
  out += ',';
  append_real(out, b.w);
  out += ',';
  append_real(out, b.l);
  out += ',';
  out += std::to_string(b.orient);
  out += ']';
}

/// Serializes one scene. `confidences`, when given, adds a parallel
/// "confidence" array (pseudo-label files).
inline std::string scene_to_line(const PointScene& s, bool withhold_labels, const std::vector<double>* confidences = nullptr,
                                 bool include_points = true) {
  std::string out = "{\"scene_id\":";
  append_string(out, s.scene_id);
  out += ",\"domain_tag\":";
  append_string(out, s.domain_tag);
  out += ",\"points\":[";
  if (include_points) {
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      if (i) out += ',';
      out += '[';
      append_real(out, s.points[i].x);
      out += ',';
      append_real(out, s.points[i].y);
      out += ',';
      append_real(out, s.points[i].intensity);
      out += ']';
    }
  }
  out += "],\"gt_boxes\":[";
  if (!withhold_labels) {
    for (std::size_t i = 0; i < s.gt_boxes.size(); ++i) {
      if (i) out += ',';
      append_box(out, s.gt_boxes[i]);
    }
  }
  out += ']';
  if (confidences != nullptr) {
    out += ",\"confidence\":[";
    for (std::size_t i = 0; i < confidences->size(); ++i) {
      if (i) out += ',';
      append_real(out, (*confidences)[i]);
    }
    out += ']';
  }
  out += '}';
  return out;
}

inline BBox box_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 5) throw DataError("box must be [cx, cy, w, l, orient]");
  BBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>(), j[4].get<int>()};
  if (!b.valid()) throw DataError("invalid box");
  return b;
}

/// Parses one record; `confidences` receives the optional confidence array.
inline PointScene scene_from_line(const std::string& line, std::vector<double>* confidences = nullptr) {
  const auto j = nlohmann::json::parse(line);
  if (!j.is_object()) throw DataError("record is not an object");
  for (const char* key : {"scene_id", "domain_tag", "points", "gt_boxes"})
    if (!j.contains(key)) throw DataError(std::string("missing key '") + key + "'");
  PointScene s;
  s.scene_id = j.at("scene_id").get<std::string>();
  s.domain_tag = j.at("domain_tag").get<std::string>();
  for (const auto& p : j.at("points")) {
    if (!p.is_array() || p.size() != 3) throw DataError("point must be [x, y, intensity]");
    s.points.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
  }
  for (const auto& b : j.at("gt_boxes")) s.gt_boxes.push_back(box_from_json(b));
  if (confidences != nullptr) {
    confidences->clear();
    if (j.contains("confidence"))
      for (const auto& c : j.at("confidence")) confidences->push_back(c.get<double>());
    if (confidences->size() != s.gt_boxes.size()) throw DataError("confidence count does not match box count");
  }
  return s;
}

inline std::string dataset_to_string(const Dataset& scenes, bool withhold_labels) {
  std::string out;
  for (const auto& s : scenes) {
    out += scene_to_line(s, withhold_labels);
    out += '\n';
  }
  return out;
}

inline void write_dataset(const Dataset& scenes, const std::string& path, bool withhold_labels) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write dataset '" + path + "'");
  f << dataset_to_string(scenes, withhold_labels);
  if (!f) throw DataError("write failed for '" + path + "'");
}

/// Throws DataError("<path>:<line>: ...") on the first malformed record.
inline Dataset read_dataset_stream(std::istream& in, const std::string& origin) {
  Dataset out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(scene_from_line(line));
    } catch (const std::exception& e) {
      throw DataError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open dataset '" + path + "'");
  return read_dataset_stream(f, path);
}

}  // namespace uamt::scenegen
