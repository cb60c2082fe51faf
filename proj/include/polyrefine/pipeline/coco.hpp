/* Copyright 2026 The polyrefine Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// COCO ground-truth and results documents.
//
// Ground truth:
//   {"images": [{"id", "file_name", "height", "width"}],
//    "annotations": [{"id", "image_id", "category_id",
//                     "segmentation": [[x0, y0, x1, y1, ...]],
//                     "area", "bbox": [x, y, w, h], "iscrowd"}],
//    "categories": [{"id", "name"}]}
// Results:
//   [{"image_id", "category_id", "score", "segmentation": [[...]]}]
//
// Each annotation holds exactly one ring. Category 1 is a building outline,
// category 2 an inner ring (courtyard) stored as its own instance. `area`
// is the pixel count of the ring's raster.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "polyrefine/errors.hpp"
#include "polyrefine/geometry.hpp"
#include "polyrefine/metrics.hpp"
#include "polyrefine/pipeline/io.hpp"
#include "polyrefine/pipeline/scene.hpp"

namespace polyrefine {

using nlohmann::json;

inline constexpr int kOuterCategory = 1;
inline constexpr int kInnerCategory = 2;

inline int category_of(InstanceClass c) {
  return c == InstanceClass::inner ? kInnerCategory : kOuterCategory;
}

struct CocoImage {
  int id = 0;
  std::string file_name;
  int height = 0;
  int width = 0;
  friend bool operator==(const CocoImage&, const CocoImage&) = default;
};

struct CocoAnnotation {
  int id = 0;
  int image_id = 0;
  int category_id = kOuterCategory;
  Polygon polygon;
  double area = 0.0;
  bool iscrowd = false;
  friend bool operator==(const CocoAnnotation&, const CocoAnnotation&) = default;
};

struct CocoDataset {
  std::vector<CocoImage> images;
  std::vector<CocoAnnotation> annotations;
  friend bool operator==(const CocoDataset&, const CocoDataset&) = default;

  std::map<int, ImageSize> sizes() const {
    std::map<int, ImageSize> out;
    for (const auto& im : images) out[im.id] = {im.height, im.width};
    return out;
  }

  std::vector<GroundTruth> ground_truth() const {
    std::vector<GroundTruth> out;
    for (const auto& a : annotations) {
      out.push_back({a.image_id, a.category_id, a.polygon, {}, a.iscrowd});
    }
    return out;
  }

  // Annotations of one image as flat instances.
  std::vector<BuildingInstance> instances_of(int image_id) const {
    std::vector<BuildingInstance> out;
    for (const auto& a : annotations) {
      if (a.image_id != image_id) continue;
      out.push_back({a.polygon, {},
                     a.category_id == kInnerCategory ? InstanceClass::inner : InstanceClass::outer});
    }
    return out;
  }
};

inline std::string image_file_name(int image_id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d.png", image_id);
  return buf;
}

inline CocoDataset to_coco(const std::vector<SceneAnnotation>& scenes) {
  CocoDataset d;
  int next_id = 1;
  for (const auto& s : scenes) {
    d.images.push_back({s.image_id, image_file_name(s.image_id), s.height(), s.width()});
    for (const auto& inst : s.instances) {
      const Mask m = rasterize_ring(inst.outer, s.height(), s.width());
      d.annotations.push_back({next_id++, s.image_id, category_of(inst.class_tag), inst.outer,
                               double(m.count()), false});
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Serialization

inline json polygon_json(const Polygon& p) { return json::array({to_flat(p)}); }

inline json to_json(const CocoDataset& d) {
  json j;
  j["images"] = json::array();
  for (const auto& im : d.images) {
    j["images"].push_back(
        {{"id", im.id}, {"file_name", im.file_name}, {"height", im.height}, {"width", im.width}});
  }
  j["annotations"] = json::array();
  for (const auto& a : d.annotations) {
    const CornerBox b = bounds(a.polygon);
    j["annotations"].push_back({{"id", a.id},
                                {"image_id", a.image_id},
                                {"category_id", a.category_id},
                                {"segmentation", polygon_json(a.polygon)},
                                {"area", a.area},
                                {"bbox", {b.x_min, b.y_min, b.width(), b.height()}},
                                {"iscrowd", a.iscrowd ? 1 : 0}});
  }
  j["categories"] = json::array({{{"id", kOuterCategory}, {"name", "building"}},
                                 {{"id", kInnerCategory}, {"name", "building_inner"}}});
  return j;
}

namespace detail {

inline const json& field(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw ParseError(path, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path + "." + key, "missing field");
  return *it;
}

inline int int_field(const json& obj, const std::string& key, const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_number_integer()) throw ParseError(path + "." + key, "expected an integer");
  return v.get<int>();
}

inline double number_field(const json& obj, const std::string& key, const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_number()) throw ParseError(path + "." + key, "expected a number");
  return v.get<double>();
}

inline const json& array_field(const json& obj, const std::string& key, const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_array()) throw ParseError(path + "." + key, "expected an array");
  return v;
}

// A segmentation holding exactly one flat ring.
inline Polygon parse_ring(const json& seg, const std::string& path) {
  if (!seg.is_array()) throw ParseError(path, "expected a list of polygons");
  if (seg.size() != 1) {
    throw ParseError(path, "expected exactly one ring, found " + std::to_string(seg.size()));
  }
  const json& ring = seg[0];
  const std::string rp = path + "[0]";
  if (!ring.is_array()) throw ParseError(rp, "expected a coordinate list");
  std::vector<double> coords;
  for (std::size_t i = 0; i < ring.size(); ++i) {
    if (!ring[i].is_number()) {
      throw ParseError(rp + "[" + std::to_string(i) + "]", "expected a number");
    }
    coords.push_back(ring[i].get<double>());
  }
  if (coords.size() % 2 != 0) {
    throw ParseError(rp, "odd coordinate count " + std::to_string(coords.size()));
  }
  if (coords.size() < 6) throw ParseError(rp, "ring needs at least 3 vertices");
  return from_flat(coords);
}

inline json parse_document(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source, std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace detail

inline CocoDataset coco_from_json(const json& j) {
  CocoDataset d;
  const json& images = detail::array_field(j, "images", "");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string p = "images[" + std::to_string(i) + "]";
    CocoImage im;
    im.id = detail::int_field(images[i], "id", p);
    const json& fname = detail::field(images[i], "file_name", p);
    if (!fname.is_string()) throw ParseError(p + ".file_name", "expected a string");
    im.file_name = fname.get<std::string>();
    im.height = detail::int_field(images[i], "height", p);
    im.width = detail::int_field(images[i], "width", p);
    d.images.push_back(std::move(im));
  }
  const json& anns = detail::array_field(j, "annotations", "");
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string p = "annotations[" + std::to_string(i) + "]";
    CocoAnnotation a;
    a.id = detail::int_field(anns[i], "id", p);
    a.image_id = detail::int_field(anns[i], "image_id", p);
    a.category_id = detail::int_field(anns[i], "category_id", p);
    a.polygon = detail::parse_ring(detail::field(anns[i], "segmentation", p), p + ".segmentation");
    a.area = detail::number_field(anns[i], "area", p);
    const auto crowd = anns[i].find("iscrowd");
    a.iscrowd = crowd != anns[i].end() && crowd->is_number_integer() && crowd->get<int>() != 0;
    d.annotations.push_back(std::move(a));
  }
  return d;
}

namespace detail {

// Schema errors of a file carry the file name ahead of the JSON path.
template <typename F>
auto from_file(const fs::path& path, F&& parse) {
  const json j = parse_document(read_text(path), path.string());
  try {
    return parse(j);
  } catch (const ParseError& e) {
    throw ParseError(path.string(), e.what());
  }
}

}  // namespace detail

inline CocoDataset coco_read(const fs::path& path) {
  return detail::from_file(path, [](const json& j) { return coco_from_json(j); });
}

inline void coco_write(const fs::path& path, const CocoDataset& d) {
  atomic_write_text(path, to_json(d).dump() + "\n");
}

// ---------------------------------------------------------------------------
// Results

inline json results_to_json(const std::vector<Detection>& dets) {
  json j = json::array();
  for (const auto& d : dets) {
    j.push_back({{"image_id", d.image_id},
                 {"category_id", d.category_id},
                 {"score", d.score},
                 {"segmentation", polygon_json(d.polygon)}});
  }
  return j;
}

inline std::vector<Detection> results_from_json(const json& j) {
  if (!j.is_array()) throw ParseError("", "results must be an array");
  std::vector<Detection> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = "[" + std::to_string(i) + "]";
    Detection d;
    d.image_id = detail::int_field(j[i], "image_id", p);
    d.category_id = detail::int_field(j[i], "category_id", p);
    d.score = detail::number_field(j[i], "score", p);
    d.polygon = detail::parse_ring(detail::field(j[i], "segmentation", p), p + ".segmentation");
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<Detection> results_read(const fs::path& path) {
  return detail::from_file(path, [](const json& j) { return results_from_json(j); });
}

inline void results_write(const fs::path& path, const std::vector<Detection>& dets) {
  atomic_write_text(path, results_to_json(dets).dump() + "\n");
}

// Ground truth re-expressed as score-1 results.
inline std::vector<Detection> ground_truth_as_results(const CocoDataset& d) {
  std::vector<Detection> out;
  for (const auto& a : d.annotations) out.push_back({a.image_id, a.category_id, a.polygon, {}, 1.0});
  return out;
}

}  // namespace polyrefine
