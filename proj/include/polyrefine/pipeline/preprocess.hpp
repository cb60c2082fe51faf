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

// Training targets from annotations: each ring is canonicalized, resampled
// to M labeled vertices, normalized by the image size and given the
// bounding box of the ring.

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "polyrefine/errors.hpp"
#include "polyrefine/geometry.hpp"
#include "polyrefine/image.hpp"
#include "polyrefine/matching.hpp"
#include "polyrefine/pipeline/coco.hpp"

namespace polyrefine {

// Zero-based class index: inner rings map to class 1 when the model has a
// second class, otherwise everything is class 0.
inline int class_index(InstanceClass c, int num_classes) {
  return (c == InstanceClass::inner && num_classes > 1) ? 1 : 0;
}

inline InstanceTarget make_target(const BuildingInstance& inst, int width, int height,
                                  std::size_t m, int num_classes) {
  const RingRole role = inst.class_tag == InstanceClass::inner ? RingRole::hole : RingRole::outer;
  LabeledPolygon lp = resample_uniform(inst.outer, m, role);
  for (auto& p : lp.vertices) p = {p.x / width, p.y / height};
  InstanceTarget t;
  t.box = BoundingBox::from_corners(bounds(inst.outer), width, height);
  t.category = class_index(inst.class_tag, num_classes);
  t.polygon = std::move(lp);
  return t;
}

// Targets for one image. Every instance whose corner count exceeds `m` is
// listed in the CapacityError.
inline std::vector<InstanceTarget> preprocess_gt(std::span<const BuildingInstance> instances,
                                                 int width, int height, std::size_t m,
                                                 int num_classes = 1, int image_id = 0) {
  std::vector<InstanceTarget> out;
  std::string offenders;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const std::size_t corners = instances[i].outer.size();
    if (corners > m) {
      offenders += (offenders.empty() ? "" : ", ") + std::string("image ") +
                   std::to_string(image_id) + " instance " + std::to_string(i) + " (" +
                   std::to_string(corners) + " corners)";
      continue;
    }
    out.push_back(make_target(instances[i], width, height, m, num_classes));
  }
  if (!offenders.empty()) {
    throw CapacityError("preprocess_gt: more corners than M=" + std::to_string(m) + ": " +
                        offenders);
  }
  return out;
}

// Targets for a whole dataset, keyed by image id.
inline std::map<int, std::vector<InstanceTarget>> preprocess_gt(const CocoDataset& d,
                                                                std::size_t m,
                                                                int num_classes = 1) {
  std::map<int, std::vector<InstanceTarget>> out;
  std::string offenders;
  for (const auto& im : d.images) {
    const auto inst = d.instances_of(im.id);
    try {
      out[im.id] = preprocess_gt(inst, im.width, im.height, m, num_classes, im.id);
    } catch (const CapacityError& e) {
      offenders += (offenders.empty() ? "" : "; ") + std::string(e.what());
    }
  }
  if (!offenders.empty()) throw CapacityError(offenders);
  return out;
}

// ---------------------------------------------------------------------------
// Flip augmentation

inline Polygon flip_polygon(const Polygon& p, int width, int height, bool horizontal,
                            bool vertical) {
  Polygon out = p;
  for (auto& v : out.vertices) {
    if (horizontal) v.x = width - v.x;
    if (vertical) v.y = height - v.y;
  }
  return out;
}

inline std::vector<BuildingInstance> flip_instances(std::span<const BuildingInstance> in,
                                                    int width, int height, bool horizontal,
                                                    bool vertical) {
  std::vector<BuildingInstance> out;
  for (const auto& inst : in) {
    BuildingInstance f;
    f.class_tag = inst.class_tag;
    const RingRole role =
        inst.class_tag == InstanceClass::inner ? RingRole::hole : RingRole::outer;
    f.outer = canonicalize(flip_polygon(inst.outer, width, height, horizontal, vertical), role);
    for (const auto& h : inst.holes) {
      f.holes.push_back(
          canonicalize(flip_polygon(h, width, height, horizontal, vertical), RingRole::hole));
    }
    out.push_back(std::move(f));
  }
  return out;
}

inline Image flip_image(const Image& img, bool horizontal, bool vertical) {
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int sy = vertical ? img.height - 1 - y : y;
      const int sx = horizontal ? img.width - 1 - x : x;
      const auto* s = img.pixel(sy, sx);
      auto* d = out.pixel(y, x);
      d[0] = s[0], d[1] = s[1], d[2] = s[2];
    }
  }
  return out;
}

}  // namespace polyrefine
