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

// Raster masks to polygon annotations.
//
// Contours are traced with marching squares over the pixel-center lattice
// (the mask is padded with background, so contours always close), then each
// ring is simplified with Douglas-Peucker and cleaned of spikes and
// near-collinear vertices. Rings that enclose foreground become outer
// instances; rings that enclose background become inner instances.
// Diagonal saddles keep foreground 4-connected.

#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "polyrefine/errors.hpp"
#include "polyrefine/geometry.hpp"
#include "polyrefine/pipeline/coco.hpp"

namespace polyrefine {

struct ConvertOptions {
  double dp_tolerance = 5.0;
  double angle_low = 10.0;
  double angle_high = 160.0;
};

// Contour rings in pixel coordinates (vertices on half-pixel lattice), in
// tracing orientation: outer boundaries have negative signed area, hole
// boundaries positive.
inline std::vector<Polygon> trace_contours(const Mask& mask) {
  const int h = mask.height, w = mask.width;
  auto val = [&](int x, int y) -> int {
    return (x < 0 || y < 0 || x >= w || y >= h) ? 0 : mask.at(y, x);
  };
  // Crossing points are keyed by doubled sample-lattice coordinates.
  using Key = std::pair<int, int>;
  std::map<Key, Key> next;
  for (int cy = -1; cy < h; ++cy) {
    for (int cx = -1; cx < w; ++cx) {
      // Corners TL, TR, BR, BL; edge i joins corner i to corner i+1.
      const int c[4] = {val(cx, cy), val(cx + 1, cy), val(cx + 1, cy + 1), val(cx, cy + 1)};
      const int code = c[0] | (c[1] << 1) | (c[2] << 2) | (c[3] << 3);
      if (code == 0 || code == 15) continue;
      const Key pts[4] = {{2 * cx + 1, 2 * cy},
                          {2 * cx + 2, 2 * cy + 1},
                          {2 * cx + 1, 2 * cy + 2},
                          {2 * cx, 2 * cy + 1}};
      for (int e = 0; e < 4; ++e) {
        if (!(c[e] == 0 && c[(e + 1) % 4] == 1)) continue;  // entry crossing
        for (int k = 1; k <= 4; ++k) {
          const int f = (e + k) % 4;
          if (c[f] == 1 && c[(f + 1) % 4] == 0) {  // next exit crossing
            next[pts[e]] = pts[f];
            break;
          }
        }
      }
    }
  }
  std::vector<Polygon> rings;
  while (!next.empty()) {
    const Key start = next.begin()->first;
    Polygon ring;
    Key cur = start;
    while (true) {
      const auto it = next.find(cur);
      if (it == next.end()) throw Error("trace_contours: open contour");
      ring.vertices.push_back({0.5 * it->first.first + 0.5, 0.5 * it->first.second + 0.5});
      const Key nxt = it->second;
      next.erase(it);
      if (nxt == start) break;
      cur = nxt;
    }
    rings.push_back(std::move(ring));
  }
  return rings;
}

struct ConvertStats {
  std::size_t traced = 0;
  std::size_t dropped = 0;  // degenerate or invalid after simplification
};

// One mask to flat instances (outer and inner rings as separate instances).
inline std::vector<BuildingInstance> convert_mask(const Mask& mask, const ConvertOptions& opt,
                                                  ConvertStats* stats = nullptr) {
  std::vector<BuildingInstance> out;
  for (const Polygon& raw : trace_contours(mask)) {
    if (stats) ++stats->traced;
    const bool hole = shoelace_area(raw) > 0.0;
    const RingRole role = hole ? RingRole::hole : RingRole::outer;
    try {
      Polygon ring = canonicalize(raw, role);
      ring = douglas_peucker(ring, opt.dp_tolerance);
      ring = merge_near_straight_edges(ring, opt.angle_low, opt.angle_high);
      if (!passes_validity(ring)) throw DegenerateOutputError("ring fails validity");
      out.push_back({canonicalize(ring, role), {},
                     hole ? InstanceClass::inner : InstanceClass::outer});
    } catch (const DegenerateOutputError&) {
      if (stats) ++stats->dropped;
    } catch (const InvalidPolygonError&) {
      if (stats) ++stats->dropped;
    }
  }
  return out;
}

struct MaskImage {
  int image_id = 0;
  std::string file_name;
  Mask mask;
};

inline CocoDataset convert_masks(const std::vector<MaskImage>& masks, const ConvertOptions& opt,
                                 ConvertStats* stats = nullptr) {
  CocoDataset d;
  int next_id = 1;
  for (const auto& m : masks) {
    d.images.push_back({m.image_id, m.file_name, m.mask.height, m.mask.width});
    for (const auto& inst : convert_mask(m.mask, opt, stats)) {
      const Mask r = rasterize_ring(inst.outer, m.mask.height, m.mask.width);
      d.annotations.push_back({next_id++, m.image_id, category_of(inst.class_tag), inst.outer,
                               double(r.count()), false});
    }
  }
  return d;
}

}  // namespace polyrefine
