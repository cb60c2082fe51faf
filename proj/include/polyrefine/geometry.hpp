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

// Polygon rings, boxes, masks and the non-learned geometric procedures used
// around the detector: ring canonicalization, fixed-count resampling with
// corner labels, simplification, validity filtering, hole grouping and
// rasterization.
//
// Coordinates are image coordinates (x right, y down). "Counter-clockwise"
// means positive shoelace area in these coordinates, so the ring
// (0,0) -> (1,0) -> (1,1) -> (0,1) is counter-clockwise.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "polyrefine/errors.hpp"

namespace polyrefine {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
  friend Point operator*(double s, Point p) { return {s * p.x, s * p.y}; }
  friend bool operator==(Point a, Point b) { return a.x == b.x && a.y == b.y; }
};

inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point a) { return std::hypot(a.x, a.y); }
inline double distance(Point a, Point b) { return norm(a - b); }

// Distance from `p` to the closed segment [a, b].
inline double point_segment_distance(Point p, Point a, Point b) {
  const Point ab = b - a;
  const double len2 = dot(ab, ab);
  if (len2 == 0.0) return distance(p, a);
  const double t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
  return distance(p, a + t * ab);
}

// Closed ring without a repeated closing vertex.
struct Polygon {
  std::vector<Point> vertices;

  Polygon() = default;
  explicit Polygon(std::vector<Point> v) : vertices(std::move(v)) {}

  std::size_t size() const { return vertices.size(); }
  const Point& operator[](std::size_t i) const { return vertices[i]; }
  Point& operator[](std::size_t i) { return vertices[i]; }
  friend bool operator==(const Polygon&, const Polygon&) = default;
};

// Fixed-count ring whose labels mark reference corners (1) and filler
// samples (0).
struct LabeledPolygon {
  std::vector<Point> vertices;
  std::vector<int> labels;

  std::size_t size() const { return vertices.size(); }
};

enum class RingRole { outer, hole };

// Absolute axis-aligned box in pixels.
struct CornerBox {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
};

// Normalized (cx, cy, w, h) box; coordinates are fractions of the image.
struct BoundingBox {
  double cx = 0.5, cy = 0.5, w = 1.0, h = 1.0;

  CornerBox to_corners(double image_w = 1.0, double image_h = 1.0) const {
    return {(cx - 0.5 * w) * image_w, (cy - 0.5 * h) * image_h,
            (cx + 0.5 * w) * image_w, (cy + 0.5 * h) * image_h};
  }

  static BoundingBox from_corners(const CornerBox& b, double image_w = 1.0,
                                  double image_h = 1.0) {
    return {0.5 * (b.x_min + b.x_max) / image_w,
            0.5 * (b.y_min + b.y_max) / image_h, b.width() / image_w,
            b.height() / image_h};
  }

  bool valid() const {
    return cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0 && w > 0.0 &&
           h > 0.0;
  }
};

enum class InstanceClass { outer, inner };

struct BuildingInstance {
  Polygon outer;
  std::vector<Polygon> holes;
  InstanceClass class_tag = InstanceClass::outer;
};

// Binary raster, row-major, values in {0, 1}.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), data(std::size_t(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return data[std::size_t(y) * width + x]; }
  std::uint8_t at(int y, int x) const {
    return data[std::size_t(y) * width + x];
  }
  std::size_t count() const {
    return std::size_t(std::count(data.begin(), data.end(), std::uint8_t{1}));
  }
  bool empty() const { return count() == 0; }
  friend bool operator==(const Mask&, const Mask&) = default;
};

// ---------------------------------------------------------------------------
// Basic measures

inline void require_ring(const Polygon& poly, const char* op) {
  if (poly.size() < 3) {
    throw InvalidPolygonError(std::string(op) + ": ring has " +
                              std::to_string(poly.size()) +
                              " vertices, need at least 3");
  }
}

// Signed shoelace area; positive for counter-clockwise rings.
inline double shoelace_area(const Polygon& poly) {
  require_ring(poly, "shoelace_area");
  const std::size_t n = poly.size();
  double twice = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    twice += cross(poly[i], poly[(i + 1) % n]);
  }
  return 0.5 * twice;
}

inline double perimeter(const Polygon& poly) {
  double total = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    total += distance(poly[i], poly[(i + 1) % poly.size()]);
  }
  return total;
}

// True when the ring has zero enclosed area (collinear or collapsed).
inline bool is_degenerate(const Polygon& poly) {
  if (poly.size() < 3) return true;
  const double scale = std::max(perimeter(poly), 1.0);
  return std::abs(shoelace_area(poly)) <= 1e-12 * scale * scale;
}

// At least three vertices, no two consecutive vertices equal, nonzero area.
inline bool is_valid_ring(const Polygon& poly) {
  if (poly.size() < 3) return false;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    if (poly[i] == poly[(i + 1) % poly.size()]) return false;
  }
  return !is_degenerate(poly);
}

inline Point area_centroid(const Polygon& poly) {
  const double a = shoelace_area(poly);
  if (a == 0.0) {
    Point mean;
    for (const auto& p : poly.vertices) mean = mean + p;
    return (1.0 / double(poly.size())) * mean;
  }
  double cx = 0.0, cy = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point p = poly[i], q = poly[(i + 1) % poly.size()];
    const double c = cross(p, q);
    cx += (p.x + q.x) * c;
    cy += (p.y + q.y) * c;
  }
  return {cx / (6.0 * a), cy / (6.0 * a)};
}

// Crossing-number test; matches the membership rule used by `rasterize`.
inline bool point_in_polygon(Point p, const Polygon& poly) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point a = poly[i], b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_int = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_int) inside = !inside;
    }
  }
  return inside;
}

inline CornerBox bounds(const Polygon& poly) {
  CornerBox b{std::numeric_limits<double>::infinity(),
              std::numeric_limits<double>::infinity(),
              -std::numeric_limits<double>::infinity(),
              -std::numeric_limits<double>::infinity()};
  for (const auto& p : poly.vertices) {
    b.x_min = std::min(b.x_min, p.x);
    b.y_min = std::min(b.y_min, p.y);
    b.x_max = std::max(b.x_max, p.x);
    b.y_max = std::max(b.y_max, p.y);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Canonical form

// Orients the ring (counter-clockwise for outer rings, clockwise for holes)
// and rotates it so that it starts at the topmost vertex, leftmost on ties.
inline Polygon canonicalize(Polygon poly, RingRole role = RingRole::outer) {
  require_ring(poly, "canonicalize");
  const double area = shoelace_area(poly);
  const bool want_positive = role == RingRole::outer;
  if ((area > 0.0) != want_positive && area != 0.0) {
    std::reverse(poly.vertices.begin(), poly.vertices.end());
  }
  const auto start = std::min_element(
      poly.vertices.begin(), poly.vertices.end(), [](Point a, Point b) {
        return a.y < b.y || (a.y == b.y && a.x < b.x);
      });
  std::rotate(poly.vertices.begin(), start, poly.vertices.end());
  return poly;
}

// ---------------------------------------------------------------------------
// Contour sampling

// `count` points at arc-length spacing perimeter/count along the closed
// ring, starting at vertex 0 and following vertex order.
inline std::vector<Point> sample_ring(const Polygon& ring, std::size_t count) {
  std::vector<Point> out;
  out.reserve(count);
  if (count == 0) return out;
  const double total = perimeter(ring);
  const double step = total / double(count);
  const std::size_t n = ring.size();
  std::size_t edge = 0;
  double edge_start = 0.0;  // arc length at the start of `edge`
  for (std::size_t i = 0; i < count; ++i) {
    const double s = step * double(i);
    double len = distance(ring[edge], ring[(edge + 1) % n]);
    while (edge + 1 < n && s >= edge_start + len) {
      edge_start += len;
      ++edge;
      len = distance(ring[edge], ring[(edge + 1) % n]);
    }
    const double t = len > 0.0 ? std::clamp((s - edge_start) / len, 0.0, 1.0)
                               : 0.0;
    const Point a = ring[edge], b = ring[(edge + 1) % n];
    out.push_back(a + t * (b - a));
  }
  return out;
}

// Uniform contour samples of a box, starting at its top-left corner and
// walking top-left -> top-right -> bottom-right -> bottom-left. Output is in
// the box's own (normalized) units.
inline Polygon sample_box_contour(const BoundingBox& box, std::size_t count) {
  const CornerBox c = box.to_corners();
  const Polygon ring({{c.x_min, c.y_min},
                      {c.x_max, c.y_min},
                      {c.x_max, c.y_max},
                      {c.x_min, c.y_max}});
  return Polygon(sample_ring(ring, count));
}

// Resamples a ring to exactly `count` vertices: uniform arc-length samples
// anchored at the canonical start vertex, then every reference corner
// replaces its nearest sample along the contour. Corners keep their cyclic
// order; when two corners compete for one sample the later corner moves to
// the next free sample. Equidistant candidates resolve to the earlier sample.
inline LabeledPolygon resample_uniform(const Polygon& input, std::size_t count,
                                       RingRole role = RingRole::outer) {
  const Polygon ring = canonicalize(input, role);
  const std::size_t corners = ring.size();
  if (count < corners) {
    throw CapacityError("resample_uniform: " + std::to_string(corners) +
                        " corners exceed vertex budget " +
                        std::to_string(count));
  }
  const double total = perimeter(ring);
  const double step = total / double(count);

  std::vector<std::size_t> slot(corners);
  double arc = 0.0;
  for (std::size_t k = 0; k < corners; ++k) {
    if (k > 0) arc += distance(ring[k - 1], ring[k]);
    const double q = arc / step;
    const double lower = std::floor(q);
    // Snap values within rounding noise of an integer onto it.
    const double frac = q - lower;
    std::size_t idx;
    if (std::abs(frac - 1.0) < 1e-9) {
      idx = std::size_t(lower) + 1;
    } else if (frac <= 0.5 + 1e-12) {
      idx = std::size_t(lower);
    } else {
      idx = std::size_t(lower) + 1;
    }
    slot[k] = idx;
  }
  slot[0] = 0;
  for (std::size_t k = 1; k < corners; ++k) {
    slot[k] = std::max(slot[k], slot[k - 1] + 1);
  }
  std::size_t upper = count - 1;
  for (std::size_t k = corners; k-- > 1;) {
    slot[k] = std::min(slot[k], upper);
    upper = slot[k] - 1;
  }

  LabeledPolygon out;
  out.vertices = sample_ring(ring, count);
  out.labels.assign(count, 0);
  for (std::size_t k = 0; k < corners; ++k) {
    out.vertices[slot[k]] = ring[k];
    out.labels[slot[k]] = 1;
  }
  return out;
}

// Vertices labeled as reference corners, in ring order.
inline Polygon corners_of(const LabeledPolygon& lp) {
  Polygon out;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (lp.labels[i] == 1) out.vertices.push_back(lp.vertices[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simplification

namespace detail {

inline void douglas_peucker_chain(const std::vector<Point>& pts,
                                  std::size_t first, std::size_t last,
                                  double tolerance, std::vector<bool>& keep) {
  if (last <= first + 1) return;
  double worst = -1.0;
  std::size_t worst_idx = first;
  for (std::size_t i = first + 1; i < last; ++i) {
    const double d = point_segment_distance(pts[i], pts[first], pts[last]);
    if (d > worst) {
      worst = d;
      worst_idx = i;
    }
  }
  // A deviation equal to the tolerance is kept.
  if (worst >= tolerance && worst > 0.0) {
    keep[worst_idx] = true;
    douglas_peucker_chain(pts, first, worst_idx, tolerance, keep);
    douglas_peucker_chain(pts, worst_idx, last, tolerance, keep);
  }
}

}  // namespace detail

// Closed-ring Douglas-Peucker. The ring is split at vertex 0 and the vertex
// farthest from it; both chains are simplified independently.
inline Polygon douglas_peucker(const Polygon& ring, double tolerance) {
  require_ring(ring, "douglas_peucker");
  const std::size_t n = ring.size();
  if (n == 3) return ring;  // nothing removable
  std::size_t far = 1;
  for (std::size_t i = 1; i < n; ++i) {
    if (distance(ring[i], ring[0]) > distance(ring[far], ring[0])) far = i;
  }
  std::vector<Point> pts(ring.vertices);
  pts.push_back(ring[0]);  // close the ring for the second chain
  std::vector<bool> keep(n + 1, false);
  keep[0] = keep[far] = keep[n] = true;
  detail::douglas_peucker_chain(pts, 0, far, tolerance, keep);
  detail::douglas_peucker_chain(pts, far, n, tolerance, keep);

  Polygon out;
  for (std::size_t i = 0; i < n; ++i) {
    if (keep[i]) out.vertices.push_back(ring[i]);
  }
  if (out.size() < 3) {
    throw DegenerateOutputError(
        "douglas_peucker: ring collapsed to " + std::to_string(out.size()) +
        " vertices at tolerance " + std::to_string(tolerance));
  }
  return out;
}

// Non-reflex angle in degrees, in [0, 180], between (prev - v) and
// (next - v). Returns NaN if either edge has zero length.
inline double vertex_angle_deg(Point prev, Point v, Point next) {
  const Point a = prev - v, b = next - v;
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  const double c = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

// Removes vertices whose angle is below `low_deg` (spikes) or above
// `high_deg` (nearly straight), sweeping until no vertex qualifies.
inline Polygon merge_near_straight_edges(const Polygon& ring, double low_deg,
                                         double high_deg) {
  require_ring(ring, "merge_near_straight_edges");
  std::vector<Point> pts = ring.vertices;
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < pts.size() && pts.size() >= 3;) {
      const std::size_t n = pts.size();
      const double theta =
          vertex_angle_deg(pts[(i + n - 1) % n], pts[i], pts[(i + 1) % n]);
      if (std::isnan(theta) || theta < low_deg || theta > high_deg) {
        pts.erase(pts.begin() + std::ptrdiff_t(i));
        changed = true;
      } else {
        ++i;
      }
    }
    if (pts.size() < 3) {
      throw DegenerateOutputError(
          "merge_near_straight_edges: ring collapsed to " +
          std::to_string(pts.size()) + " vertices");
    }
  }
  return Polygon(std::move(pts));
}

// ---------------------------------------------------------------------------
// Validity filter and hole grouping

inline constexpr std::size_t kMinValidVertices = 4;  // "more than 3"
inline constexpr double kMinValidArea = 10.0;        // px^2, strict

inline bool passes_validity(const Polygon& poly) {
  return poly.size() >= kMinValidVertices &&
         std::abs(shoelace_area(poly)) > kMinValidArea;
}

inline std::vector<Polygon> filter_valid(std::span<const Polygon> polys) {
  std::vector<Polygon> out;
  for (const auto& p : polys) {
    if (passes_validity(p)) out.push_back(p);
  }
  return out;
}

// Fraction of vertices required inside an outer ring to attach a hole.
inline constexpr double kHoleVertexFraction = 0.9;

// Index of the outer ring that receives `inner`, or -1.
inline int containing_outer(const Polygon& inner,
                            std::span<const Polygon> outers) {
  const Point c = area_centroid(inner);
  int best = -1;
  double best_area = std::numeric_limits<double>::infinity();
  for (std::size_t o = 0; o < outers.size(); ++o) {
    if (!point_in_polygon(c, outers[o])) continue;
    std::size_t inside = 0;
    for (const auto& v : inner.vertices) {
      if (point_in_polygon(v, outers[o])) ++inside;
    }
    if (double(inside) < kHoleVertexFraction * double(inner.size())) continue;
    const double a = std::abs(shoelace_area(outers[o]));
    if (a < best_area) {
      best_area = a;
      best = int(o);
    }
  }
  return best;
}

// One instance per outer ring, in input order. Each inner ring joins the
// smallest outer ring containing its centroid and at least 90% of its
// vertices; inner rings with no such outer are dropped.
inline std::vector<BuildingInstance> group_holes(
    std::span<const Polygon> outers, std::span<const Polygon> inners) {
  std::vector<BuildingInstance> out(outers.size());
  for (std::size_t o = 0; o < outers.size(); ++o) {
    out[o].outer = canonicalize(outers[o], RingRole::outer);
  }
  for (const auto& inner : inners) {
    const int o = containing_outer(inner, outers);
    if (o >= 0) out[std::size_t(o)].holes.push_back(
        canonicalize(inner, RingRole::hole));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rasterization

namespace detail {

// Sets (value = 1) or clears (value = 0) every pixel whose center lies
// inside `ring`, even-odd rule.
inline void fill_ring(Mask& mask, const Polygon& ring, std::uint8_t value) {
  const std::size_t n = ring.size();
  if (n < 3) return;
  const CornerBox b = bounds(ring);
  const int y0 = std::max(0, int(std::floor(b.y_min - 0.5)));
  const int y1 = std::min(mask.height - 1, int(std::ceil(b.y_max)));
  std::vector<double> xs;
  for (int y = y0; y <= y1; ++y) {
    const double yc = y + 0.5;
    xs.clear();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Point a = ring[i], c = ring[j];
      if ((a.y > yc) != (c.y > yc)) {
        xs.push_back(a.x + (yc - a.y) * (c.x - a.x) / (c.y - a.y));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // Pixel x is inside iff xs[k] <= x + 0.5 < xs[k + 1].
      const int xa = std::max(0, int(std::ceil(xs[k] - 0.5)));
      const int xb = std::min(mask.width - 1, int(std::ceil(xs[k + 1] - 0.5)) - 1);
      for (int x = xa; x <= xb; ++x) mask.at(y, x) = value;
    }
  }
}

}  // namespace detail

inline Mask rasterize_ring(const Polygon& ring, int height, int width) {
  Mask m(height, width);
  detail::fill_ring(m, ring, 1);
  return m;
}

// Filled outer ring minus filled hole rings, accumulated into `mask`.
inline void rasterize_into(Mask& mask, const BuildingInstance& inst) {
  Mask local(mask.height, mask.width);
  detail::fill_ring(local, inst.outer, 1);
  for (const auto& hole : inst.holes) detail::fill_ring(local, hole, 0);
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    mask.data[i] |= local.data[i];
  }
}

inline Mask rasterize(const BuildingInstance& inst, int height, int width) {
  Mask m(height, width);
  rasterize_into(m, inst);
  return m;
}

// Union of all instances; an empty list yields an all-zero mask.
inline Mask rasterize(std::span<const BuildingInstance> instances, int height,
                      int width) {
  Mask m(height, width);
  for (const auto& inst : instances) rasterize_into(m, inst);
  return m;
}

// ---------------------------------------------------------------------------
// COCO flat coordinate lists

inline std::vector<double> to_flat(const Polygon& poly) {
  std::vector<double> out;
  out.reserve(2 * poly.size());
  for (const auto& p : poly.vertices) {
    out.push_back(p.x);
    out.push_back(p.y);
  }
  return out;
}

inline Polygon from_flat(std::span<const double> coords) {
  if (coords.size() % 2 != 0) {
    throw InvalidPolygonError("coordinate list has odd length " +
                              std::to_string(coords.size()));
  }
  Polygon out;
  for (std::size_t i = 0; i < coords.size(); i += 2) {
    out.vertices.push_back({coords[i], coords[i + 1]});
  }
  return out;
}

}  // namespace polyrefine
