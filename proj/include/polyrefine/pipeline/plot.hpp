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

// Polygon overlays: ground truth in green, predictions in red with their
// vertices marked.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "polyrefine/geometry.hpp"
#include "polyrefine/image.hpp"

namespace polyrefine {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kGroundTruthColor{40, 220, 60};
inline constexpr Rgb kPredictionColor{235, 40, 40};

inline void put_pixel(Image& img, int x, int y, const Rgb& c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  auto* p = img.pixel(y, x);
  p[0] = c[0], p[1] = c[1], p[2] = c[2];
}

// Bresenham between pixel-coordinate points.
inline void draw_line(Image& img, Point a, Point b, const Rgb& c) {
  int x0 = int(std::floor(a.x)), y0 = int(std::floor(a.y));
  const int x1 = int(std::floor(b.x)), y1 = int(std::floor(b.y));
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    put_pixel(img, x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) err += dy, x0 += sx;
    if (e2 <= dx) err += dx, y0 += sy;
  }
}

inline void draw_ring(Image& img, const Polygon& ring, const Rgb& c, bool mark_vertices) {
  for (std::size_t i = 0; i < ring.size(); ++i) {
    draw_line(img, ring[i], ring[(i + 1) % ring.size()], c);
  }
  if (!mark_vertices) return;
  for (const auto& v : ring.vertices) {
    const int x = int(std::floor(v.x)), y = int(std::floor(v.y));
    for (int oy = -1; oy <= 1; ++oy) {
      for (int ox = -1; ox <= 1; ++ox) put_pixel(img, x + ox, y + oy, c);
    }
  }
}

}  // namespace polyrefine
