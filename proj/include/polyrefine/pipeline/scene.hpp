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

// Synthetic aerial-like scenes with exact polygon annotations.
//
// Buildings are rectilinear (a rectangle with rectangular notches cut from
// some of its corners) or convex (vertices on an ellipse). Buildings never
// overlap; a building may carry one rectangular courtyard. Roofs, ground and
// courtyards are painted in separate intensity bands and perturbed with
// Gaussian noise. Everything is driven by one seeded portable generator, so
// a seed always reproduces the same bytes.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "polyrefine/errors.hpp"
#include "polyrefine/geometry.hpp"
#include "polyrefine/image.hpp"
#include "polyrefine/nn.hpp"

namespace polyrefine {

// One image with its instances. Every ring is its own instance: outer rings
// carry class_tag outer, courtyard rings carry class_tag inner. `holes` of
// each instance is left empty.
struct SceneAnnotation {
  int image_id = 0;
  Image image;
  std::vector<BuildingInstance> instances;

  int height() const { return image.height; }
  int width() const { return image.width; }

  // Outer rings with their courtyards attached.
  std::vector<BuildingInstance> buildings() const {
    std::vector<Polygon> outers, inners;
    for (const auto& inst : instances) {
      (inst.class_tag == InstanceClass::inner ? inners : outers).push_back(inst.outer);
    }
    return group_holes(outers, inners);
  }

  // Building footprint mask (outer fills minus courtyards).
  Mask semantic_mask() const {
    const auto b = buildings();
    return rasterize(std::span<const BuildingInstance>(b), height(), width());
  }
};

struct GeneratorConfig {
  int image_size = 128;
  int scene_count = 32;
  int min_buildings = 1;
  int max_buildings = 4;
  int min_corners = 4;
  int max_corners = 12;
  double hole_probability = 0.0;
  double noise_level = 0.03;  // Gaussian sigma as a fraction of 255
  double rectilinear_fraction = 0.7;
  int min_extent = 20;  // building bounding-box side, pixels
  int max_extent = 56;
  std::uint64_t seed = 0;

  void validate() const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("GeneratorConfig: " + what);
    };
    need(image_size > 0 && image_size % 32 == 0, "image_size must be a positive multiple of 32");
    need(scene_count >= 0, "scene_count must be >= 0");
    need(min_buildings >= 0 && max_buildings >= min_buildings, "bad building count range");
    need(min_corners >= 4 && max_corners >= min_corners, "bad corner count range");
    need(hole_probability >= 0.0 && hole_probability <= 1.0, "hole_probability must be in [0, 1]");
    need(noise_level >= 0.0, "noise_level must be >= 0");
    need(min_extent >= 16 && max_extent >= min_extent && max_extent < image_size - 8,
         "bad extent range");
  }
};

namespace detail {

inline constexpr int kPlacementGap = 4;     // pixels between building boxes
inline constexpr int kMinFeature = 8;       // shortest rectilinear edge
inline constexpr int kPlacementTries = 60;  // per building
inline constexpr int kSceneTries = 20;      // per scene before re-seeding

// Rectangle [0,w]x[0,h] with `cuts` corner notches, translated by (x0, y0).
// Vertices run TL, TR, BR, BL with notch steps inserted.
inline Polygon rectilinear_building(nn::Rng& rng, int w, int h, int cuts, int x0, int y0) {
  std::array<bool, 4> cut{};
  std::array<int, 4> order{0, 1, 2, 3};
  for (int i = 3; i > 0; --i) std::swap(order[std::size_t(i)], order[std::size_t(rng.uniform_int(0, i))]);
  for (int i = 0; i < cuts; ++i) cut[std::size_t(order[std::size_t(i)])] = true;
  // Notch sizes never exceed a third of the side, so opposite notches
  // leave at least kMinFeature of straight edge between them.
  const int max_nw = std::max(kMinFeature, w / 3), max_nh = std::max(kMinFeature, h / 3);
  auto nw = [&]() { return rng.uniform_int(kMinFeature, max_nw); };
  auto nh = [&]() { return rng.uniform_int(kMinFeature, max_nh); };
  std::vector<Point> v;
  auto add = [&](int x, int y) { v.push_back({double(x0 + x), double(y0 + y)}); };
  // Top-left.
  if (cut[0]) {
    const int a = nw(), b = nh();
    add(0, b), add(a, b), add(a, 0);
  } else {
    add(0, 0);
  }
  if (cut[1]) {
    const int a = nw(), b = nh();
    add(w - a, 0), add(w - a, b), add(w, b);
  } else {
    add(w, 0);
  }
  if (cut[2]) {
    const int a = nw(), b = nh();
    add(w, h - b), add(w - a, h - b), add(w - a, h);
  } else {
    add(w, h);
  }
  if (cut[3]) {
    const int a = nw(), b = nh();
    add(a, h), add(a, h - b), add(0, h - b);
  } else {
    add(0, h);
  }
  return canonicalize(Polygon(std::move(v)), RingRole::outer);
}

// `k` vertices on the ellipse inscribed in [0,w]x[0,h], translated.
inline Polygon convex_building(nn::Rng& rng, int w, int h, int k, int x0, int y0) {
  const double cx = x0 + 0.5 * w, cy = y0 + 0.5 * h;
  const double step = 2.0 * M_PI / double(k);
  const double phase = rng.uniform(0.0, step);
  std::vector<Point> v;
  for (int i = 0; i < k; ++i) {
    const double a = phase + step * (double(i) + rng.uniform(-0.2, 0.2));
    v.push_back({cx + 0.5 * w * std::cos(a), cy + 0.5 * h * std::sin(a)});
  }
  return canonicalize(Polygon(std::move(v)), RingRole::outer);
}

// Liang-Barsky: does segment ab touch the closed rectangle?
inline bool segment_hits_rect(Point a, Point b, const CornerBox& r) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x - r.x_min, r.x_max - a.x, a.y - r.y_min, r.y_max - a.y};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double t = q[i] / p[i];
    if (p[i] < 0.0) {
      t0 = std::max(t0, t);
    } else {
      t1 = std::min(t1, t);
    }
    if (t0 > t1) return false;
  }
  return true;
}

// Axis-aligned courtyard at least `margin` px away from the outer boundary.
inline std::optional<Polygon> courtyard(nn::Rng& rng, const Polygon& outer, int margin) {
  const CornerBox b = bounds(outer);
  for (int attempt = 0; attempt < 40; ++attempt) {
    const int w = rng.uniform_int(kMinFeature, std::max(kMinFeature, int(b.width() * 0.4)));
    const int h = rng.uniform_int(kMinFeature, std::max(kMinFeature, int(b.height() * 0.4)));
    const int xlo = int(std::ceil(b.x_min)) + margin, ylo = int(std::ceil(b.y_min)) + margin;
    const int xhi = int(std::floor(b.x_max)) - margin - w;
    const int yhi = int(std::floor(b.y_max)) - margin - h;
    if (xhi < xlo || yhi < ylo) continue;
    const int x = rng.uniform_int(xlo, xhi), y = rng.uniform_int(ylo, yhi);
    const CornerBox inner{double(x), double(y), double(x + w), double(y + h)};
    const CornerBox grown{inner.x_min - margin, inner.y_min - margin, inner.x_max + margin,
                          inner.y_max + margin};
    bool clear = point_in_polygon({inner.x_min + 0.5 * w, inner.y_min + 0.5 * h}, outer);
    for (std::size_t i = 0; clear && i < outer.size(); ++i) {
      clear = !segment_hits_rect(outer[i], outer[(i + 1) % outer.size()], grown);
    }
    if (!clear) continue;
    Polygon ring({{inner.x_min, inner.y_min},
                  {inner.x_max, inner.y_min},
                  {inner.x_max, inner.y_max},
                  {inner.x_min, inner.y_max}});
    return canonicalize(ring, RingRole::hole);
  }
  return std::nullopt;
}

inline std::uint8_t to_byte(double v) {
  return std::uint8_t(std::clamp(std::lround(v), 0L, 255L));
}

struct Placed {
  Polygon outer;
  std::optional<Polygon> hole;
};

inline bool boxes_clear(const CornerBox& a, const CornerBox& b, double gap) {
  return a.x_max + gap <= b.x_min || b.x_max + gap <= a.x_min || a.y_max + gap <= b.y_min ||
         b.y_max + gap <= a.y_min;
}

inline std::optional<std::vector<Placed>> place_buildings(nn::Rng& rng,
                                                          const GeneratorConfig& cfg) {
  const int count = rng.uniform_int(cfg.min_buildings, cfg.max_buildings);
  std::vector<Placed> placed;
  std::vector<CornerBox> taken;
  for (int b = 0; b < count; ++b) {
    const bool want_hole = rng.uniform() < cfg.hole_probability;
    bool ok = false;
    for (int attempt = 0; attempt < kPlacementTries && !ok; ++attempt) {
      const bool rect = rng.uniform() < cfg.rectilinear_fraction;
      // Courtyard buildings need room inside for the yard and its margin.
      const int lo = want_hole ? std::max(cfg.min_extent, 36) : cfg.min_extent;
      const int hi = std::max(lo, cfg.max_extent);
      const int w = rng.uniform_int(lo, hi), h = rng.uniform_int(lo, hi);
      const int x0 = rng.uniform_int(2, cfg.image_size - 2 - w);
      const int y0 = rng.uniform_int(2, cfg.image_size - 2 - h);
      Polygon outer;
      if (rect) {
        const int max_cuts = std::clamp((cfg.max_corners - 4) / 2, 0, 4);
        const int min_cuts = std::clamp((cfg.min_corners - 3) / 2, 0, max_cuts);
        const int cuts = rng.uniform_int(min_cuts, max_cuts);
        outer = rectilinear_building(rng, w, h, cuts, x0, y0);
      } else {
        const int k = rng.uniform_int(std::max(cfg.min_corners, 4),
                                      std::max(std::min(cfg.max_corners, 6), 4));
        outer = convex_building(rng, w, h, k, x0, y0);
      }
      const CornerBox box = bounds(outer);
      bool clear = true;
      for (const auto& t : taken) clear = clear && boxes_clear(box, t, kPlacementGap);
      if (!clear || !passes_validity(outer)) continue;
      Placed p{outer, std::nullopt};
      if (want_hole) {
        p.hole = courtyard(rng, outer, 4);
        if (!p.hole) continue;
      }
      placed.push_back(std::move(p));
      taken.push_back(box);
      ok = true;
    }
    if (!ok) return std::nullopt;
  }
  return placed;
}

inline void paint(Image& img, const Mask& m, const std::array<double, 3>& color, double sigma,
                  nn::Rng& rng) {
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!m.at(y, x)) continue;
      auto* px = img.pixel(y, x);
      for (int c = 0; c < 3; ++c) px[c] = to_byte(color[std::size_t(c)] + sigma * rng.normal());
    }
  }
}

}  // namespace detail

// Deterministic for a given config; a scene whose buildings cannot be
// placed is redrawn from a generator re-seeded off the scene seed.
inline std::vector<SceneAnnotation> generate_scenes(const GeneratorConfig& cfg) {
  cfg.validate();
  std::vector<SceneAnnotation> out;
  nn::Rng master(cfg.seed);
  const double sigma = cfg.noise_level * 255.0;
  for (int s = 0; s < cfg.scene_count; ++s) {
    std::uint64_t scene_seed = master.next();
    std::optional<std::vector<detail::Placed>> placed;
    nn::Rng rng(scene_seed);
    for (int attempt = 0; !placed; ++attempt) {
      if (attempt > 0 && attempt % detail::kSceneTries == 0) {
        rng = nn::Rng(++scene_seed);
      }
      placed = detail::place_buildings(rng, cfg);
    }
    SceneAnnotation scene;
    scene.image_id = s + 1;
    scene.image = Image(cfg.image_size, cfg.image_size);
    const int n = cfg.image_size;
    // Ground: greenish-grey band.
    Mask all(n, n);
    for (auto& v : all.data) v = 1;
    const std::array<double, 3> ground{rng.uniform(60, 95), rng.uniform(75, 110),
                                       rng.uniform(55, 85)};
    detail::paint(scene.image, all, ground, sigma, rng);
    for (const auto& p : *placed) {
      const double roof = rng.uniform(170, 230);
      const std::array<double, 3> color{roof, roof - rng.uniform(0, 25), roof - rng.uniform(0, 35)};
      detail::paint(scene.image, rasterize_ring(p.outer, n, n), color, sigma, rng);
      scene.instances.push_back({p.outer, {}, InstanceClass::outer});
      if (p.hole) {
        const std::array<double, 3> yard{rng.uniform(110, 135), rng.uniform(110, 135),
                                         rng.uniform(110, 135)};
        detail::paint(scene.image, rasterize_ring(*p.hole, n, n), yard, sigma, rng);
        scene.instances.push_back({*p.hole, {}, InstanceClass::inner});
      }
    }
    out.push_back(std::move(scene));
  }
  return out;
}

}  // namespace polyrefine
