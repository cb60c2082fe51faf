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

// Pyramid RoIAlign: each box is pooled from one pyramid level chosen by its
// pixel size, with `sampling_ratio`^2 bilinear samples averaged per output
// bin (half-pixel aligned). Differentiable with respect to both the feature
// maps and the normalized box coordinates.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "polyrefine/autodiff.hpp"

namespace polyrefine {

struct PyramidLevel {
  int level = 2;  // stride 2^level
  ad::Index height = 0, width = 0;
  ad::Var features;  // (height*width) x channels
};

struct FeaturePyramid {
  ad::Index image_height = 0, image_width = 0;
  ad::Index channels = 0;
  std::vector<PyramidLevel> levels;  // P2, P3, P4, P5

  const PyramidLevel& at_level(int l) const {
    for (const auto& lv : levels) {
      if (lv.level == l) return lv;
    }
    throw ShapeError("FeaturePyramid: missing level P" + std::to_string(l));
  }
};

// floor(4 + log2(sqrt(w*h) / 224)) clamped to [2, 5]; w, h in pixels.
inline int roi_level_for(double width_px, double height_px) {
  const double s = std::sqrt(std::max(width_px * height_px, 1e-12));
  const int l = int(std::floor(4.0 + std::log2(s / 224.0)));
  return std::clamp(l, 2, 5);
}

namespace detail {

struct BilinearTap {
  bool valid = false;
  std::array<ad::Index, 4> idx{};
  std::array<double, 4> w{};
  std::array<double, 4> dw_dy{};
  std::array<double, 4> dw_dx{};
};

inline BilinearTap bilinear_tap(double y, double x, ad::Index h, ad::Index w) {
  BilinearTap t;
  if (y < -1.0 || y > double(h) || x < -1.0 || x > double(w)) return t;
  t.valid = true;
  bool y_free = true, x_free = true;
  if (y <= 0.0) {
    y = 0.0;
    y_free = false;
  }
  if (x <= 0.0) {
    x = 0.0;
    x_free = false;
  }
  ad::Index y_low = ad::Index(std::floor(y)), x_low = ad::Index(std::floor(x));
  ad::Index y_high, x_high;
  if (y_low >= h - 1) {
    y_high = y_low = h - 1;
    y = double(y_low);
    y_free = false;
  } else {
    y_high = y_low + 1;
  }
  if (x_low >= w - 1) {
    x_high = x_low = w - 1;
    x = double(x_low);
    x_free = false;
  } else {
    x_high = x_low + 1;
  }
  const double ly = y - double(y_low), lx = x - double(x_low);
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  t.idx = {y_low * w + x_low, y_low * w + x_high, y_high * w + x_low,
           y_high * w + x_high};
  t.w = {hy * hx, hy * lx, ly * hx, ly * lx};
  const double fy = y_free ? 1.0 : 0.0, fx = x_free ? 1.0 : 0.0;
  t.dw_dy = {-hx * fy, -lx * fy, hx * fy, lx * fy};
  t.dw_dx = {-hy * fx, hy * fx, -ly * fx, ly * fx};
  return t;
}

// Pixel-space sampling frame of one box on one level.
struct RoiFrame {
  double x1, y1, bin_w, bin_h;
  double sx, sy;  // d(level coordinate) / d(normalized coordinate)
};

inline RoiFrame roi_frame(const double* box, double image_w, double image_h,
                          int level, ad::Index pool) {
  const double stride = std::ldexp(1.0, level);
  const double sx = image_w / stride, sy = image_h / stride;
  const double x1 = (box[0] - 0.5 * box[2]) * sx - 0.5;
  const double x2 = (box[0] + 0.5 * box[2]) * sx - 0.5;
  const double y1 = (box[1] - 0.5 * box[3]) * sy - 0.5;
  const double y2 = (box[1] + 0.5 * box[3]) * sy - 0.5;
  return {x1, y1, (x2 - x1) / double(pool), (y2 - y1) / double(pool), sx, sy};
}

}  // namespace detail

// Output is (N * pool * pool) x channels; rows of box i occupy
// [i*pool*pool, (i+1)*pool*pool) in (bin_y, bin_x) order.
inline ad::Var roi_align(const FeaturePyramid& pyramid, const ad::Var& boxes,
                         ad::Index pool, int sampling_ratio = 2) {
  using ad::Index;
  using ad::Matrix;
  const Index n = boxes.rows();
  const Index c = pyramid.channels;
  const double img_w = double(pyramid.image_width);
  const double img_h = double(pyramid.image_height);
  const int sr = sampling_ratio;
  const double inv_count = 1.0 / double(sr * sr);

  std::vector<int> level_of(static_cast<std::size_t>(n));
  Matrix out = Matrix::Zero(n * pool * pool, c);
  for (Index i = 0; i < n; ++i) {
    const double* b = boxes.value().row(i).data();
    const int l = roi_level_for(b[2] * img_w, b[3] * img_h);
    level_of[std::size_t(i)] = l;
    const PyramidLevel& lv = pyramid.at_level(l);
    const Matrix& f = lv.features.value();
    const auto fr = detail::roi_frame(b, img_w, img_h, l, pool);
    for (Index py = 0; py < pool; ++py) {
      for (Index px = 0; px < pool; ++px) {
        auto dst = out.row((i * pool + py) * pool + px);
        for (int iy = 0; iy < sr; ++iy) {
          const double y = fr.y1 + (double(py) + (iy + 0.5) / sr) * fr.bin_h;
          for (int ix = 0; ix < sr; ++ix) {
            const double x = fr.x1 + (double(px) + (ix + 0.5) / sr) * fr.bin_w;
            const auto t = detail::bilinear_tap(y, x, lv.height, lv.width);
            if (!t.valid) continue;
            for (int k = 0; k < 4; ++k) dst += (t.w[k] * inv_count) * f.row(t.idx[k]);
          }
        }
      }
    }
  }

  std::vector<ad::Var> inputs{boxes};
  for (const auto& lv : pyramid.levels) inputs.push_back(lv.features);
  return ad::make_result(
      std::move(out), inputs,
      [pyramid, boxes, level_of, pool, sr, inv_count, img_w, img_h, n, c](
          const Matrix& g) {
        std::vector<Matrix> level_grads(pyramid.levels.size());
        Matrix box_grad = Matrix::Zero(n, 4);
        for (Index i = 0; i < n; ++i) {
          const double* b = boxes.value().row(i).data();
          const int l = level_of[std::size_t(i)];
          std::size_t li = 0;
          while (pyramid.levels[li].level != l) ++li;
          const PyramidLevel& lv = pyramid.levels[li];
          const Matrix& f = lv.features.value();
          const bool want_f = lv.features.requires_grad();
          if (want_f && level_grads[li].size() == 0) {
            level_grads[li] = Matrix::Zero(f.rows(), f.cols());
          }
          const auto fr = detail::roi_frame(b, img_w, img_h, l, pool);
          for (Index py = 0; py < pool; ++py) {
            for (Index px = 0; px < pool; ++px) {
              const auto gr = g.row((i * pool + py) * pool + px);
              for (int iy = 0; iy < sr; ++iy) {
                const double ay = (double(py) + (iy + 0.5) / sr) / double(pool);
                const double y = fr.y1 + (double(py) + (iy + 0.5) / sr) * fr.bin_h;
                for (int ix = 0; ix < sr; ++ix) {
                  const double ax = (double(px) + (ix + 0.5) / sr) / double(pool);
                  const double x = fr.x1 + (double(px) + (ix + 0.5) / sr) * fr.bin_w;
                  const auto t = detail::bilinear_tap(y, x, lv.height, lv.width);
                  if (!t.valid) continue;
                  double dval_dy = 0.0, dval_dx = 0.0;
                  for (int k = 0; k < 4; ++k) {
                    if (want_f) {
                      level_grads[li].row(t.idx[k]) += (t.w[k] * inv_count) * gr;
                    }
                    if (boxes.requires_grad()) {
                      const double gf = gr.dot(f.row(t.idx[k]));
                      dval_dy += t.dw_dy[k] * gf;
                      dval_dx += t.dw_dx[k] * gf;
                    }
                  }
                  if (boxes.requires_grad()) {
                    dval_dx *= inv_count;
                    dval_dy *= inv_count;
                    box_grad(i, 0) += dval_dx * fr.sx;
                    box_grad(i, 2) += dval_dx * (ax - 0.5) * fr.sx;
                    box_grad(i, 1) += dval_dy * fr.sy;
                    box_grad(i, 3) += dval_dy * (ay - 0.5) * fr.sy;
                  }
                }
              }
            }
          }
        }
        (void)c;
        if (boxes.requires_grad()) ad::push_grad(boxes, box_grad);
        for (std::size_t li = 0; li < pyramid.levels.size(); ++li) {
          if (level_grads[li].size() != 0) {
            ad::push_grad(pyramid.levels[li].features, level_grads[li]);
          }
        }
      });
}

}  // namespace polyrefine
