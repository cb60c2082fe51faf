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

// Evaluation metrics for polygonal instance predictions.
//
// Mask-level: mask IoU, boundary IoU, semantic IoU / pixel accuracy.
// Polygon-level: PoLiS and the vertex-count ratio, over GT-anchored pairs.
// Dataset-level: COCO-style AP/AR (IoU thresholds 0.50:0.05:0.95, 101
// recall points, at most 100 detections per image, area buckets), computed
// with exactly the accumulation rules of the reference COCO tooling, using
// either mask IoU or boundary IoU as the overlap measure.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "polyrefine/errors.hpp"
#include "polyrefine/geometry.hpp"

namespace polyrefine {

inline void require_same_shape(const Mask& a, const Mask& b, const char* op) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(op) + ": mask sizes differ (" +
                     std::to_string(a.height) + "x" + std::to_string(a.width) +
                     " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width) + ")");
  }
}

// |a & b| / |a | b|; 1 when both are empty.
inline double mask_iou(const Mask& a, const Mask& b) {
  require_same_shape(a, b, "mask_iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    inter += (a.data[i] & b.data[i]);
    uni += (a.data[i] | b.data[i]);
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

// ---------------------------------------------------------------------------
// Boundary IoU

namespace detail {

// 1-D squared distance transform of sampled function f (lower envelope of
// parabolas).
inline void sq_distance_1d(const std::vector<double>& f, std::vector<double>& d,
                           std::vector<int>& v, std::vector<double>& z) {
  const int n = int(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  int k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = 1; q < n; ++q) {
    if (f[std::size_t(q)] == inf) continue;
    if (f[std::size_t(v[0])] == inf) {
      v[0] = q;
      continue;
    }
    double s;
    while (true) {
      const int p = v[std::size_t(k)];
      s = ((f[std::size_t(q)] + double(q) * q) - (f[std::size_t(p)] + double(p) * p)) /
          (2.0 * (q - p));
      if (s <= z[std::size_t(k)] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[std::size_t(k)] = q;
    z[std::size_t(k)] = s;
    z[std::size_t(k) + 1] = inf;
  }
  if (f[std::size_t(v[0])] == inf) {
    std::fill(d.begin(), d.end(), inf);
    return;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[std::size_t(k) + 1] < q) ++k;
    const int p = v[std::size_t(k)];
    d[std::size_t(q)] = double(q - p) * (q - p) + f[std::size_t(p)];
  }
}

// Squared Euclidean distance from each pixel to the nearest background pixel,
// with everything outside the raster treated as background.
inline std::vector<double> background_distance_sq(const Mask& m) {
  const int h = m.height + 2, w = m.width + 2;
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(std::size_t(h) * w, 0.0);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (m.at(y, x)) grid[std::size_t(y + 1) * w + (x + 1)] = inf;
    }
  }
  const int n = std::max(h, w);
  std::vector<double> f(static_cast<std::size_t>(n)), d(static_cast<std::size_t>(n));
  std::vector<int> v(static_cast<std::size_t>(n));
  std::vector<double> z(static_cast<std::size_t>(n) + 1);
  // Columns, then rows.
  f.resize(std::size_t(h));
  d.resize(std::size_t(h));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[std::size_t(y)] = grid[std::size_t(y) * w + x];
    sq_distance_1d(f, d, v, z);
    for (int y = 0; y < h; ++y) grid[std::size_t(y) * w + x] = d[std::size_t(y)];
  }
  f.resize(std::size_t(w));
  d.resize(std::size_t(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[std::size_t(x)] = grid[std::size_t(y) * w + x];
    sq_distance_1d(f, d, v, z);
    for (int x = 0; x < w; ++x) grid[std::size_t(y) * w + x] = d[std::size_t(x)];
  }
  std::vector<double> out(std::size_t(m.height) * m.width);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      out[std::size_t(y) * m.width + x] = grid[std::size_t(y + 1) * w + (x + 1)];
    }
  }
  return out;
}

}  // namespace detail

// Foreground pixels whose center lies within `d_px` of a background pixel
// center (pixels outside the raster count as background).
inline Mask boundary_band(const Mask& m, double d_px) {
  const auto dist = detail::background_distance_sq(m);
  Mask out(m.height, m.width);
  const double d2 = d_px * d_px;
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    out.data[i] = (m.data[i] && dist[i] <= d2) ? 1 : 0;
  }
  return out;
}

inline constexpr double kBoundaryFraction = 0.02;

inline double boundary_distance_px(int height, int width, double d_frac) {
  return d_frac * std::hypot(double(height), double(width));
}

// IoU of the two masks restricted to their own boundary bands, the band
// width being `d_frac` of the image diagonal.
inline double boundary_iou(const Mask& a, const Mask& b, double d_frac = kBoundaryFraction) {
  require_same_shape(a, b, "boundary_iou");
  const double d = boundary_distance_px(a.height, a.width, d_frac);
  return mask_iou(boundary_band(a, d), boundary_band(b, d));
}

// ---------------------------------------------------------------------------
// Polygon-level metrics

inline double point_ring_distance(Point p, const Polygon& ring) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ring.size(); ++i) {
    best = std::min(best, point_segment_distance(p, ring[i], ring[(i + 1) % ring.size()]));
  }
  return best;
}

// Mean vertex-to-boundary distance, symmetrized.
inline double polis(const Polygon& x, const Polygon& y) {
  require_ring(x, "polis");
  require_ring(y, "polis");
  double sx = 0.0, sy = 0.0;
  for (const auto& p : x.vertices) sx += point_ring_distance(p, y);
  for (const auto& p : y.vertices) sy += point_ring_distance(p, x);
  return sx / (2.0 * double(x.size())) + sy / (2.0 * double(y.size()));
}

// Sum of predicted vertex counts over sum of GT vertex counts; absent when
// there are no pairs.
inline std::optional<double> n_ratio(std::span<const std::pair<Polygon, Polygon>> pairs) {
  std::size_t pred = 0, gt = 0;
  for (const auto& [p, g] : pairs) {
    pred += p.size();
    gt += g.size();
  }
  if (pairs.empty() || gt == 0) return std::nullopt;
  return double(pred) / double(gt);
}

// ---------------------------------------------------------------------------
// Instance records

struct ImageSize {
  int height = 0;
  int width = 0;
};

// One predicted instance (pixel coordinates).
struct Detection {
  int image_id = 0;
  int category_id = 1;
  Polygon polygon;
  std::vector<Polygon> holes;
  double score = 1.0;
};

// One annotated instance (pixel coordinates).
struct GroundTruth {
  int image_id = 0;
  int category_id = 1;
  Polygon polygon;
  std::vector<Polygon> holes;
  bool iscrowd = false;
};

template <class T>
Mask instance_mask(const T& rec, const ImageSize& size) {
  BuildingInstance inst{rec.polygon, rec.holes, InstanceClass::outer};
  return rasterize(inst, size.height, size.width);
}

// ---------------------------------------------------------------------------
// COCO-style evaluation

enum class OverlapKind { mask, boundary };

struct CocoParams {
  std::vector<double> iou_thresholds;
  std::vector<double> recall_thresholds;
  int max_detections = 100;
  // all, small, medium, large (pixel areas, inclusive bounds).
  std::array<std::pair<double, double>, 4> area_ranges{
      {{0.0, 1e10}, {0.0, 32.0 * 32.0}, {32.0 * 32.0, 96.0 * 96.0}, {96.0 * 96.0, 1e10}}};
  double boundary_fraction = kBoundaryFraction;

  // Evenly spaced as numpy's linspace: start + i * step, last = stop.
  static std::vector<double> linspace(double start, double stop, int num) {
    std::vector<double> v(static_cast<std::size_t>(num));
    const double step = (stop - start) / double(num - 1);
    for (int i = 0; i < num; ++i) v[std::size_t(i)] = start + double(i) * step;
    v.back() = stop;
    return v;
  }

  static CocoParams defaults() {
    CocoParams p;
    p.iou_thresholds = linspace(0.5, 0.95, 10);
    p.recall_thresholds = linspace(0.0, 1.0, 101);
    return p;
  }
};

// AP/AR values; -1 marks "no data" as in the reference tooling.
struct CocoStats {
  double ap = -1, ap50 = -1, ap75 = -1, ap_small = -1, ap_medium = -1, ap_large = -1;
  double ar = -1, ar50 = -1, ar75 = -1, ar_small = -1, ar_medium = -1, ar_large = -1;
};

namespace detail {

struct EvalItem {
  Mask mask;
  Mask band;  // boundary band, filled for OverlapKind::boundary
  double area = 0.0;
  double score = 0.0;
  bool crowd = false;
  std::size_t order = 0;  // input order, for stable sorting
};

inline double overlap(const EvalItem& d, const EvalItem& g, OverlapKind kind) {
  const Mask& a = kind == OverlapKind::mask ? d.mask : d.band;
  const Mask& b = kind == OverlapKind::mask ? g.mask : g.band;
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    inter += (a.data[i] & b.data[i]);
    uni += (a.data[i] | b.data[i]);
  }
  if (g.crowd) {
    std::size_t da = 0;
    for (auto v : a.data) da += v;
    return da == 0 ? 0.0 : double(inter) / double(da);
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

// Per (image, category, area range) matching outcome at every threshold.
struct ImageEval {
  std::vector<double> det_scores;                 // sorted, <= max_detections
  std::vector<std::vector<char>> det_matched;     // [t][d]
  std::vector<std::vector<char>> det_ignored;     // [t][d]
  std::size_t gt_counted = 0;                     // non-ignored GT
};

}  // namespace detail

class CocoEvaluator {
 public:
  explicit CocoEvaluator(CocoParams params = CocoParams::defaults())
      : params_(std::move(params)) {}

  CocoStats evaluate(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                     const std::map<int, ImageSize>& sizes,
                     OverlapKind kind = OverlapKind::mask) const {
    using detail::EvalItem;
    // Group by (image, category).
    std::map<std::pair<int, int>, std::vector<EvalItem>> gt_groups, dt_groups;
    std::vector<int> categories;
    auto size_of = [&](int image_id) {
      const auto it = sizes.find(image_id);
      if (it == sizes.end()) {
        throw Error("coco_eval: no size for image " + std::to_string(image_id));
      }
      return it->second;
    };
    const double d_frac = params_.boundary_fraction;
    auto make_item = [&](const Mask& m, double score, bool crowd, std::size_t order) {
      EvalItem e;
      e.mask = m;
      e.area = double(m.count());
      e.score = score;
      e.crowd = crowd;
      e.order = order;
      if (kind == OverlapKind::boundary) {
        e.band = boundary_band(m, boundary_distance_px(m.height, m.width, d_frac));
      }
      return e;
    };
    for (std::size_t i = 0; i < gts.size(); ++i) {
      const auto& g = gts[i];
      gt_groups[{g.image_id, g.category_id}].push_back(
          make_item(instance_mask(g, size_of(g.image_id)), 0.0, g.iscrowd, i));
      categories.push_back(g.category_id);
    }
    for (std::size_t i = 0; i < dets.size(); ++i) {
      const auto& d = dets[i];
      dt_groups[{d.image_id, d.category_id}].push_back(
          make_item(instance_mask(d, size_of(d.image_id)), d.score, false, i));
    }
    std::sort(categories.begin(), categories.end());
    categories.erase(std::unique(categories.begin(), categories.end()), categories.end());
    std::vector<int> images;
    for (const auto& [id, s] : sizes) images.push_back(id);

    const std::size_t nt = params_.iou_thresholds.size();
    const std::size_t nr = params_.recall_thresholds.size();
    const std::size_t na = params_.area_ranges.size();
    // precision[t][r][c][a], recall[t][c][a]
    std::vector<double> precision(nt * nr * categories.size() * na, -1.0);
    std::vector<double> recall(nt * categories.size() * na, -1.0);
    static const std::vector<EvalItem> none;

    for (std::size_t c = 0; c < categories.size(); ++c) {
      // Per image: sorted detections and IoU matrix, shared by area ranges.
      struct Prepared {
        std::vector<const EvalItem*> g, d;
        std::vector<double> iou;  // d x g
      };
      std::vector<Prepared> prepared;
      for (int img : images) {
        const auto git = gt_groups.find({img, categories[c]});
        const auto dit = dt_groups.find({img, categories[c]});
        const auto& gv = git == gt_groups.end() ? none : git->second;
        const auto& dv = dit == dt_groups.end() ? none : dit->second;
        Prepared p;
        for (const auto& e : gv) p.g.push_back(&e);
        for (const auto& e : dv) p.d.push_back(&e);
        std::stable_sort(p.d.begin(), p.d.end(),
                         [](const EvalItem* a, const EvalItem* b) { return a->score > b->score; });
        if (p.d.size() > std::size_t(params_.max_detections)) {
          p.d.resize(std::size_t(params_.max_detections));
        }
        p.iou.resize(p.d.size() * p.g.size());
        for (std::size_t i = 0; i < p.d.size(); ++i) {
          for (std::size_t j = 0; j < p.g.size(); ++j) {
            p.iou[i * p.g.size() + j] = detail::overlap(*p.d[i], *p.g[j], kind);
          }
        }
        prepared.push_back(std::move(p));
      }

      for (std::size_t a = 0; a < na; ++a) {
        std::vector<detail::ImageEval> evals;
        for (const auto& p : prepared) {
          if (p.g.empty() && p.d.empty()) continue;
          evals.push_back(evaluate_image(p.g, p.d, p.iou, params_.area_ranges[a]));
        }
        accumulate(evals, c, a, categories.size(), precision, recall);
      }
    }

    CocoStats s;
    const auto t50 = threshold_index(0.5), t75 = threshold_index(0.75);
    s.ap = summarize_precision(precision, categories.size(), std::nullopt, 0);
    s.ap50 = summarize_precision(precision, categories.size(), t50, 0);
    s.ap75 = summarize_precision(precision, categories.size(), t75, 0);
    s.ap_small = summarize_precision(precision, categories.size(), std::nullopt, 1);
    s.ap_medium = summarize_precision(precision, categories.size(), std::nullopt, 2);
    s.ap_large = summarize_precision(precision, categories.size(), std::nullopt, 3);
    s.ar = summarize_recall(recall, categories.size(), std::nullopt, 0);
    s.ar50 = summarize_recall(recall, categories.size(), t50, 0);
    s.ar75 = summarize_recall(recall, categories.size(), t75, 0);
    s.ar_small = summarize_recall(recall, categories.size(), std::nullopt, 1);
    s.ar_medium = summarize_recall(recall, categories.size(), std::nullopt, 2);
    s.ar_large = summarize_recall(recall, categories.size(), std::nullopt, 3);
    return s;
  }

  const CocoParams& params() const { return params_; }

 private:
  std::optional<std::size_t> threshold_index(double t) const {
    for (std::size_t i = 0; i < params_.iou_thresholds.size(); ++i) {
      if (params_.iou_thresholds[i] == t) return i;
    }
    return std::nullopt;
  }

  detail::ImageEval evaluate_image(const std::vector<const detail::EvalItem*>& g_in,
                                   const std::vector<const detail::EvalItem*>& d,
                                   const std::vector<double>& iou_in,
                                   std::pair<double, double> range) const {
    const std::size_t ng = g_in.size(), nd = d.size();
    auto outside = [&](double area) { return area < range.first || area > range.second; };
    // Non-ignored GT first, stably.
    std::vector<std::size_t> gorder(ng);
    std::iota(gorder.begin(), gorder.end(), 0);
    std::vector<char> gign_in(ng);
    for (std::size_t j = 0; j < ng; ++j) {
      gign_in[j] = (g_in[j]->crowd || outside(g_in[j]->area)) ? 1 : 0;
    }
    std::stable_sort(gorder.begin(), gorder.end(),
                     [&](std::size_t a, std::size_t b) { return gign_in[a] < gign_in[b]; });

    detail::ImageEval e;
    const std::size_t nt = params_.iou_thresholds.size();
    e.det_matched.assign(nt, std::vector<char>(nd, 0));
    e.det_ignored.assign(nt, std::vector<char>(nd, 0));
    for (const auto* x : d) e.det_scores.push_back(x->score);
    for (std::size_t j = 0; j < ng; ++j) e.gt_counted += gign_in[j] ? 0 : 1;

    for (std::size_t t = 0; t < nt; ++t) {
      std::vector<char> gt_taken(ng, 0);
      for (std::size_t i = 0; i < nd; ++i) {
        double best = std::min(params_.iou_thresholds[t], 1.0 - 1e-10);
        long m = -1;
        for (std::size_t jj = 0; jj < ng; ++jj) {
          const std::size_t j = gorder[jj];
          if (gt_taken[jj] && !g_in[j]->crowd) continue;
          if (m > -1 && !gign_in[gorder[std::size_t(m)]] && gign_in[j]) break;
          const double v = iou_in[i * ng + j];
          if (v < best) continue;
          best = v;
          m = long(jj);
        }
        if (m == -1) continue;
        e.det_ignored[t][i] = gign_in[gorder[std::size_t(m)]];
        e.det_matched[t][i] = 1;
        gt_taken[std::size_t(m)] = 1;
      }
      for (std::size_t i = 0; i < nd; ++i) {
        if (!e.det_matched[t][i] && outside(d[i]->area)) e.det_ignored[t][i] = 1;
      }
    }
    return e;
  }

  void accumulate(const std::vector<detail::ImageEval>& evals, std::size_t c, std::size_t a,
                  std::size_t nc, std::vector<double>& precision,
                  std::vector<double>& recall) const {
    const std::size_t nt = params_.iou_thresholds.size();
    const std::size_t nr = params_.recall_thresholds.size();
    const std::size_t na = params_.area_ranges.size();
    struct Ref {
      double score;
      std::size_t image, det;
    };
    std::vector<Ref> refs;
    std::size_t npig = 0;
    for (std::size_t k = 0; k < evals.size(); ++k) {
      for (std::size_t i = 0; i < evals[k].det_scores.size(); ++i) {
        refs.push_back({evals[k].det_scores[i], k, i});
      }
      npig += evals[k].gt_counted;
    }
    if (npig == 0) return;
    std::stable_sort(refs.begin(), refs.end(),
                     [](const Ref& x, const Ref& y) { return x.score > y.score; });
    for (std::size_t t = 0; t < nt; ++t) {
      std::vector<double> rc, pr;
      double tp = 0.0, fp = 0.0;
      for (const auto& r : refs) {
        const auto& ev = evals[r.image];
        if (ev.det_ignored[t][r.det]) {
          // Ignored detections leave the running sums unchanged but still
          // occupy a position in the curve.
        } else if (ev.det_matched[t][r.det]) {
          tp += 1.0;
        } else {
          fp += 1.0;
        }
        rc.push_back(tp / double(npig));
        // Zero-denominator guard only, so a single true positive scores
        // exactly 1.
        pr.push_back(tp + fp > 0.0 ? tp / (tp + fp) : 0.0);
      }
      recall[(t * nc + c) * na + a] = rc.empty() ? 0.0 : rc.back();
      for (std::size_t i = pr.size(); i-- > 1;) pr[i - 1] = std::max(pr[i - 1], pr[i]);
      for (std::size_t ri = 0; ri < nr; ++ri) {
        const auto it = std::lower_bound(rc.begin(), rc.end(), params_.recall_thresholds[ri]);
        const std::size_t pi = std::size_t(it - rc.begin());
        precision[((t * nr + ri) * nc + c) * na + a] = pi < pr.size() ? pr[pi] : 0.0;
      }
    }
  }

  double summarize_precision(const std::vector<double>& precision, std::size_t nc,
                             std::optional<std::size_t> t_only, std::size_t a) const {
    const std::size_t nt = params_.iou_thresholds.size();
    const std::size_t nr = params_.recall_thresholds.size();
    const std::size_t na = params_.area_ranges.size();
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < nt; ++t) {
      if (t_only && *t_only != t) continue;
      for (std::size_t r = 0; r < nr; ++r) {
        for (std::size_t c = 0; c < nc; ++c) {
          const double v = precision[((t * nr + r) * nc + c) * na + a];
          if (v > -1) {
            sum += v;
            ++count;
          }
        }
      }
    }
    return count == 0 ? -1.0 : sum / double(count);
  }

  double summarize_recall(const std::vector<double>& recall, std::size_t nc,
                          std::optional<std::size_t> t_only, std::size_t a) const {
    const std::size_t nt = params_.iou_thresholds.size();
    const std::size_t na = params_.area_ranges.size();
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < nt; ++t) {
      if (t_only && *t_only != t) continue;
      for (std::size_t c = 0; c < nc; ++c) {
        const double v = recall[(t * nc + c) * na + a];
        if (v > -1) {
          sum += v;
          ++count;
        }
      }
    }
    return count == 0 ? -1.0 : sum / double(count);
  }

  CocoParams params_;
};

inline CocoStats coco_eval(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                           const std::map<int, ImageSize>& sizes,
                           OverlapKind kind = OverlapKind::mask) {
  return CocoEvaluator().evaluate(dets, gts, sizes, kind);
}

// ---------------------------------------------------------------------------
// Polygon pairing

struct PolygonPair {
  std::size_t gt = 0, det = 0;
  double iou = 0.0;
};

// Each GT pairs with the same-image, same-category detection of highest mask
// IoU, provided that IoU exceeds `min_iou`. Ties go to the earlier detection.
inline std::vector<PolygonPair> pair_polygons(std::span<const Detection> dets,
                                              std::span<const GroundTruth> gts,
                                              const std::map<int, ImageSize>& sizes,
                                              double min_iou = 0.5) {
  std::vector<Mask> dmasks;
  dmasks.reserve(dets.size());
  for (const auto& d : dets) dmasks.push_back(instance_mask(d, sizes.at(d.image_id)));
  std::vector<PolygonPair> out;
  for (std::size_t j = 0; j < gts.size(); ++j) {
    const Mask gm = instance_mask(gts[j], sizes.at(gts[j].image_id));
    double best = min_iou;
    long pick = -1;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (dets[i].image_id != gts[j].image_id || dets[i].category_id != gts[j].category_id) {
        continue;
      }
      const double v = mask_iou(dmasks[i], gm);
      if (v > best) {
        best = v;
        pick = long(i);
      }
    }
    if (pick >= 0) out.push_back({j, std::size_t(pick), best});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Semantic metrics

struct SemanticScores {
  double iou = 0.0;
  double accuracy = 0.0;
};

struct PixelCounts {
  std::size_t intersection = 0, uni = 0, correct = 0, total = 0;

  void add(const Mask& pred, const Mask& gt) {
    require_same_shape(pred, gt, "semantic_eval");
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
      intersection += (pred.data[i] & gt.data[i]);
      uni += (pred.data[i] | gt.data[i]);
      correct += (pred.data[i] == gt.data[i]);
    }
    total += pred.data.size();
  }

  // Foreground IoU (1 when both are empty) and pixel accuracy.
  SemanticScores scores() const {
    return {uni == 0 ? 1.0 : double(intersection) / double(uni),
            total == 0 ? 1.0 : double(correct) / double(total)};
  }
};

inline SemanticScores semantic_eval(std::span<const BuildingInstance> predicted,
                                    const Mask& gt_mask) {
  PixelCounts c;
  c.add(rasterize(predicted, gt_mask.height, gt_mask.width), gt_mask);
  return c.scores();
}

// ---------------------------------------------------------------------------
// Full report

struct MetricReport {
  CocoStats mask;
  CocoStats boundary;
  std::optional<double> polis;
  std::optional<double> n_ratio;
  double semantic_iou = 0.0;
  double pixel_accuracy = 0.0;
  std::size_t num_images = 0, num_detections = 0, num_ground_truth = 0, num_pairs = 0;
};

// Semantic masks: union of fills of every outer-category record minus the
// union of every inner-category record (holes of a record are subtracted
// from that record).
template <class T>
Mask semantic_mask(std::span<const T> recs, int image_id, const ImageSize& size,
                   int inner_category) {
  Mask pos(size.height, size.width), neg(size.height, size.width);
  for (const auto& r : recs) {
    if (r.image_id != image_id) continue;
    BuildingInstance inst{r.polygon, r.holes, InstanceClass::outer};
    rasterize_into(r.category_id == inner_category ? neg : pos, inst);
  }
  for (std::size_t i = 0; i < pos.data.size(); ++i) pos.data[i] &= std::uint8_t(!neg.data[i]);
  return pos;
}

inline MetricReport evaluate_all(std::span<const Detection> dets,
                                 std::span<const GroundTruth> gts,
                                 const std::map<int, ImageSize>& sizes,
                                 int inner_category = 2) {
  MetricReport r;
  r.num_images = sizes.size();
  r.num_detections = dets.size();
  r.num_ground_truth = gts.size();
  const CocoEvaluator ev;
  r.mask = ev.evaluate(dets, gts, sizes, OverlapKind::mask);
  r.boundary = ev.evaluate(dets, gts, sizes, OverlapKind::boundary);

  const auto pairs = pair_polygons(dets, gts, sizes);
  r.num_pairs = pairs.size();
  std::vector<std::pair<Polygon, Polygon>> polys;
  double polis_sum = 0.0;
  for (const auto& p : pairs) {
    polys.emplace_back(dets[p.det].polygon, gts[p.gt].polygon);
    polis_sum += polis(dets[p.det].polygon, gts[p.gt].polygon);
  }
  if (!pairs.empty()) r.polis = polis_sum / double(pairs.size());
  r.n_ratio = n_ratio(polys);

  PixelCounts counts;
  for (const auto& [id, size] : sizes) {
    counts.add(semantic_mask(dets, id, size, inner_category),
               semantic_mask(gts, id, size, inner_category));
  }
  const auto sem = counts.scores();
  r.semantic_iou = sem.iou;
  r.pixel_accuracy = sem.accuracy;
  return r;
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j;
  j["AP"] = r.mask.ap;
  j["AP50"] = r.mask.ap50;
  j["AP75"] = r.mask.ap75;
  j["AP_S"] = r.mask.ap_small;
  j["AP_M"] = r.mask.ap_medium;
  j["AP_L"] = r.mask.ap_large;
  j["AR"] = r.mask.ar;
  j["AR50"] = r.mask.ar50;
  j["AR75"] = r.mask.ar75;
  j["AR_S"] = r.mask.ar_small;
  j["AR_M"] = r.mask.ar_medium;
  j["AR_L"] = r.mask.ar_large;
  j["AP_boundary"] = r.boundary.ap;
  j["AR_boundary"] = r.boundary.ar;
  j["PoLiS"] = optional_json(r.polis);
  j["N_ratio"] = optional_json(r.n_ratio);
  j["IoU"] = r.semantic_iou;
  j["Accuracy"] = r.pixel_accuracy;
  j["num_images"] = r.num_images;
  j["num_detections"] = r.num_detections;
  j["num_ground_truth"] = r.num_ground_truth;
  j["num_pairs"] = r.num_pairs;
  return j;
}

// Aligned two-row table; absent values print as "-".
inline std::string to_table(const MetricReport& r) {
  const std::vector<std::pair<std::string, std::optional<double>>> cols = {
      {"AP", r.mask.ap},           {"AP50", r.mask.ap50},        {"AP75", r.mask.ap75},
      {"AP_S", r.mask.ap_small},   {"AP_M", r.mask.ap_medium},   {"AP_L", r.mask.ap_large},
      {"AR", r.mask.ar},           {"AR50", r.mask.ar50},        {"AR75", r.mask.ar75},
      {"AP_bd", r.boundary.ap},    {"AR_bd", r.boundary.ar},     {"PoLiS", r.polis},
      {"N_ratio", r.n_ratio},      {"IoU", r.semantic_iou},      {"Acc", r.pixel_accuracy}};
  std::string head, body;
  for (const auto& [name, v] : cols) {
    char cell[32];
    if (v && *v >= 0) {
      std::snprintf(cell, sizeof cell, "%.4f", *v);
    } else {
      std::snprintf(cell, sizeof cell, "-");
    }
    const std::size_t w = std::max<std::size_t>(name.size(), 8) + 2;
    head += name + std::string(w - name.size(), ' ');
    body += std::string(cell) + std::string(w - std::string(cell).size(), ' ');
  }
  while (!head.empty() && head.back() == ' ') head.pop_back();
  while (!body.empty() && body.back() == ' ') body.pop_back();
  return head + "\n" + body + "\n";
}

}  // namespace polyrefine
