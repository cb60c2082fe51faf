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

// Straight transcription of the reference COCO segmentation protocol
// (evaluateImg / accumulate / summarize), kept independent of the library
// evaluator: own IoU, own bookkeeping, own threshold grids.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "polyrefine/geometry.hpp"
#include "polyrefine/metrics.hpp"

namespace polyrefine::testing {

struct RefStats {
  double ap = -1, ap50 = -1, ap75 = -1, ap_s = -1, ap_m = -1, ap_l = -1;
  double ar = -1, ar50 = -1, ar75 = -1;
};

namespace ref_detail {

// numpy.linspace(start, stop, num)
inline std::vector<double> np_linspace(double start, double stop, std::size_t num) {
  std::vector<double> y(num);
  const double step = (stop - start) / double(num - 1);
  for (std::size_t i = 0; i < num; ++i) y[i] = double(i) * step + start;
  y[num - 1] = stop;
  return y;
}

struct Obj {
  std::vector<std::uint8_t> pix;
  double area = 0;
  double score = 0;
  bool crowd = false;
};

inline Obj make_obj(const Polygon& p, const std::vector<Polygon>& holes, int h, int w, double score,
                    bool crowd) {
  BuildingInstance inst{p, holes, InstanceClass::outer};
  const Mask m = rasterize(inst, h, w);
  Obj o;
  o.pix = m.data;
  o.area = double(std::accumulate(m.data.begin(), m.data.end(), 0));
  o.score = score;
  o.crowd = crowd;
  return o;
}

// maskUtils.iou semantics: crowd GT uses the detection area as denominator.
inline double iou(const Obj& d, const Obj& g) {
  double inter = 0, uni = 0, da = 0;
  for (std::size_t i = 0; i < d.pix.size(); ++i) {
    inter += d.pix[i] && g.pix[i];
    uni += d.pix[i] || g.pix[i];
    da += d.pix[i];
  }
  if (g.crowd) return da > 0 ? inter / da : 0.0;
  return uni > 0 ? inter / uni : 1.0;
}

struct EvalImg {
  std::vector<std::vector<int>> dtm;     // [T][D] 1 when matched
  std::vector<std::vector<int>> dt_ig;   // [T][D]
  std::vector<double> scores;            // [D]
  std::vector<int> gt_ig;                // [G]
};

}  // namespace ref_detail

inline RefStats reference_coco(const std::vector<Detection>& dets,
                               const std::vector<GroundTruth>& gts,
                               const std::map<int, ImageSize>& sizes) {
  using namespace ref_detail;
  const std::vector<double> iou_thrs = np_linspace(0.5, 0.95, std::size_t(std::lround((0.95 - 0.5) / 0.05)) + 1);
  const std::vector<double> rec_thrs = np_linspace(0.0, 1.0, std::size_t(std::lround((1.0 - 0.0) / 0.01)) + 1);
  const std::vector<std::pair<double, double>> area_rng{
      {0, 1e5 * 1e5}, {0, 32 * 32}, {32 * 32, 96 * 96}, {96 * 96, 1e5 * 1e5}};
  const std::size_t max_det = 100;
  const std::size_t T = iou_thrs.size(), R = rec_thrs.size(), A = area_rng.size();

  std::vector<int> cat_ids;
  for (const auto& g : gts) cat_ids.push_back(g.category_id);
  std::sort(cat_ids.begin(), cat_ids.end());
  cat_ids.erase(std::unique(cat_ids.begin(), cat_ids.end()), cat_ids.end());
  std::vector<int> img_ids;
  for (const auto& [id, s] : sizes) img_ids.push_back(id);
  const std::size_t K = cat_ids.size();

  // precision[T][R][K][A], recall[T][K][A]
  std::vector<double> precision(T * R * K * A, -1.0), recall(T * K * A, -1.0);

  for (std::size_t k = 0; k < K; ++k) {
    const int cat = cat_ids[k];
    std::map<int, std::vector<Obj>> gmap, dmap;
    for (const auto& g : gts) {
      if (g.category_id != cat) continue;
      const auto& s = sizes.at(g.image_id);
      gmap[g.image_id].push_back(make_obj(g.polygon, g.holes, s.height, s.width, 0.0, g.iscrowd));
    }
    for (const auto& d : dets) {
      if (d.category_id != cat) continue;
      const auto& s = sizes.at(d.image_id);
      dmap[d.image_id].push_back(make_obj(d.polygon, d.holes, s.height, s.width, d.score, false));
    }
    for (std::size_t a = 0; a < A; ++a) {
      const auto rng = area_rng[a];
      std::vector<EvalImg> evs;
      for (int img : img_ids) {
        const auto& gv = gmap[img];
        const auto& dv0 = dmap[img];
        if (gv.empty() && dv0.empty()) continue;
        // gt ignore flags, then order with ignored last (mergesort)
        std::vector<int> gig(gv.size());
        for (std::size_t j = 0; j < gv.size(); ++j) {
          gig[j] = (gv[j].crowd || gv[j].area < rng.first || gv[j].area > rng.second) ? 1 : 0;
        }
        std::vector<std::size_t> gind(gv.size());
        std::iota(gind.begin(), gind.end(), 0);
        std::stable_sort(gind.begin(), gind.end(), [&](auto x, auto y) { return gig[x] < gig[y]; });
        std::vector<std::size_t> dind(dv0.size());
        std::iota(dind.begin(), dind.end(), 0);
        std::stable_sort(dind.begin(), dind.end(),
                         [&](auto x, auto y) { return -dv0[x].score < -dv0[y].score; });
        if (dind.size() > max_det) dind.resize(max_det);
        const std::size_t D = dind.size(), G = gind.size();
        EvalImg e;
        e.dtm.assign(T, std::vector<int>(D, 0));
        e.dt_ig.assign(T, std::vector<int>(D, 0));
        std::vector<std::vector<int>> gtm(T, std::vector<int>(G, 0));
        for (std::size_t j = 0; j < G; ++j) e.gt_ig.push_back(gig[gind[j]]);
        for (std::size_t i = 0; i < D; ++i) e.scores.push_back(dv0[dind[i]].score);
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t i = 0; i < D; ++i) {
            double best = std::min(iou_thrs[t], 1 - 1e-10);
            long m = -1;
            for (std::size_t j = 0; j < G; ++j) {
              if (gtm[t][j] > 0 && !gv[gind[j]].crowd) continue;
              if (m > -1 && e.gt_ig[std::size_t(m)] == 0 && e.gt_ig[j] == 1) break;
              const double v = iou(dv0[dind[i]], gv[gind[j]]);
              if (v < best) continue;
              best = v;
              m = long(j);
            }
            if (m == -1) continue;
            e.dt_ig[t][i] = e.gt_ig[std::size_t(m)];
            e.dtm[t][i] = 1;
            gtm[t][std::size_t(m)] = 1;
          }
          for (std::size_t i = 0; i < D; ++i) {
            const double ar = dv0[dind[i]].area;
            const bool out = ar < rng.first || ar > rng.second;
            if (e.dtm[t][i] == 0 && out) e.dt_ig[t][i] = 1;
          }
        }
        evs.push_back(std::move(e));
      }
      if (evs.empty()) continue;
      // accumulate
      std::vector<double> scores;
      std::vector<std::pair<std::size_t, std::size_t>> where;
      for (std::size_t n = 0; n < evs.size(); ++n) {
        for (std::size_t i = 0; i < evs[n].scores.size(); ++i) {
          scores.push_back(evs[n].scores[i]);
          where.emplace_back(n, i);
        }
      }
      std::vector<std::size_t> inds(scores.size());
      std::iota(inds.begin(), inds.end(), 0);
      std::stable_sort(inds.begin(), inds.end(),
                       [&](auto x, auto y) { return -scores[x] < -scores[y]; });
      double npig = 0;
      for (const auto& e : evs) {
        for (int g : e.gt_ig) npig += g == 0;
      }
      if (npig == 0) continue;
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> tp_sum, fp_sum;
        double tp = 0, fp = 0;
        for (std::size_t q : inds) {
          const auto [n, i] = where[q];
          const int m = evs[n].dtm[t][i], ig = evs[n].dt_ig[t][i];
          tp += (m && !ig) ? 1 : 0;
          fp += (!m && !ig) ? 1 : 0;
          tp_sum.push_back(tp);
          fp_sum.push_back(fp);
        }
        const std::size_t nd = tp_sum.size();
        std::vector<double> rc(nd), pr(nd);
        for (std::size_t d = 0; d < nd; ++d) {
          rc[d] = tp_sum[d] / npig;
          // Guarded division in place of the customary + eps.
          const double n = fp_sum[d] + tp_sum[d];
          pr[d] = n > 0 ? tp_sum[d] / n : 0.0;
        }
        recall[(t * K + k) * A + a] = nd ? rc[nd - 1] : 0;
        for (std::size_t d = nd; d-- > 1;) {
          if (pr[d] > pr[d - 1]) pr[d - 1] = pr[d];
        }
        for (std::size_t r = 0; r < R; ++r) {
          // searchsorted(rc, rec_thrs, side='left')
          std::size_t lo = 0, hi = nd;
          while (lo < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (rc[mid] < rec_thrs[r]) lo = mid + 1; else hi = mid;
          }
          precision[((t * R + r) * K + k) * A + a] = lo < nd ? pr[lo] : 0.0;
        }
      }
    }
  }

  auto summarize_ap = [&](long t_only, std::size_t a) {
    if (t_only == -2) return -1.0;  // threshold not on the grid
    double s = 0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < T; ++t) {
      if (t_only >= 0 && std::size_t(t_only) != t) continue;
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t k = 0; k < K; ++k) {
          const double v = precision[((t * R + r) * K + k) * A + a];
          if (v > -1) s += v, ++n;
        }
      }
    }
    return n ? s / double(n) : -1.0;
  };
  auto summarize_ar = [&](long t_only, std::size_t a) {
    if (t_only == -2) return -1.0;
    double s = 0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < T; ++t) {
      if (t_only >= 0 && std::size_t(t_only) != t) continue;
      for (std::size_t k = 0; k < K; ++k) {
        const double v = recall[(t * K + k) * A + a];
        if (v > -1) s += v, ++n;
      }
    }
    return n ? s / double(n) : -1.0;
  };
  auto index_of = [&](double thr) {
    for (std::size_t t = 0; t < T; ++t) {
      if (iou_thrs[t] == thr) return long(t);
    }
    return -2L;
  };
  RefStats s;
  s.ap = summarize_ap(-1, 0);
  s.ap50 = summarize_ap(index_of(0.5), 0);
  s.ap75 = summarize_ap(index_of(0.75), 0);
  s.ap_s = summarize_ap(-1, 1);
  s.ap_m = summarize_ap(-1, 2);
  s.ap_l = summarize_ap(-1, 3);
  s.ar = summarize_ar(-1, 0);
  s.ar50 = summarize_ar(index_of(0.5), 0);
  s.ar75 = summarize_ar(index_of(0.75), 0);
  return s;
}

}  // namespace polyrefine::testing
