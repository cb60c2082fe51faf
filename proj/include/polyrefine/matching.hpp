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

// Set-prediction machinery: per-pair loss terms, the box/class matching
// cost, optimal one-to-one assignment, and the composite training loss over
// boxes, classes, polygons and vertex labels.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "polyrefine/autodiff.hpp"
#include "polyrefine/errors.hpp"
#include "polyrefine/geometry.hpp"

namespace polyrefine {

struct LossWeights {
  double box = 5.0;
  double cls = 2.0;
  double giou = 2.0;
  double poly = 5.0;
  double vtx = 1.0;

  LossWeights scaled(double c) const {
    return {box * c, cls * c, giou * c, poly * c, vtx * c};
  }
};

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

inline constexpr double kProbEpsilon = 1e-8;

// ---------------------------------------------------------------------------
// Scalar loss terms

inline double l1_box(const BoundingBox& pred, const BoundingBox& gt) {
  return std::abs(pred.cx - gt.cx) + std::abs(pred.cy - gt.cy) +
         std::abs(pred.w - gt.w) + std::abs(pred.h - gt.h);
}

// 1 - GIoU, in [0, 2).
inline double giou_loss(const CornerBox& a, const CornerBox& b) {
  if (!(a.width() > 0.0 && a.height() > 0.0 && b.width() > 0.0 &&
        b.height() > 0.0)) {
    throw InvalidBoxError("giou_loss: zero-area box");
  }
  const double iw = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double ih = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  const double ew = std::max(a.x_max, b.x_max) - std::min(a.x_min, b.x_min);
  const double eh = std::max(a.y_max, b.y_max) - std::min(a.y_min, b.y_min);
  const double enclosing = ew * eh;
  const double giou = inter / uni - (enclosing - uni) / enclosing;
  return 1.0 - giou;
}

inline double giou_loss(const BoundingBox& a, const BoundingBox& b) {
  return giou_loss(a.to_corners(), b.to_corners());
}

// -alpha_t (1 - p_t)^gamma log(p_t), probability clamped to [eps, 1 - eps].
inline double focal_loss(double prob, int target, FocalParams fp = {}) {
  const double p = std::clamp(prob, kProbEpsilon, 1.0 - kProbEpsilon);
  const double pt = target == 1 ? p : 1.0 - p;
  const double at = target == 1 ? fp.alpha : 1.0 - fp.alpha;
  return -at * std::pow(1.0 - pt, fp.gamma) * std::log(pt);
}

// ---------------------------------------------------------------------------
// Matching cost and assignment

// Rows are predictions, columns are ground-truth instances.
struct CostMatrix {
  ad::Matrix values;

  Eigen::Index predictions() const { return values.rows(); }
  Eigen::Index ground_truths() const { return values.cols(); }
};

struct BoxPrediction {
  BoundingBox box;
  std::vector<double> class_probs;  // one sigmoid probability per class
};

struct BoxTarget {
  BoundingBox box;
  int category = 0;  // zero-based class index
};

// Entry (i, j) = w.box * L1 + w.cls * focal(p_i[class_j], 1) + w.giou * (1 - GIoU).
inline CostMatrix matching_cost(std::span<const BoxPrediction> preds,
                                std::span<const BoxTarget> gts,
                                const LossWeights& w, FocalParams fp = {}) {
  CostMatrix c{ad::Matrix(Eigen::Index(preds.size()), Eigen::Index(gts.size()))};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const double prob = preds[i].class_probs.at(std::size_t(gts[j].category));
      c.values(Eigen::Index(i), Eigen::Index(j)) =
          w.box * l1_box(preds[i].box, gts[j].box) +
          w.cls * focal_loss(prob, 1, fp) +
          w.giou * giou_loss(preds[i].box, gts[j].box);
    }
  }
  return c;
}

struct MatchResult {
  // (prediction index, ground-truth index), sorted by ground-truth index.
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> unmatched_predictions;
  double total_cost = 0.0;
};

namespace detail {

struct AssignmentSolution {
  std::vector<int> row_to_col;
  std::vector<double> u, v;  // dual potentials (rows, columns)
  double cost = 0.0;
};

// Shortest-augmenting-path Hungarian method for rows <= cols. Potentials
// satisfy u_i + v_j <= c_ij with equality on assigned pairs, and v_j = 0
// for every unassigned column.
inline AssignmentSolution solve_assignment(const ad::Matrix& a) {
  const int n = int(a.rows()), m = int(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  AssignmentSolution s;
  s.row_to_col.assign(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) s.row_to_col[p[j] - 1] = j - 1;
  }
  s.u.assign(u.begin() + 1, u.end());
  s.v.assign(v.begin() + 1, v.end());
  for (int i = 0; i < n; ++i) s.cost += a(i, s.row_to_col[i]);
  return s;
}

// Optimal row -> column assignment (rows <= cols) that is lexicographically
// smallest in the sequence of chosen columns among all optimal assignments
// (costs within a relative tolerance of the optimum count as ties).
inline std::vector<int> lexicographic_assignment(const ad::Matrix& a) {
  const int n = int(a.rows()), m = int(a.cols());
  if (n == 0) return {};
  const AssignmentSolution best = solve_assignment(a);
  const double tol = 1e-9 * (1.0 + a.cwiseAbs().maxCoeff()) * double(n);

  std::vector<int> current = best.row_to_col;
  std::vector<char> col_fixed(m, 0);
  double fixed_cost = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < current[i]; ++j) {
      if (col_fixed[j]) continue;
      // No optimal assignment uses an edge with positive reduced cost.
      if (a(i, j) - best.u[i] - best.v[j] > tol) continue;
      // Solve the remaining rows i+1.. over the remaining columns.
      std::vector<int> cols;
      for (int c = 0; c < m; ++c) {
        if (!col_fixed[c] && c != j) cols.push_back(c);
      }
      const int rest = n - i - 1;
      double rest_cost = 0.0;
      std::vector<int> rest_assign;
      if (rest > 0) {
        ad::Matrix sub(rest, Eigen::Index(cols.size()));
        for (int r = 0; r < rest; ++r) {
          for (std::size_t c = 0; c < cols.size(); ++c) {
            sub(r, Eigen::Index(c)) = a(i + 1 + r, cols[c]);
          }
        }
        const AssignmentSolution s = solve_assignment(sub);
        rest_cost = s.cost;
        for (int r = 0; r < rest; ++r) rest_assign.push_back(cols[s.row_to_col[r]]);
      }
      if (fixed_cost + a(i, j) + rest_cost <= best.cost + tol) {
        current[i] = j;
        for (int r = 0; r < rest; ++r) current[i + 1 + r] = rest_assign[r];
        break;
      }
    }
    col_fixed[current[i]] = 1;
    fixed_cost += a(i, current[i]);
  }
  return current;
}

}  // namespace detail

// Minimum-cost one-to-one assignment between predictions and ground
// truths; min(N, K) pairs. Ties resolve to the lexicographically smallest
// assignment, read as the sequence of prediction indices for ground truths
// 0, 1, ... (or of ground-truth indices for predictions 0, 1, ... when
// K > N).
inline MatchResult hungarian(const CostMatrix& costs) {
  const auto& c = costs.values;
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    if (!std::isfinite(c.data()[i])) throw Error("hungarian: non-finite cost");
  }
  MatchResult out;
  const int n = int(c.rows()), k = int(c.cols());
  std::vector<char> matched(n, 0);
  if (n > 0 && k > 0) {
    if (k <= n) {
      const ad::Matrix gt_rows = c.transpose();
      const auto assign = detail::lexicographic_assignment(gt_rows);
      for (int j = 0; j < k; ++j) out.pairs.emplace_back(assign[j], j);
    } else {
      const auto assign = detail::lexicographic_assignment(c);
      for (int i = 0; i < n; ++i) out.pairs.emplace_back(i, assign[i]);
      std::sort(out.pairs.begin(), out.pairs.end(),
                [](auto x, auto y) { return x.second < y.second; });
    }
  }
  for (const auto& [i, j] : out.pairs) {
    matched[i] = 1;
    out.total_cost += c(i, j);
  }
  for (int i = 0; i < n; ++i) {
    if (!matched[i]) out.unmatched_predictions.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Composite training loss

struct LossBreakdown {
  double box = 0.0;
  double cls = 0.0;
  double giou = 0.0;
  double poly = 0.0;
  double vtx = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    box += o.box;
    cls += o.cls;
    giou += o.giou;
    poly += o.poly;
    vtx += o.vtx;
    total += o.total;
    return *this;
  }

  // Flat key/value record for training logs.
  std::map<std::string, double> record() const {
    return {{"L_box", box},   {"L_cls", cls}, {"L_giou", giou},
            {"L_poly", poly}, {"L_vtx", vtx}, {"total", total}};
  }
};

enum class PolyReduction { mean, sum };

struct LossOptions {
  LossWeights weights;
  FocalParams focal;
  // mean: L1 averaged over the 2M coordinates of each matched polygon;
  // sum: summed over them. Both are then divided by max(K, 1).
  PolyReduction poly_reduction = PolyReduction::mean;
};

// One image's training target, coordinates normalized to [0, 1].
struct InstanceTarget {
  BoundingBox box;
  int category = 0;
  LabeledPolygon polygon;  // exactly M vertices
};

// Differentiable stage predictions for one image.
struct StagePrediction {
  ad::Var class_probs;   // N x num_classes
  ad::Var boxes;         // N x 4, normalized (cx, cy, w, h)
  ad::Var polygons;      // N x 2M, normalized (x0, y0, x1, y1, ...)
  ad::Var vertex_probs;  // N x M
};

struct StageLoss {
  ad::Var total;
  LossBreakdown parts;
};

namespace detail {

// Elementwise focal loss on a probability matrix against constant 0/1
// targets.
inline ad::Var focal_matrix(const ad::Var& probs, const ad::Matrix& targets,
                            FocalParams fp) {
  using namespace ad;
  const Matrix two_t_minus_one = (2.0 * targets.array() - 1.0).matrix();
  const Matrix one_minus_t = (1.0 - targets.array()).matrix();
  const Matrix alpha_t =
      (targets.array() * fp.alpha + (1.0 - targets.array()) * (1.0 - fp.alpha))
          .matrix();
  // p_t = (1 - t) + p (2t - 1)
  const Var p = clamp(probs, kProbEpsilon, 1.0 - kProbEpsilon);
  const Var pt = add(mul(p, Var(two_t_minus_one)), Var(one_minus_t));
  const Var one_minus_pt = add_scalar(neg(pt), 1.0);
  Var modulating = fp.gamma == 2.0 ? square(one_minus_pt)
                                   : exp(scale(log(clamp(one_minus_pt, 1e-300, 1.0)), fp.gamma));
  return neg(mul(mul(Var(alpha_t), modulating), log(pt)));
}

// Columns of an N x 4 (cx, cy, w, h) box matrix as corner coordinates.
struct CornerVars {
  ad::Var x0, y0, x1, y1;
};

inline CornerVars corners(const ad::Var& boxes) {
  using namespace ad;
  const Var cx = slice_cols(boxes, 0, 1), cy = slice_cols(boxes, 1, 1);
  const Var hw = scale(slice_cols(boxes, 2, 1), 0.5);
  const Var hh = scale(slice_cols(boxes, 3, 1), 0.5);
  return {sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh)};
}

// Per-row 1 - GIoU for two K x 4 box matrices.
inline ad::Var giou_rows(const ad::Var& pred, const ad::Var& gt) {
  using namespace ad;
  const CornerVars a = corners(pred), b = corners(gt);
  const Var area_a = mul(sub(a.x1, a.x0), sub(a.y1, a.y0));
  const Var area_b = mul(sub(b.x1, b.x0), sub(b.y1, b.y0));
  const Var iw = clamp(sub(minimum(a.x1, b.x1), maximum(a.x0, b.x0)), 0.0,
                       std::numeric_limits<double>::infinity());
  const Var ih = clamp(sub(minimum(a.y1, b.y1), maximum(a.y0, b.y0)), 0.0,
                       std::numeric_limits<double>::infinity());
  const Var inter = mul(iw, ih);
  const Var uni = sub(add(area_a, area_b), inter);
  const Var ew = sub(maximum(a.x1, b.x1), minimum(a.x0, b.x0));
  const Var eh = sub(maximum(a.y1, b.y1), minimum(a.y0, b.y0));
  const Var enclosing = mul(ew, eh);
  const Var giou = sub(div(inter, uni), div(sub(enclosing, uni), enclosing));
  return add_scalar(neg(giou), 1.0);
}

}  // namespace detail

// Builds the box/class cost inputs from a stage's current values.
inline std::vector<BoxPrediction> box_predictions(const StagePrediction& p) {
  const auto& probs = p.class_probs.value();
  const auto& boxes = p.boxes.value();
  std::vector<BoxPrediction> out(std::size_t(boxes.rows()));
  for (Eigen::Index i = 0; i < boxes.rows(); ++i) {
    out[std::size_t(i)].box = {boxes(i, 0), boxes(i, 1), boxes(i, 2), boxes(i, 3)};
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      out[std::size_t(i)].class_probs.push_back(probs(i, c));
    }
  }
  return out;
}

inline std::vector<BoxTarget> box_targets(std::span<const InstanceTarget> gts) {
  std::vector<BoxTarget> out;
  for (const auto& g : gts) out.push_back({g.box, g.category});
  return out;
}

inline MatchResult match_stage(const StagePrediction& p,
                               std::span<const InstanceTarget> gts,
                               const LossOptions& opt) {
  if (gts.empty()) {
    MatchResult r;
    for (Eigen::Index i = 0; i < p.boxes.rows(); ++i) {
      r.unmatched_predictions.push_back(int(i));
    }
    return r;
  }
  const auto preds = box_predictions(p);
  const auto targets = box_targets(gts);
  return hungarian(matching_cost(preds, targets, opt.weights, opt.focal));
}

// Composite loss for one stage given a fixed assignment:
//   L_box, L_giou: summed over matched pairs, divided by max(K, 1)
//   L_cls: focal over every prediction and class (matched pairs target 1
//          on their class, everything else 0), divided by max(K, 1)
//   L_poly: L1 over matched polygon coordinates (mean or sum per polygon),
//           divided by max(K, 1)
//   L_vtx: focal over the M vertex scores of matched pairs against corner
//          labels, divided by max(K, 1) * M
inline StageLoss total_loss(const StagePrediction& p,
                            std::span<const InstanceTarget> gts,
                            const MatchResult& match, const LossOptions& opt) {
  using namespace ad;
  const Index n = p.boxes.rows();
  const Index ncls = p.class_probs.cols();
  const Index m = p.vertex_probs.cols();
  const double k = double(match.pairs.size());
  const double norm_k = std::max(k, 1.0);

  Matrix cls_targets = Matrix::Zero(n, ncls);
  for (const auto& [i, j] : match.pairs) {
    cls_targets(i, gts[std::size_t(j)].category) = 1.0;
  }
  const Var l_cls =
      scale(sum(polyrefine::detail::focal_matrix(p.class_probs, cls_targets, opt.focal)),
            1.0 / norm_k);

  Var l_box = Var::scalar(0.0), l_giou = Var::scalar(0.0),
      l_poly = Var::scalar(0.0), l_vtx = Var::scalar(0.0);
  if (!match.pairs.empty()) {
    std::vector<Index> pred_idx;
    Matrix gt_boxes(Index(match.pairs.size()), 4);
    Matrix gt_polys(Index(match.pairs.size()), 2 * m);
    Matrix gt_labels(Index(match.pairs.size()), m);
    for (std::size_t r = 0; r < match.pairs.size(); ++r) {
      const auto [i, j] = match.pairs[r];
      const InstanceTarget& t = gts[std::size_t(j)];
      pred_idx.push_back(i);
      gt_boxes.row(Index(r)) << t.box.cx, t.box.cy, t.box.w, t.box.h;
      if (Index(t.polygon.size()) != m) {
        throw ShapeError("total_loss: target polygon has " +
                         std::to_string(t.polygon.size()) + " vertices, model uses " +
                         std::to_string(m));
      }
      for (Index v = 0; v < m; ++v) {
        gt_polys(Index(r), 2 * v) = t.polygon.vertices[std::size_t(v)].x;
        gt_polys(Index(r), 2 * v + 1) = t.polygon.vertices[std::size_t(v)].y;
        gt_labels(Index(r), v) = t.polygon.labels[std::size_t(v)];
      }
    }
    const Var mb = gather_rows(p.boxes, pred_idx);
    l_box = scale(sum(abs(sub(mb, Var(gt_boxes)))), 1.0 / norm_k);
    l_giou = scale(sum(polyrefine::detail::giou_rows(mb, Var(gt_boxes))), 1.0 / norm_k);
    const Var mp = gather_rows(p.polygons, pred_idx);
    const double poly_div =
        opt.poly_reduction == PolyReduction::mean ? norm_k * double(2 * m) : norm_k;
    l_poly = scale(sum(abs(sub(mp, Var(gt_polys)))), 1.0 / poly_div);
    const Var mv = gather_rows(p.vertex_probs, pred_idx);
    l_vtx = scale(sum(polyrefine::detail::focal_matrix(mv, gt_labels, opt.focal)),
                  1.0 / (norm_k * double(m)));
  }

  const LossWeights& w = opt.weights;
  StageLoss out;
  out.total = weighted_sum(
      {{w.box, l_box}, {w.cls, l_cls}, {w.giou, l_giou}, {w.poly, l_poly}, {w.vtx, l_vtx}});
  out.parts = {l_box.item(), l_cls.item(), l_giou.item(),
               l_poly.item(), l_vtx.item(), out.total.item()};
  return out;
}

}  // namespace polyrefine
