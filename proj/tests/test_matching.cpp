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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "polyrefine/matching.hpp"
#include "support/brute_force.hpp"
#include "support/gradcheck.hpp"

namespace pr = polyrefine;
namespace ad = polyrefine::ad;
using pr::BoundingBox;
using pr::CornerBox;

namespace {

// Hand-derived focal values at p = 0.5, alpha = 0.25, gamma = 2.
const double kFocalHalfPos = 0.25 * 0.25 * std::log(2.0);
const double kFocalHalfNeg = 0.75 * 0.25 * std::log(2.0);

ad::Var row_var(std::initializer_list<std::initializer_list<double>> rows) {
  ad::Matrix m(ad::Index(rows.size()), ad::Index(rows.begin()->size()));
  ad::Index r = 0;
  for (const auto& row : rows) {
    ad::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return ad::Var(m, true);
}

// Square target polygon (normalized) with M = 4 vertices, all corners.
pr::InstanceTarget box_target(BoundingBox b, int category = 0) {
  const pr::CornerBox c = b.to_corners();
  pr::LabeledPolygon lp;
  lp.vertices = {{c.x_min, c.y_min}, {c.x_max, c.y_min}, {c.x_max, c.y_max}, {c.x_min, c.y_max}};
  lp.labels = {1, 1, 1, 1};
  return {b, category, lp};
}

// Prediction that reproduces `targets` exactly in rows `rows`, with the
// given probability on matched rows and `other_prob` elsewhere.
pr::StagePrediction exact_prediction(const std::vector<pr::InstanceTarget>& targets, int n,
                                     double prob, double other_prob, double vertex_hit) {
  ad::Matrix cls = ad::Matrix::Constant(n, 1, other_prob);
  ad::Matrix boxes(n, 4), polys(n, 8), vp = ad::Matrix::Constant(n, 4, 1.0 - vertex_hit);
  for (int i = 0; i < n; ++i) boxes.row(i) << 0.2 + 0.05 * i, 0.7, 0.1, 0.1;
  polys.setConstant(0.5);
  for (std::size_t j = 0; j < targets.size(); ++j) {
    const auto& t = targets[j];
    const auto i = ad::Index(j);
    cls(i, 0) = prob;
    boxes.row(i) << t.box.cx, t.box.cy, t.box.w, t.box.h;
    for (int v = 0; v < 4; ++v) {
      polys(i, 2 * v) = t.polygon.vertices[std::size_t(v)].x;
      polys(i, 2 * v + 1) = t.polygon.vertices[std::size_t(v)].y;
      vp(i, v) = t.polygon.labels[std::size_t(v)] ? vertex_hit : 1.0 - vertex_hit;
    }
  }
  return {ad::Var(cls, true), ad::Var(boxes, true), ad::Var(polys, true), ad::Var(vp, true)};
}

}  // namespace

// --- component losses --------------------------------------------------------

TEST(L1Box, Examples) {
  EXPECT_EQ(pr::l1_box({0.3, 0.4, 0.2, 0.1}, {0.3, 0.4, 0.2, 0.1}), 0.0);
  EXPECT_NEAR(pr::l1_box({0.5, 0.5, 1, 1}, {0.5, 0.5, 0.5, 0.5}), 1.0, 1e-10);
  EXPECT_NEAR(pr::l1_box({0, 0, 0.1, 0.1}, {1, 1, 0.1, 0.1}), 2.0, 1e-10);
}

TEST(GiouLoss, Examples) {
  EXPECT_NEAR(pr::giou_loss(CornerBox{0, 0, 1, 1}, CornerBox{0, 0, 1, 1}), 0.0, 1e-10);
  EXPECT_NEAR(pr::giou_loss(CornerBox{0, 0, 1, 1}, CornerBox{2, 2, 3, 3}), 1.0 + 7.0 / 9.0, 1e-10);
  EXPECT_NEAR(pr::giou_loss(CornerBox{0, 0, 2, 2}, CornerBox{1, 0, 3, 2}), 2.0 / 3.0, 1e-10);
}

TEST(GiouLoss, ZeroAreaBoxThrows) {
  EXPECT_THROW(pr::giou_loss(CornerBox{0, 0, 0, 1}, CornerBox{0, 0, 1, 1}), pr::InvalidBoxError);
}

TEST(GiouLoss, RangeIsZeroToTwo) {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 1000; ++t) {
    const BoundingBox a{u(gen), u(gen), 0.01 + u(gen), 0.01 + u(gen)};
    const BoundingBox b{u(gen), u(gen), 0.01 + u(gen), 0.01 + u(gen)};
    const double g = pr::giou_loss(a, b);
    EXPECT_GE(g, 0.0);
    EXPECT_LT(g, 2.0);
  }
}

TEST(FocalLoss, Examples) {
  EXPECT_NEAR(pr::focal_loss(1.0, 1), 0.0, 1e-10);
  EXPECT_NEAR(pr::focal_loss(0.5, 1), kFocalHalfPos, 1e-10);
  EXPECT_NEAR(pr::focal_loss(0.5, 0), kFocalHalfNeg, 1e-10);
  EXPECT_NEAR(pr::focal_loss(0.5, 1), 0.04332, 1e-5);
  EXPECT_NEAR(pr::focal_loss(0.5, 0), 0.12997, 1e-5);
}

TEST(FocalLoss, ClampKeepsSaturatedProbabilitiesFinite) {
  EXPECT_TRUE(std::isfinite(pr::focal_loss(0.0, 1)));
  EXPECT_TRUE(std::isfinite(pr::focal_loss(1.0, 0)));
}

// --- matching cost -------------------------------------------------------------

TEST(MatchingCost, ComposesTheThreeComponents) {
  const pr::LossWeights w;
  const BoundingBox pb{0.4, 0.5, 0.3, 0.2}, gb{0.5, 0.45, 0.35, 0.25};
  const std::vector<pr::BoxPrediction> preds{{pb, {0.7}}};
  const std::vector<pr::BoxTarget> gts{{gb, 0}};
  const auto c = pr::matching_cost(preds, gts, w);
  // Components by hand: L1 = 0.1 + 0.05 + 0.05 + 0.05.
  const double l1 = 0.25;
  const double focal = -0.25 * 0.3 * 0.3 * std::log(0.7);
  const CornerBox a{0.25, 0.4, 0.55, 0.6}, b{0.325, 0.325, 0.675, 0.575};
  const double inter = (0.55 - 0.325) * (0.575 - 0.4);
  const double uni = 0.3 * 0.2 + 0.35 * 0.25 - inter;
  const double encl = (0.675 - 0.25) * (0.6 - 0.325);
  const double giou = 1.0 - (inter / uni - (encl - uni) / encl);
  EXPECT_NEAR(pr::giou_loss(a, b), giou, 1e-12);
  EXPECT_NEAR(c.values(0, 0), 5 * l1 + 2 * focal + 2 * giou, 1e-10);
}

TEST(MatchingCost, PerfectPredictionIsNearZero) {
  const BoundingBox b{0.3, 0.6, 0.2, 0.3};
  const std::vector<pr::BoxPrediction> preds{{b, {1.0}}};
  const std::vector<pr::BoxTarget> gts{{b, 0}};
  EXPECT_NEAR(pr::matching_cost(preds, gts, {}).values(0, 0), 0.0, 1e-12);
}

TEST(MatchingCost, NoTargetsGivesEmptyMatrix) {
  const std::vector<pr::BoxPrediction> preds{{{}, {0.5}}, {{}, {0.5}}};
  const auto c = pr::matching_cost(preds, std::span<const pr::BoxTarget>{}, {});
  EXPECT_EQ(c.predictions(), 2);
  EXPECT_EQ(c.ground_truths(), 0);
  const auto m = pr::hungarian(c);
  EXPECT_TRUE(m.pairs.empty());
  EXPECT_EQ(m.unmatched_predictions, (std::vector<int>{0, 1}));
}

// --- hungarian -------------------------------------------------------------------

TEST(Hungarian, OneByOne) {
  pr::CostMatrix c{ad::Matrix::Constant(1, 1, 1.0)};
  const auto m = pr::hungarian(c);
  ASSERT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.pairs[0], std::make_pair(0, 0));
  EXPECT_EQ(m.total_cost, 1.0);
}

TEST(Hungarian, TwoByTwo) {
  pr::CostMatrix c{ad::Matrix(2, 2)};
  c.values << 1, 2, 2, 1;
  const auto m = pr::hungarian(c);
  EXPECT_EQ(m.pairs, (std::vector<std::pair<int, int>>{{0, 0}, {1, 1}}));
  EXPECT_EQ(m.total_cost, 2.0);
}

TEST(Hungarian, MatchesBruteForceOnRandomMatrices) {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> u(0, 10);
  for (int n = 1; n <= 6; ++n) {
    for (int k = 1; k <= 6; ++k) {
      for (int t = 0; t < 20; ++t) {
        pr::CostMatrix c{ad::Matrix(n, k)};
        for (ad::Index i = 0; i < c.values.size(); ++i) c.values.data()[i] = u(gen);
        const auto m = pr::hungarian(c);
        const auto bf = pr::testing::brute_force_assignment(c.values);
        EXPECT_EQ(m.total_cost, bf.total_cost) << n << "x" << k;
        EXPECT_EQ(m.pairs.size(), std::size_t(std::min(n, k)));
      }
    }
  }
}

TEST(Hungarian, TiesResolveToLexicographicallySmallestAssignment) {
  std::mt19937_64 gen(7);
  std::uniform_int_distribution<int> u(0, 2);
  for (int n = 1; n <= 5; ++n) {
    for (int k = 1; k <= 5; ++k) {
      for (int t = 0; t < 30; ++t) {
        pr::CostMatrix c{ad::Matrix(n, k)};
        for (ad::Index i = 0; i < c.values.size(); ++i) c.values.data()[i] = u(gen);
        const auto m = pr::hungarian(c);
        const auto bf = pr::testing::brute_force_assignment(c.values);
        EXPECT_EQ(m.total_cost, bf.total_cost);
        EXPECT_EQ(m.pairs, bf.pairs) << n << "x" << k;
      }
    }
  }
}

TEST(Hungarian, InjectiveOnBothSides) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(0, 1);
  pr::CostMatrix c{ad::Matrix(10, 4)};
  for (ad::Index i = 0; i < c.values.size(); ++i) c.values.data()[i] = u(gen);
  const auto m = pr::hungarian(c);
  std::vector<int> preds, gts;
  for (auto [i, j] : m.pairs) preds.push_back(i), gts.push_back(j);
  std::sort(preds.begin(), preds.end());
  EXPECT_EQ(std::unique(preds.begin(), preds.end()), preds.end());
  EXPECT_EQ(gts, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_EQ(m.unmatched_predictions.size(), 6u);
}

TEST(Hungarian, NonFiniteCostThrows) {
  pr::CostMatrix c{ad::Matrix::Constant(2, 2, 1.0)};
  c.values(1, 0) = std::nan("");
  EXPECT_THROW(pr::hungarian(c), pr::Error);
}

TEST(Hungarian, ScalingCostsKeepsTheAssignment) {
  std::mt19937_64 gen(12);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 50; ++t) {
    pr::CostMatrix c{ad::Matrix(6, 4)};
    for (ad::Index i = 0; i < c.values.size(); ++i) c.values.data()[i] = u(gen);
    pr::CostMatrix s{c.values * 3.5};
    EXPECT_EQ(pr::hungarian(c).pairs, pr::hungarian(s).pairs);
  }
}

// --- total_loss ------------------------------------------------------------------

TEST(TotalLoss, ExactMatchWithSaturatedProbabilitiesIsZero) {
  const std::vector<pr::InstanceTarget> gts{box_target({0.3, 0.3, 0.2, 0.2}),
                                            box_target({0.7, 0.6, 0.3, 0.2})};
  const auto p = exact_prediction(gts, 5, 1.0, 0.0, 1.0);
  const auto m = pr::match_stage(p, gts, {});
  const auto l = pr::total_loss(p, gts, m, {});
  EXPECT_NEAR(l.parts.box, 0.0, 1e-12);
  EXPECT_NEAR(l.parts.giou, 0.0, 1e-12);
  EXPECT_NEAR(l.parts.poly, 0.0, 1e-12);
  EXPECT_NEAR(l.parts.cls, 0.0, 1e-12);
  EXPECT_NEAR(l.parts.vtx, 0.0, 1e-12);
  EXPECT_NEAR(l.parts.total, 0.0, 1e-12);
}

TEST(TotalLoss, OneMatchedPairComposesHandValues) {
  // One GT, one prediction: L1 box 0.2, GIoU from the formula, polygon off
  // by 0.1 on every coordinate, class and vertex probabilities 0.5.
  const BoundingBox gb{0.5, 0.5, 0.4, 0.4};
  const std::vector<pr::InstanceTarget> gts{box_target(gb)};
  auto p = exact_prediction(gts, 1, 0.5, 0.5, 0.5);
  p.boxes.mutable_value().row(0) << 0.55, 0.45, 0.45, 0.35;
  p.polygons.mutable_value().array() += 0.1;
  const pr::MatchResult m{{{0, 0}}, {}, 0.0};
  const auto l = pr::total_loss(p, gts, m, {});
  const double giou = pr::giou_loss(BoundingBox{0.55, 0.45, 0.45, 0.35}, gb);
  EXPECT_NEAR(l.parts.box, 0.2, 1e-10);
  EXPECT_NEAR(l.parts.giou, giou, 1e-10);
  EXPECT_NEAR(l.parts.poly, 0.1, 1e-10);
  EXPECT_NEAR(l.parts.cls, kFocalHalfPos, 1e-10);
  EXPECT_NEAR(l.parts.vtx, kFocalHalfPos, 1e-10);
  EXPECT_NEAR(l.parts.total, 5 * 0.2 + 2 * kFocalHalfPos + 2 * giou + 5 * 0.1 + kFocalHalfPos,
              1e-10);
}

TEST(TotalLoss, NormalizationOverKAndVertices) {
  // Two matched pairs and three background rows; vertex labels mixed.
  std::vector<pr::InstanceTarget> gts{box_target({0.3, 0.3, 0.2, 0.2}),
                                      box_target({0.7, 0.7, 0.2, 0.2})};
  gts[1].polygon.labels = {1, 0, 1, 0};
  auto p = exact_prediction(gts, 5, 0.5, 0.5, 0.5);
  p.vertex_probs.mutable_value().setConstant(0.5);
  const pr::MatchResult m{{{0, 0}, {1, 1}}, {2, 3, 4}, 0.0};
  const auto l = pr::total_loss(p, gts, m, {});
  EXPECT_NEAR(l.parts.cls, (2 * kFocalHalfPos + 3 * kFocalHalfNeg) / 2.0, 1e-10);
  EXPECT_NEAR(l.parts.vtx, (6 * kFocalHalfPos + 2 * kFocalHalfNeg) / (2.0 * 4.0), 1e-10);
}

TEST(TotalLoss, PolygonSumReductionSkipsTheCoordinateMean) {
  const std::vector<pr::InstanceTarget> gts{box_target({0.5, 0.5, 0.4, 0.4})};
  auto p = exact_prediction(gts, 1, 0.5, 0.5, 0.5);
  p.polygons.mutable_value().array() += 0.1;
  pr::LossOptions opt;
  opt.poly_reduction = pr::PolyReduction::sum;
  const auto l = pr::total_loss(p, gts, {{{0, 0}}, {}, 0.0}, opt);
  EXPECT_NEAR(l.parts.poly, 0.8, 1e-10);
}

TEST(TotalLoss, NoTargetsLeavesOnlyBackgroundClassification) {
  const int n = 7;
  const auto p = exact_prediction({}, n, 0.5, 0.5, 0.5);
  const auto m = pr::match_stage(p, {}, {});
  const auto l = pr::total_loss(p, {}, m, {});
  EXPECT_NEAR(l.parts.total, 2.0 * n * kFocalHalfNeg / 1.0, 1e-10);
  EXPECT_EQ(l.parts.box, 0.0);
  EXPECT_EQ(l.parts.poly, 0.0);
}

TEST(TotalLoss, ComponentsAreNonNegative) {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int t = 0; t < 30; ++t) {
    std::vector<pr::InstanceTarget> gts;
    for (int j = 0; j < 3; ++j) gts.push_back(box_target({u(gen), u(gen), 0.1, 0.15}));
    auto p = exact_prediction(gts, 6, u(gen), u(gen), u(gen));
    for (ad::Index i = 0; i < 6; ++i) {
      p.boxes.mutable_value().row(i) << u(gen), u(gen), 0.05 + 0.3 * u(gen), 0.05 + 0.3 * u(gen);
    }
    const auto l = pr::total_loss(p, gts, pr::match_stage(p, gts, {}), {});
    for (double v : {l.parts.box, l.parts.cls, l.parts.giou, l.parts.poly, l.parts.vtx}) {
      EXPECT_GE(v, 0.0);
    }
  }
}

TEST(TotalLoss, PermutingPredictionsPermutesTheAssignment) {
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (int t = 0; t < 20; ++t) {
    std::vector<pr::InstanceTarget> gts;
    for (int j = 0; j < 3; ++j) gts.push_back(box_target({u(gen), u(gen), 0.1, 0.15}));
    const int n = 6;
    auto p = exact_prediction(gts, n, 0.6, 0.3, 0.7);
    for (ad::Index i = 0; i < n; ++i) {
      p.boxes.mutable_value().row(i) << u(gen), u(gen), 0.1 + 0.2 * u(gen), 0.1 + 0.2 * u(gen);
      p.class_probs.mutable_value()(i, 0) = u(gen);
    }
    std::vector<ad::Index> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    const pr::StagePrediction q{ad::gather_rows(p.class_probs, perm),
                                ad::gather_rows(p.boxes, perm), ad::gather_rows(p.polygons, perm),
                                ad::gather_rows(p.vertex_probs, perm)};
    const auto mp = pr::match_stage(p, gts, {});
    const auto mq = pr::match_stage(q, gts, {});
    ASSERT_EQ(mp.pairs.size(), mq.pairs.size());
    for (std::size_t r = 0; r < mp.pairs.size(); ++r) {
      EXPECT_EQ(perm[std::size_t(mq.pairs[r].first)], mp.pairs[r].first);
    }
    EXPECT_NEAR(pr::total_loss(p, gts, mp, {}).parts.total,
                pr::total_loss(q, gts, mq, {}).parts.total, 1e-12);
  }
}

TEST(TotalLoss, ScalingWeightsScalesTheTotal) {
  std::vector<pr::InstanceTarget> gts{box_target({0.4, 0.4, 0.2, 0.3})};
  auto p = exact_prediction(gts, 3, 0.6, 0.2, 0.7);
  p.boxes.mutable_value().row(0) << 0.45, 0.42, 0.25, 0.2;
  pr::LossOptions base, scaled;
  scaled.weights = base.weights.scaled(2.5);
  const auto mb = pr::match_stage(p, gts, base);
  const auto ms = pr::match_stage(p, gts, scaled);
  EXPECT_EQ(mb.pairs, ms.pairs);
  EXPECT_NEAR(pr::total_loss(p, gts, ms, scaled).parts.total,
              2.5 * pr::total_loss(p, gts, mb, base).parts.total, 1e-12);
}

TEST(TotalLoss, GradientsMatchFiniteDifferences) {
  std::uint64_t s = 5;
  std::vector<pr::InstanceTarget> gts{box_target({0.3, 0.35, 0.2, 0.25}),
                                      box_target({0.65, 0.6, 0.3, 0.2})};
  gts[0].polygon.labels = {1, 0, 1, 1};
  const int n = 4;
  ad::Var cls(pr::testing::random_matrix(s, n, 1, 0.1, 0.9), true);
  ad::Var boxes(pr::testing::random_matrix(s, n, 4, 0.2, 0.6), true);
  ad::Var polys(pr::testing::random_matrix(s, n, 8, 0.05, 0.95), true);
  ad::Var vp(pr::testing::random_matrix(s, n, 4, 0.1, 0.9), true);
  const pr::StagePrediction p{cls, boxes, polys, vp};
  const auto m = pr::match_stage(p, gts, {});
  const auto r = pr::testing::grad_check([&] { return pr::total_loss(p, gts, m, {}).total; },
                                         {cls, boxes, polys, vp},
                                         {"class_probs", "boxes", "polygons", "vertex_probs"});
  EXPECT_LE(r.worst_relative_error, 1e-4) << r.worst_input;
}
