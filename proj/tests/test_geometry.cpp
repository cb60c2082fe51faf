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
#include <random>

#include <gtest/gtest.h>

#include "polyrefine/errors.hpp"
#include "polyrefine/geometry.hpp"
#include "polyrefine/rle.hpp"
#include "support/shapes.hpp"

namespace pr = polyrefine;
using pr::Point;
using pr::Polygon;
using pr::testing::rect;
using pr::testing::square;

namespace {

// Walks the closed ring from vertex 0 and returns the point at arc length s.
// Written independently of the library's sampler.
Point walk(const Polygon& ring, double s) {
  const double total = pr::perimeter(ring);
  s = std::fmod(s, total);
  for (std::size_t i = 0;; i = (i + 1) % ring.size()) {
    const Point a = ring[i], b = ring[(i + 1) % ring.size()];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    if (s <= len) return {a.x + (b.x - a.x) * s / len, a.y + (b.y - a.y) * s / len};
    s -= len;
  }
}

bool near(Point a, Point b, double tol = 1e-12) {
  return std::abs(a.x - b.x) <= tol && std::abs(a.y - b.y) <= tol;
}

Polygon reversed(Polygon p) {
  std::reverse(p.vertices.begin(), p.vertices.end());
  return p;
}

Polygon shifted(Polygon p, std::size_t k) {
  std::rotate(p.vertices.begin(), p.vertices.begin() + std::ptrdiff_t(k), p.vertices.end());
  return p;
}

}  // namespace

// --- shoelace_area -------------------------------------------------------

TEST(ShoelaceArea, UnitSquareCounterClockwiseIsPlusOne) {
  EXPECT_DOUBLE_EQ(pr::shoelace_area(square(0, 0, 1)), 1.0);
}

TEST(ShoelaceArea, UnitSquareClockwiseIsMinusOne) {
  EXPECT_DOUBLE_EQ(pr::shoelace_area(reversed(square(0, 0, 1))), -1.0);
}

TEST(ShoelaceArea, CollinearRingIsZeroAndDegenerate) {
  const Polygon p({{0, 0}, {1, 1}, {2, 2}});
  EXPECT_EQ(pr::shoelace_area(p), 0.0);
  EXPECT_TRUE(pr::is_degenerate(p));
  EXPECT_FALSE(pr::is_valid_ring(p));
}

TEST(ShoelaceArea, FewerThanThreeVerticesThrows) {
  EXPECT_THROW(pr::shoelace_area(Polygon({{0, 0}, {1, 0}})), pr::InvalidPolygonError);
}

TEST(ShoelaceArea, ShiftInvariantAndReversalNegates) {
  std::mt19937_64 gen(11);
  for (int t = 0; t < 100; ++t) {
    const Polygon p = pr::testing::notched_rect(gen, 3, 5, 40, 30, 8);
    const double a = pr::shoelace_area(p);
    for (std::size_t k = 0; k < p.size(); ++k) {
      EXPECT_NEAR(pr::shoelace_area(shifted(p, k)), a, 1e-9);
    }
    EXPECT_NEAR(pr::shoelace_area(reversed(p)), -a, 1e-9);
  }
}

// --- canonicalize --------------------------------------------------------

TEST(Canonicalize, OuterIsPositiveAndStartsTopLeft) {
  const Polygon p({{4, 4}, {0, 4}, {0, 0}, {4, 0}});  // negative area
  const Polygon c = pr::canonicalize(p, pr::RingRole::outer);
  EXPECT_GT(pr::shoelace_area(c), 0.0);
  EXPECT_EQ(c[0], (Point{0, 0}));
  EXPECT_EQ(c[1], (Point{4, 0}));
}

TEST(Canonicalize, HoleIsNegative) {
  const Polygon c = pr::canonicalize(square(1, 1, 2), pr::RingRole::hole);
  EXPECT_LT(pr::shoelace_area(c), 0.0);
  EXPECT_EQ(c[0], (Point{1, 1}));
}

// --- resample_uniform ----------------------------------------------------

TEST(ResampleUniform, UnitSquareFourVerticesAreTheCorners) {
  const auto lp = pr::resample_uniform(square(0, 0, 1), 4);
  ASSERT_EQ(lp.size(), 4u);
  const Polygon ring = square(0, 0, 1);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(near(lp.vertices[i], walk(ring, 1.0 * double(i))));
    EXPECT_EQ(lp.labels[i], 1);
  }
}

TEST(ResampleUniform, UnitSquareEightVerticesAddsMidpoints) {
  const Polygon ring = square(0, 0, 1);
  const auto lp = pr::resample_uniform(ring, 8);
  ASSERT_EQ(lp.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_TRUE(near(lp.vertices[i], walk(ring, 0.5 * double(i))));
    EXPECT_EQ(lp.labels[i], i % 2 == 0 ? 1 : 0);
  }
}

TEST(ResampleUniform, TriangleWithThreeSamplesSnapsToCorners) {
  const Polygon tri({{0, 0}, {4, 0}, {0, 3}});
  const auto lp = pr::resample_uniform(tri, 3);
  const Polygon canon = pr::canonicalize(tri);
  ASSERT_EQ(lp.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(lp.vertices[i], canon[i]);
    EXPECT_EQ(lp.labels[i], 1);
  }
}

TEST(ResampleUniform, TooFewSamplesThrowsCapacityError) {
  EXPECT_THROW(pr::resample_uniform(square(0, 0, 1), 3), pr::CapacityError);
}

TEST(ResampleUniform, FillerSamplesLieOnTheUniformWalk) {
  // Rectangle 0..6 x 0..2 (perimeter 16), M = 16: spacing 1, corners hit
  // samples exactly, every other sample is the walk point.
  const Polygon ring = rect(0, 0, 6, 2);
  const auto lp = pr::resample_uniform(ring, 16);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_TRUE(near(lp.vertices[i], walk(ring, double(i))));
  }
  EXPECT_EQ(std::count(lp.labels.begin(), lp.labels.end(), 1), 4);
}

TEST(ResampleUniform, CornerReplacesNearestSample) {
  // Rectangle 0..3 x 0..1 (perimeter 8), M = 5: spacing 1.6. The corner at
  // arc 3 lies between samples at 1.6 and 3.2 and replaces the nearer one.
  const Polygon ring = rect(0, 0, 3, 1);
  const auto lp = pr::resample_uniform(ring, 5);
  EXPECT_EQ(lp.vertices[2], (Point{3, 0}));
  EXPECT_EQ(lp.labels[2], 1);
  EXPECT_TRUE(near(lp.vertices[1], walk(ring, 1.6)));
  EXPECT_EQ(lp.labels[1], 0);
}

TEST(ResampleUniform, EquidistantTieGoesToTheEarlierSample) {
  // Rectangle 0..1.5 x 0..0.5 (perimeter 4), M = 4: spacing 1. The corner at
  // arc 1.5 is equidistant from samples 1 and 2; sample 1 is replaced.
  const Polygon ring = rect(0, 0, 1.5, 0.5);
  const auto lp = pr::resample_uniform(ring, 4);
  EXPECT_EQ(lp.vertices[1], (Point{1.5, 0}));
  EXPECT_EQ(lp.labels[1], 1);
}

TEST(ResampleUniform, RecoversCornerSetOnRandomRectilinearPolygons) {
  std::mt19937_64 gen(5);
  for (std::size_t m : {std::size_t(96), std::size_t(50), std::size_t(16)}) {
    for (int t = 0; t < 200; ++t) {
      const int w = std::uniform_int_distribution<int>(24, 90)(gen);
      const int h = std::uniform_int_distribution<int>(24, 90)(gen);
      const Polygon p = pr::testing::notched_rect(gen, 2, 3, w, h, 8);
      if (p.size() > m) continue;
      const auto lp = pr::resample_uniform(p, m);
      ASSERT_EQ(lp.size(), m);
      EXPECT_EQ(pr::corners_of(lp), pr::canonicalize(p));
    }
  }
}

// --- douglas_peucker -----------------------------------------------------

TEST(DouglasPeucker, RemovesSmallDeviation) {
  const Polygon p({{0, 0}, {5, 0.1}, {10, 0}, {5, -5}});
  const Polygon want({{0, 0}, {10, 0}, {5, -5}});
  EXPECT_EQ(pr::douglas_peucker(p, 5.0), want);
}

TEST(DouglasPeucker, MinimalTriangleUnchanged) {
  const Polygon tri({{0, 0}, {4, 0}, {0, 3}});
  for (double tol : {0.0, 1.0, 100.0}) EXPECT_EQ(pr::douglas_peucker(tri, tol), tri);
}

TEST(DouglasPeucker, RetainsVertexBeyondTolerance) {
  // Square 0..20 with the top edge midpoint pushed 6 px outward.
  const Polygon p({{0, 0}, {10, -6}, {20, 0}, {20, 20}, {0, 20}});
  const Polygon out = pr::douglas_peucker(p, 5.0);
  EXPECT_NE(std::find(out.vertices.begin(), out.vertices.end(), Point{10, -6}),
            out.vertices.end());
}

TEST(DouglasPeucker, RemovedVerticesLieWithinToleranceOfTheChain) {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> noise(0.0, 1.5);
  for (int t = 0; t < 50; ++t) {
    std::vector<Point> v;
    for (int k = 0; k < 40; ++k) {
      const double a = 2.0 * M_PI * k / 40.0;
      v.push_back({50 + 30 * std::cos(a) + noise(gen), 50 + 20 * std::sin(a) + noise(gen)});
    }
    const Polygon ring(v);
    const double tol = 3.0;
    const Polygon out = pr::douglas_peucker(ring, tol);
    for (const Point& p : ring.vertices) {
      double best = 1e300;
      for (std::size_t i = 0; i < out.size(); ++i) {
        best = std::min(best, pr::point_segment_distance(p, out[i], out[(i + 1) % out.size()]));
      }
      EXPECT_LE(best, tol + 1e-9);
    }
  }
}

TEST(DouglasPeucker, ZeroToleranceDropsOnlyExactlyCollinearVertices) {
  const Polygon p({{0, 0}, {5, 0}, {10, 0}, {10, 10}, {0, 10}, {0, 5}});
  const Polygon want({{0, 0}, {10, 0}, {10, 10}, {0, 10}});
  EXPECT_EQ(pr::douglas_peucker(p, 0.0), want);
  const Polygon q({{0, 0}, {5, 0.01}, {10, 0}, {10, 10}, {0, 10}});
  EXPECT_EQ(pr::douglas_peucker(q, 0.0), q);
}

TEST(DouglasPeucker, CollapseBelowThreeVerticesThrows) {
  const Polygon thin({{0, 0}, {10, 0.1}, {20, 0}, {10, -0.1}});
  EXPECT_THROW(pr::douglas_peucker(thin, 5.0), pr::DegenerateOutputError);
}

// --- merge_near_straight_edges ---------------------------------------------

TEST(MergeEdges, VertexAt170DegreesIsRemoved) {
  // Top-edge vertex whose interior angle is 170 degrees.
  const double dy = 10.0 * std::tan(5.0 * M_PI / 180.0);
  const Polygon p({{0, 0}, {10, -dy}, {20, 0}, {20, 20}, {0, 20}});
  EXPECT_NEAR(pr::vertex_angle_deg(p[0], p[1], p[2]), 170.0, 1e-9);
  const Polygon want({{0, 0}, {20, 0}, {20, 20}, {0, 20}});
  EXPECT_EQ(pr::merge_near_straight_edges(p, 10, 160), want);
}

TEST(MergeEdges, RightAngleIsRetained) {
  const Polygon sq = square(0, 0, 10);
  EXPECT_EQ(pr::merge_near_straight_edges(sq, 10, 160), sq);
}

TEST(MergeEdges, SpikeRemovedAndNeighborsReevaluated) {
  // Six-vertex ring: a 5 degree spike leaves the right edge at (20,10). Both
  // spike base vertices are near 92.5 degrees and survive the first look;
  // once the tip goes they lie on a straight edge and go too.
  const double half = 40.0 * std::tan(2.5 * M_PI / 180.0);
  const Polygon p({{0, 0}, {20, 0}, {20, 10}, {60, 10 + half}, {20, 10 + 2 * half}, {20, 20}});
  EXPECT_NEAR(pr::vertex_angle_deg(p[2], p[3], p[4]), 5.0, 1e-9);
  EXPECT_NEAR(pr::vertex_angle_deg(p[1], p[2], p[3]), 92.5, 1e-9);
  EXPECT_NEAR(pr::vertex_angle_deg(p[3], p[4], p[5]), 92.5, 1e-9);
  const Polygon want({{0, 0}, {20, 0}, {20, 20}});
  EXPECT_EQ(pr::merge_near_straight_edges(p, 10, 160), want);
}

TEST(MergeEdges, Idempotent) {
  std::mt19937_64 gen(21);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<Point> v;
    for (int k = 0; k < 24; ++k) {
      const double a = 2.0 * M_PI * k / 24.0;
      v.push_back({40 + 25 * std::cos(a) + noise(gen), 40 + 15 * std::sin(a) + noise(gen)});
    }
    try {
      const Polygon once = pr::merge_near_straight_edges(Polygon(v), 10, 160);
      EXPECT_EQ(pr::merge_near_straight_edges(once, 10, 160), once);
    } catch (const pr::DegenerateOutputError&) {
    }
  }
}

TEST(MergeEdges, CollapseThrows) {
  const Polygon thin({{0, 0}, {100, 1}, {200, 0}, {100, -1}});
  EXPECT_THROW(pr::merge_near_straight_edges(thin, 10, 160), pr::DegenerateOutputError);
}

// --- filter_valid ----------------------------------------------------------

TEST(FilterValid, TriangleDroppedForVertexCount) {
  const Polygon tri({{0, 0}, {20, 0}, {0, 10}});  // area 100
  EXPECT_DOUBLE_EQ(std::abs(pr::shoelace_area(tri)), 100.0);
  EXPECT_TRUE(pr::filter_valid(std::vector<Polygon>{tri}).empty());
}

TEST(FilterValid, SquareOfAreaNineDropped) {
  EXPECT_TRUE(pr::filter_valid(std::vector<Polygon>{square(0, 0, 3)}).empty());
}

TEST(FilterValid, SquareOfAreaHundredKept) {
  EXPECT_EQ(pr::filter_valid(std::vector<Polygon>{square(0, 0, 10)}).size(), 1u);
}

TEST(FilterValid, AreaExactlyTenDropped) {
  EXPECT_TRUE(pr::filter_valid(std::vector<Polygon>{rect(0, 0, 5, 2)}).empty());
}

// --- group_holes -----------------------------------------------------------

TEST(GroupHoles, InnerSquareAttachesToOuter) {
  const auto inst = pr::group_holes(std::vector<Polygon>{square(0, 0, 20)},
                                    std::vector<Polygon>{square(5, 5, 5)});
  ASSERT_EQ(inst.size(), 1u);
  EXPECT_EQ(inst[0].holes.size(), 1u);
}

TEST(GroupHoles, InnerGoesToTheOuterThatContainsIt) {
  const auto inst = pr::group_holes(std::vector<Polygon>{square(0, 0, 20), square(40, 0, 20)},
                                    std::vector<Polygon>{square(45, 5, 5)});
  ASSERT_EQ(inst.size(), 2u);
  EXPECT_EQ(inst[0].holes.size(), 0u);
  EXPECT_EQ(inst[1].holes.size(), 1u);
}

TEST(GroupHoles, OrphanInnerDiscarded) {
  const auto inst = pr::group_holes(std::vector<Polygon>{square(0, 0, 20)},
                                    std::vector<Polygon>{square(50, 50, 5)});
  ASSERT_EQ(inst.size(), 1u);
  EXPECT_TRUE(inst[0].holes.empty());
}

TEST(GroupHoles, SmallestContainingOuterWins) {
  const auto inst = pr::group_holes(std::vector<Polygon>{square(0, 0, 100), square(10, 10, 30)},
                                    std::vector<Polygon>{square(15, 15, 5)});
  EXPECT_TRUE(inst[0].holes.empty());
  EXPECT_EQ(inst[1].holes.size(), 1u);
}

TEST(GroupHoles, NinetyPercentVertexRule) {
  // Ten-vertex inner ring with its centroid inside; one vertex outside
  // (exactly 90%) attaches, two outside does not.
  auto ring_with_outside = [](int outside) {
    std::vector<Point> v;
    for (int k = 0; k < 10; ++k) {
      const double a = 2.0 * M_PI * k / 10.0;
      const double r = k < outside ? 14.0 : 5.0;
      v.push_back({20 + r * std::cos(a), 20 + r * std::sin(a)});
    }
    return Polygon(v);
  };
  const std::vector<Polygon> outer{square(10, 10, 20)};
  EXPECT_EQ(pr::group_holes(outer, std::vector<Polygon>{ring_with_outside(1)})[0].holes.size(), 1u);
  EXPECT_EQ(pr::group_holes(outer, std::vector<Polygon>{ring_with_outside(2)})[0].holes.size(), 0u);
}

TEST(GroupHoles, EveryInnerAttachedAtMostOnceAndInstanceCountIsOuterCount) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0, 100);
  for (int t = 0; t < 50; ++t) {
    std::vector<Polygon> outers, inners;
    for (int k = 0; k < 4; ++k) outers.push_back(square(u(gen), u(gen), 10 + u(gen) / 4));
    for (int k = 0; k < 6; ++k) inners.push_back(square(u(gen), u(gen), 3));
    const auto inst = pr::group_holes(outers, inners);
    EXPECT_EQ(inst.size(), outers.size());
    std::size_t holes = 0;
    for (const auto& i : inst) holes += i.holes.size();
    EXPECT_LE(holes, inners.size());
  }
}

// --- rasterize -------------------------------------------------------------

TEST(Rasterize, TwoByTwoSquareSetsFourPixels) {
  const pr::BuildingInstance inst{square(0, 0, 2), {}, pr::InstanceClass::outer};
  const pr::Mask m = pr::rasterize(inst, 4, 4);
  EXPECT_EQ(m.count(), 4u);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) EXPECT_EQ(m.at(y, x), (x < 2 && y < 2) ? 1 : 0);
  }
}

TEST(Rasterize, HoleCoveringTheInteriorLeavesTheBoundaryRing) {
  const pr::BuildingInstance inst{square(0, 0, 6), {square(1, 1, 4)}, pr::InstanceClass::outer};
  const pr::Mask m = pr::rasterize(inst, 6, 6);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) {
      const bool border = x == 0 || y == 0 || x == 5 || y == 5;
      EXPECT_EQ(m.at(y, x), border ? 1 : 0) << x << "," << y;
    }
  }
}

TEST(Rasterize, EmptyListIsAllZero) {
  const pr::Mask m = pr::rasterize(std::span<const pr::BuildingInstance>{}, 5, 7);
  EXPECT_EQ(m.height, 5);
  EXPECT_EQ(m.width, 7);
  EXPECT_EQ(m.count(), 0u);
}

TEST(Rasterize, MatchesPixelCenterOracle) {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(0, 30);
  for (int t = 0; t < 40; ++t) {
    std::vector<Point> v;
    for (int k = 0; k < 7; ++k) {
      const double a = 2.0 * M_PI * k / 7.0;
      const double r = 4 + u(gen) / 3;
      v.push_back({16 + r * std::cos(a), 16 + r * std::sin(a)});
    }
    const Polygon p(v);
    const pr::Mask m = pr::rasterize_ring(p, 32, 32);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        ASSERT_EQ(m.at(y, x), pr::point_in_polygon({x + 0.5, y + 0.5}, p) ? 1 : 0);
      }
    }
  }
}

TEST(Rasterize, PixelCountMatchesAreaWithinPerimeter) {
  std::mt19937_64 gen(23);
  for (int t = 0; t < 100; ++t) {
    const Polygon outer = pr::testing::notched_rect(gen, 3, 4, 60, 50, 8);
    const Polygon hole = square(25.3, 20.7, 9.1);
    const pr::BuildingInstance inst{outer, {hole}, pr::InstanceClass::outer};
    const double want = std::abs(pr::shoelace_area(outer)) - std::abs(pr::shoelace_area(hole));
    const double band = pr::perimeter(outer) + pr::perimeter(hole);
    EXPECT_NEAR(double(pr::rasterize(inst, 64, 64).count()), want, band);
  }
}

// --- sample_box_contour ----------------------------------------------------

TEST(SampleBoxContour, UnitBoxFourSamplesAreCorners) {
  const Polygon p = pr::sample_box_contour({0.5, 0.5, 1, 1}, 4);
  const Polygon want({{0, 0}, {1, 0}, {1, 1}, {0, 1}});
  EXPECT_EQ(p, want);
}

TEST(SampleBoxContour, UnitBoxEightSamplesAddMidpoints) {
  const Polygon p = pr::sample_box_contour({0.5, 0.5, 1, 1}, 8);
  const Polygon ring({{0, 0}, {1, 0}, {1, 1}, {0, 1}});
  ASSERT_EQ(p.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_TRUE(near(p[i], walk(ring, 0.5 * double(i))));
}

TEST(SampleBoxContour, SingleSampleIsTopLeft) {
  const Polygon p = pr::sample_box_contour({0.5, 0.5, 1, 1}, 1);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0], (Point{0, 0}));
}

// --- flat lists and RLE ------------------------------------------------------

TEST(FlatCoordinates, RoundTrip) {
  const Polygon p({{1.5, 2}, {3, 4.25}, {0, 7}});
  EXPECT_EQ(pr::from_flat(pr::to_flat(p)), p);
  const std::vector<double> odd{1, 2, 3};
  EXPECT_THROW(pr::from_flat(odd), pr::InvalidPolygonError);
}

TEST(Rle, RoundTripAndColumnMajorRuns) {
  pr::Mask m(3, 2);
  m.at(0, 0) = 1;
  m.at(1, 0) = 1;
  m.at(2, 1) = 1;
  const pr::rle::Rle r = pr::rle::encode(m);
  // Column-major: column 0 = 1,1,0; column 1 = 0,0,1.
  EXPECT_EQ(r.counts, (std::vector<std::uint32_t>{0, 2, 3, 1}));
  EXPECT_EQ(pr::rle::decode(r), m);
  EXPECT_EQ(pr::rle::decode(pr::rle::from_string(pr::rle::to_string(r), 3, 2)), m);
}
