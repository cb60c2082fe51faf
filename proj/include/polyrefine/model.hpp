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

// Iterative polygon refinement detector.
//
// A small strided convolutional pyramid provides P2..P5. N proposal boxes
// start as the whole image and N proposal polygons start as M samples on
// the box contour. Each refinement stage
//   1. encodes its proposal polygons into vertex proposal features (FFN),
//   2. lets them attend to each other,
//   3. pools RoI features under its proposal boxes,
//   4. filters the RoI features with 1x1 convolutions whose weights are
//      generated from the vertex proposal features,
//   5. lets the resulting object features attend to each other,
//   6. predicts class scores, refined boxes, refined polygons and
//      per-vertex scores.
// Stage k+1 takes stage k's boxes and polygons as its proposals. Stages do
// not share parameters. All coordinates are normalized to [0, 1].
//
// The starting proposals are per-proposal parameters initialized from
// init_proposals(). They all start equal; the one-to-one matching hands
// each one a different target, which separates them after the first
// update.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "polyrefine/autodiff.hpp"
#include "polyrefine/errors.hpp"
#include "polyrefine/geometry.hpp"
#include "polyrefine/image.hpp"
#include "polyrefine/matching.hpp"
#include "polyrefine/nn.hpp"
#include "polyrefine/roi_align.hpp"

namespace polyrefine {

using ad::Index;
using ad::Matrix;
using ad::Var;

struct ModelConfig {
  int num_proposals = 100;  // N
  int num_vertices = 96;    // M
  int channels = 256;       // C
  int num_stages = 6;
  int pool_size = 7;  // S
  int sampling_ratio = 2;
  int ffn_hidden = 0;  // 0 selects 2 * channels
  int num_heads = 8;
  int dynamic_dim = 0;  // 0 selects channels / 4
  int num_classes = 1;
  // Backbone widths: stem, C2, C3, C4, C5.
  std::vector<int> backbone_widths = {16, 32, 64, 64, 64};
  bool self_attention_enabled = true;
  bool vertex_proposal_feature_enabled = true;
  // Adds stage k's object features to stage k+1's proposal features.
  bool carry_object_features = false;
  // Stops gradients between a stage's predictions and the next stage's
  // proposals.
  bool detach_proposals = true;
  std::uint64_t seed = 0;

  int hidden() const { return ffn_hidden > 0 ? ffn_hidden : 2 * channels; }
  int mid() const { return dynamic_dim > 0 ? dynamic_dim : std::max(1, channels / 4); }

  void validate() const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("ModelConfig: " + what);
    };
    need(num_proposals >= 1, "num_proposals must be >= 1");
    need(num_vertices >= 3, "num_vertices must be >= 3");
    need(channels >= 1, "channels must be >= 1");
    need(num_stages >= 1, "num_stages must be >= 1");
    need(pool_size >= 1, "pool_size must be >= 1");
    need(sampling_ratio >= 1, "sampling_ratio must be >= 1");
    need(num_heads >= 1 && channels % num_heads == 0,
         "channels must be divisible by num_heads");
    need(num_classes >= 1, "num_classes must be >= 1");
    need(backbone_widths.size() == 5, "backbone_widths needs 5 entries");
  }

  // CrowdAI-style preset: N = 100, M = 96, C = 256.
  static ModelConfig crowdai() { return {}; }

  // Inria-style preset with inner-ring class: N = 300, M = 50.
  static ModelConfig inria() {
    ModelConfig c;
    c.num_proposals = 300;
    c.num_vertices = 50;
    c.num_classes = 2;
    return c;
  }

  // Desk-scale preset used by the synthetic experiments.
  static ModelConfig desk() {
    ModelConfig c;
    c.num_proposals = 10;
    c.num_vertices = 16;
    c.channels = 64;
    return c;
  }
};

// Proposal boxes (N x 4, cx cy w h) and polygons (N x 2M, x0 y0 x1 y1 ...).
struct ProposalSet {
  Matrix boxes;
  Matrix polygons;
  int stage_index = 0;

  Index size() const { return boxes.rows(); }
};

// Every box is [0.5, 0.5, 1, 1]; every polygon samples that box's contour.
inline ProposalSet init_proposals(const ModelConfig& cfg) {
  ProposalSet p;
  const Index n = cfg.num_proposals, m = cfg.num_vertices;
  p.boxes.resize(n, 4);
  p.polygons.resize(n, 2 * m);
  const BoundingBox unit{0.5, 0.5, 1.0, 1.0};
  const Polygon contour = sample_box_contour(unit, std::size_t(m));
  for (Index i = 0; i < n; ++i) {
    p.boxes.row(i) << unit.cx, unit.cy, unit.w, unit.h;
    for (Index v = 0; v < m; ++v) {
      p.polygons(i, 2 * v) = contour[std::size_t(v)].x;
      p.polygons(i, 2 * v + 1) = contour[std::size_t(v)].y;
    }
  }
  return p;
}

// Plain-value predictions of one stage.
struct StageOutput {
  Matrix class_probs;   // N x num_classes
  Matrix boxes;         // N x 4
  Matrix polygons;      // N x 2M
  Matrix vertex_probs;  // N x M

  static StageOutput from(const StagePrediction& p) {
    return {p.class_probs.value(), p.boxes.value(), p.polygons.value(),
            p.vertex_probs.value()};
  }
};

// ---------------------------------------------------------------------------
// Backbone

inline constexpr double kPixelMean = 0.5;
inline constexpr double kPixelStd = 0.25;

// (H*W) x 3 normalized input.
inline Var image_tensor(const Image& img) {
  Matrix m(Index(img.height) * img.width, 3);
  for (Index i = 0; i < m.rows(); ++i) {
    for (int c = 0; c < 3; ++c) {
      m(i, c) = (img.rgb[std::size_t(i) * 3 + c] / 255.0 - kPixelMean) / kPixelStd;
    }
  }
  return Var(std::move(m));
}

// Strided 3x3 convolutions (each halving resolution) to C2..C5, then 1x1
// laterals to C channels merged top-down with nearest upsampling.
struct Backbone {
  nn::Conv2d stem, c2, c3, c4, c5;
  nn::Conv2d lat2, lat3, lat4, lat5;
  Index channels = 0;

  Backbone() = default;
  Backbone(nn::Rng& rng, const ModelConfig& cfg) : channels(cfg.channels) {
    const auto& w = cfg.backbone_widths;
    stem = nn::Conv2d(rng, 3, w[0], 3, 2, 1);
    c2 = nn::Conv2d(rng, w[0], w[1], 3, 2, 1);
    c3 = nn::Conv2d(rng, w[1], w[2], 3, 2, 1);
    c4 = nn::Conv2d(rng, w[2], w[3], 3, 2, 1);
    c5 = nn::Conv2d(rng, w[3], w[4], 3, 2, 1);
    lat2 = nn::Conv2d(rng, w[1], cfg.channels, 1, 1, 0);
    lat3 = nn::Conv2d(rng, w[2], cfg.channels, 1, 1, 0);
    lat4 = nn::Conv2d(rng, w[3], cfg.channels, 1, 1, 0);
    lat5 = nn::Conv2d(rng, w[4], cfg.channels, 1, 1, 0);
  }

  FeaturePyramid operator()(const Var& input, Index height, Index width) const {
    if (height % 32 != 0 || width % 32 != 0 || height <= 0 || width <= 0) {
      throw ShapeError("backbone: input " + std::to_string(height) + "x" +
                       std::to_string(width) + " is not divisible by 32");
    }
    Index h = height / 2, w = width / 2;
    const Var s = ad::relu(stem(input, height, width));
    const Var f2 = ad::relu(c2(s, h, w));
    h /= 2, w /= 2;
    const Var f3 = ad::relu(c3(f2, h, w));
    const Var f4 = ad::relu(c4(f3, h / 2, w / 2));
    const Var f5 = ad::relu(c5(f4, h / 4, w / 4));
    const Index h2 = h, w2 = w;
    const Var p5 = lat5(f5, h2 / 8, w2 / 8);
    const Var p4 = ad::add(lat4(f4, h2 / 4, w2 / 4), ad::upsample_nearest2x(p5, h2 / 8, w2 / 8));
    const Var p3 = ad::add(lat3(f3, h2 / 2, w2 / 2), ad::upsample_nearest2x(p4, h2 / 4, w2 / 4));
    const Var p2 = ad::add(lat2(f2, h2, w2), ad::upsample_nearest2x(p3, h2 / 2, w2 / 2));
    FeaturePyramid pyr;
    pyr.image_height = height;
    pyr.image_width = width;
    pyr.channels = channels;
    pyr.levels = {{2, h2, w2, p2},
                  {3, h2 / 2, w2 / 2, p3},
                  {4, h2 / 4, w2 / 4, p4},
                  {5, h2 / 8, w2 / 8, p5}};
    return pyr;
  }

  void collect(const std::string& prefix, nn::ParameterList& out) const {
    stem.collect(prefix + ".stem", out);
    c2.collect(prefix + ".c2", out);
    c3.collect(prefix + ".c3", out);
    c4.collect(prefix + ".c4", out);
    c5.collect(prefix + ".c5", out);
    lat2.collect(prefix + ".lat2", out);
    lat3.collect(prefix + ".lat3", out);
    lat4.collect(prefix + ".lat4", out);
    lat5.collect(prefix + ".lat5", out);
  }
};

// ---------------------------------------------------------------------------
// Stage components

// Two successive 1x1 convolutions over each RoI (C -> mid -> C) whose
// weights come from a linear map of the paired proposal feature, each
// followed by layer norm and ReLU; then flatten, project to C, norm, ReLU.
struct DynamicInteraction {
  nn::Linear param_gen;  // C -> 2 * C * mid
  nn::LayerNorm norm1, norm2;
  nn::Linear out;  // S*S*C -> C
  nn::LayerNorm out_norm;
  Index channels = 0, mid = 0, pool = 0;

  DynamicInteraction() = default;
  DynamicInteraction(nn::Rng& rng, Index c, Index mid_dim, Index s)
      : param_gen(rng, c, 2 * c * mid_dim),
        norm1(mid_dim),
        norm2(c),
        out(rng, s * s * c, c),
        out_norm(c),
        channels(c),
        mid(mid_dim),
        pool(s) {}

  // `roi`: (N*S*S) x C; `features`: N x C. Returns N x C.
  Var operator()(const Var& roi, const Var& features) const {
    const Index n = features.rows();
    const Var params = param_gen(features);
    return apply(roi, params, n);
  }

  // Same, from already generated parameters (N x 2*C*mid).
  Var apply(const Var& roi, const Var& params, Index n) const {
    const Index c = channels, m = mid;
    const Var w1 = ad::reshape(ad::slice_cols(params, 0, c * m), n * c, m);
    const Var w2 = ad::reshape(ad::slice_cols(params, c * m, m * c), n * m, c);
    Var f = ad::relu(norm1(ad::block_matmul(roi, w1, n)));
    f = ad::relu(norm2(ad::block_matmul(f, w2, n)));
    f = ad::reshape(f, n, pool * pool * c);
    return ad::relu(out_norm(out(f)));
  }

  void collect(const std::string& prefix, nn::ParameterList& list) const {
    param_gen.collect(prefix + ".param_gen", list);
    norm1.collect(prefix + ".norm1", list);
    norm2.collect(prefix + ".norm2", list);
    out.collect(prefix + ".out", list);
    out_norm.collect(prefix + ".out_norm", list);
  }
};

inline constexpr double kClassPrior = 0.01;
inline constexpr double kMinBoxSide = 1e-3;
inline const double kMaxLogScale = std::log(1000.0 / 16.0);

struct StageResult {
  StagePrediction prediction;
  Var object_features;  // N x C
};

struct RefinementStage {
  nn::Linear vpf_in, vpf_out;  // 2M -> hidden -> C
  nn::SelfAttention proposal_attention;
  nn::LayerNorm proposal_norm;
  DynamicInteraction interaction;
  nn::LayerNorm interaction_norm;
  nn::SelfAttention object_attention;
  nn::LayerNorm object_norm;
  nn::FeedForward ffn;
  nn::LayerNorm ffn_norm;
  nn::Mlp3 cls_head, box_head, poly_head, vertex_head;
  ModelConfig cfg;

  RefinementStage() = default;
  RefinementStage(nn::Rng& rng, const ModelConfig& c) : cfg(c) {
    const Index ch = c.channels, m = c.num_vertices;
    vpf_in = nn::Linear(rng, 2 * m, c.hidden());
    vpf_out = nn::Linear(rng, c.hidden(), ch);
    proposal_attention = nn::SelfAttention(rng, ch, c.num_heads);
    proposal_norm = nn::LayerNorm(ch);
    interaction = DynamicInteraction(rng, ch, c.mid(), c.pool_size);
    interaction_norm = nn::LayerNorm(ch);
    object_attention = nn::SelfAttention(rng, ch, c.num_heads);
    object_norm = nn::LayerNorm(ch);
    ffn = nn::FeedForward(rng, ch, c.hidden());
    ffn_norm = nn::LayerNorm(ch);
    cls_head = nn::Mlp3(rng, ch, ch, c.num_classes);
    box_head = nn::Mlp3(rng, ch, ch, 4);
    poly_head = nn::Mlp3(rng, ch, ch, 2 * m);
    vertex_head = nn::Mlp3(rng, ch, ch, m);
    // Class logits start at the foreground prior; box and polygon
    // refinements start at zero offset.
    cls_head.l2.bias.mutable_value().setConstant(-std::log((1.0 - kClassPrior) / kClassPrior));
    box_head.l2.zero();
    poly_head.l2.zero();
  }

  // Flattened polygons (N x 2M) -> N x C.
  Var extract_vertex_proposal_features(const Var& polygons) const {
    return vpf_out(ad::gelu(vpf_in(polygons)));
  }

  Var proposal_self_attention(const Var& features) const {
    return proposal_attention(features);
  }

  Var object_self_attention(const Var& features) const {
    if (!cfg.self_attention_enabled) return features;
    return object_attention(features);
  }

  Var dynamic_instance_interaction(const Var& roi, const Var& features) const {
    return interaction(roi, features);
  }

  // Heads on N x C object features, refining the given proposals.
  StagePrediction predict_heads(const Var& objects, const Var& boxes,
                                const Var& polygons) const {
    StagePrediction p;
    p.class_probs = ad::sigmoid(cls_head(objects));
    p.vertex_probs = ad::sigmoid(vertex_head(objects));

    const Var deltas = box_head(objects);
    const Var cx = ad::slice_cols(boxes, 0, 1), cy = ad::slice_cols(boxes, 1, 1);
    const Var w = ad::slice_cols(boxes, 2, 1), h = ad::slice_cols(boxes, 3, 1);
    const Var dx = ad::scale(ad::slice_cols(deltas, 0, 1), 0.5);
    const Var dy = ad::scale(ad::slice_cols(deltas, 1, 1), 0.5);
    const Var dw = ad::clamp(ad::slice_cols(deltas, 2, 1), -kMaxLogScale, kMaxLogScale);
    const Var dh = ad::clamp(ad::slice_cols(deltas, 3, 1), -kMaxLogScale, kMaxLogScale);
    const Var ncx = ad::clamp(ad::add(cx, ad::mul(dx, w)), 0.0, 1.0);
    const Var ncy = ad::clamp(ad::add(cy, ad::mul(dy, h)), 0.0, 1.0);
    const Var nw = ad::mul(w, ad::exp(dw));
    const Var nh = ad::mul(h, ad::exp(dh));
    p.boxes = ad::concat_cols({ncx, ncy, nw, nh});

    p.polygons = ad::clamp(ad::add(polygons, poly_head(objects)), 0.0, 1.0);
    return p;
  }

  // `carried`: previous stage's object features, or the learned proposal
  // features when vertex proposal features are disabled (may be empty).
  StageResult run(const FeaturePyramid& pyramid, const Var& boxes,
                  const Var& polygons, const Var* carried) const {
    Var features;
    if (cfg.vertex_proposal_feature_enabled) {
      features = extract_vertex_proposal_features(polygons);
      if (carried) features = ad::add(features, *carried);
    } else {
      features = *carried;
    }
    features = proposal_norm(proposal_self_attention(features));

    const Var roi = roi_align(pyramid, boxes, cfg.pool_size, cfg.sampling_ratio);
    Var objects = interaction_norm(
        ad::add(features, dynamic_instance_interaction(roi, features)));
    if (cfg.self_attention_enabled) objects = object_norm(object_self_attention(objects));
    objects = ffn_norm(ad::add(objects, ffn(objects)));

    return {predict_heads(objects, boxes, polygons), objects};
  }

  void collect(const std::string& prefix, nn::ParameterList& out) const {
    vpf_in.collect(prefix + ".vpf_in", out);
    vpf_out.collect(prefix + ".vpf_out", out);
    proposal_attention.collect(prefix + ".proposal_attention", out);
    proposal_norm.collect(prefix + ".proposal_norm", out);
    interaction.collect(prefix + ".interaction", out);
    interaction_norm.collect(prefix + ".interaction_norm", out);
    object_attention.collect(prefix + ".object_attention", out);
    object_norm.collect(prefix + ".object_norm", out);
    ffn.collect(prefix + ".ffn", out);
    ffn_norm.collect(prefix + ".ffn_norm", out);
    cls_head.collect(prefix + ".cls_head", out);
    box_head.collect(prefix + ".box_head", out);
    poly_head.collect(prefix + ".poly_head", out);
    vertex_head.collect(prefix + ".vertex_head", out);
  }
};

// ---------------------------------------------------------------------------
// Full model

struct ForwardResult {
  std::vector<StagePrediction> stages;
  std::vector<ProposalSet> proposals;  // proposals[k] is stage k's input
};

class Model {
 public:
  Model() = default;
  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    nn::Rng rng(cfg.seed);
    backbone_ = Backbone(rng, cfg_);
    for (int k = 0; k < cfg_.num_stages; ++k) stages_.emplace_back(rng, cfg_);
    proposal_embedding_ = nn::parameter(
        nn::uniform_matrix(rng, cfg_.num_proposals, cfg_.channels, 1.0));
    const ProposalSet init = init_proposals(cfg_);
    initial_boxes_ = nn::parameter(init.boxes);
    initial_polygons_ = nn::parameter(init.polygons);
  }

  const ModelConfig& config() const { return cfg_; }
  const Backbone& backbone() const { return backbone_; }
  Backbone& backbone() { return backbone_; }
  const RefinementStage& stage(int k) const { return stages_.at(std::size_t(k)); }
  RefinementStage& stage(int k) { return stages_.at(std::size_t(k)); }

  FeaturePyramid backbone_forward(const Image& img) const {
    return backbone_(image_tensor(img), img.height, img.width);
  }

  ForwardResult forward(const Image& img) const {
    return forward(backbone_forward(img));
  }

  // Entry point for externally computed pyramids.
  ForwardResult forward(const FeaturePyramid& pyramid) const {
    ForwardResult out;
    ProposalSet current;
    // Learned starting proposals, kept inside the unit square.
    Var boxes = ad::clamp(initial_boxes_, kMinBoxSide, 1.0);
    Var polygons = ad::clamp(initial_polygons_, 0.0, 1.0);
    Var carried;
    bool have_carried = false;
    if (!cfg_.vertex_proposal_feature_enabled) {
      carried = proposal_embedding_;
      have_carried = true;
    }
    for (int k = 0; k < cfg_.num_stages; ++k) {
      current.boxes = boxes.value();
      current.polygons = polygons.value();
      current.stage_index = k;
      out.proposals.push_back(current);
      StageResult r = stages_[std::size_t(k)].run(pyramid, boxes, polygons,
                                                   have_carried ? &carried : nullptr);
      out.stages.push_back(r.prediction);
      boxes = cfg_.detach_proposals ? ad::detach(r.prediction.boxes) : r.prediction.boxes;
      polygons = cfg_.detach_proposals ? ad::detach(r.prediction.polygons)
                                       : r.prediction.polygons;
      if (!cfg_.vertex_proposal_feature_enabled || cfg_.carry_object_features) {
        carried = r.object_features;
        have_carried = true;
      }
    }
    return out;
  }

  nn::ParameterList parameters() const {
    nn::ParameterList out;
    out.push_back({"proposals.boxes", initial_boxes_});
    out.push_back({"proposals.polygons", initial_polygons_});
    backbone_.collect("backbone", out);
    for (std::size_t k = 0; k < stages_.size(); ++k) {
      stages_[k].collect("stage" + std::to_string(k), out);
    }
    if (!cfg_.vertex_proposal_feature_enabled) {
      out.push_back({"proposal_embedding", proposal_embedding_});
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += std::size_t(p.var.value().size());
    return n;
  }

 private:
  ModelConfig cfg_;
  Backbone backbone_;
  std::vector<RefinementStage> stages_;
  Var proposal_embedding_;
  Var initial_boxes_, initial_polygons_;
};

// ---------------------------------------------------------------------------
// Post-processing

struct ScoredPolygon {
  Polygon polygon;  // pixels
  double score = 0.0;
  int category = 0;  // zero-based
};

struct PostprocessOptions {
  double score_thresh = 0.5;
  double vertex_thresh = 0.5;
  // Group inner-ring predictions (category `inner_category`) into the outer
  // rings that contain them.
  bool group_holes = false;
  int inner_category = 1;
};

struct PostprocessResult {
  std::vector<ScoredPolygon> polygons;
  std::vector<BuildingInstance> instances;  // filled when grouping holes
  std::vector<double> instance_scores;
};

inline PostprocessResult postprocess(const StageOutput& final, int image_width,
                                     int image_height,
                                     const PostprocessOptions& opt = {}) {
  PostprocessResult res;
  const Index n = final.boxes.rows();
  const Index m = final.vertex_probs.cols();
  for (Index i = 0; i < n; ++i) {
    Index cat = 0;
    const double score = final.class_probs.row(i).maxCoeff(&cat);
    if (score < opt.score_thresh) continue;
    Polygon poly;
    for (Index v = 0; v < m; ++v) {
      if (final.vertex_probs(i, v) < opt.vertex_thresh) continue;
      const Point p{final.polygons(i, 2 * v) * image_width,
                    final.polygons(i, 2 * v + 1) * image_height};
      if (!poly.vertices.empty() && poly.vertices.back() == p) continue;
      poly.vertices.push_back(p);
    }
    while (poly.size() > 1 && poly.vertices.front() == poly.vertices.back()) {
      poly.vertices.pop_back();
    }
    if (poly.size() < 3 || !passes_validity(poly)) continue;
    res.polygons.push_back({std::move(poly), score, int(cat)});
  }
  if (opt.group_holes) {
    std::vector<Polygon> outers, inners;
    for (const auto& sp : res.polygons) {
      if (sp.category == opt.inner_category) {
        inners.push_back(sp.polygon);
      } else {
        outers.push_back(sp.polygon);
        res.instance_scores.push_back(sp.score);
      }
    }
    res.instances = group_holes(outers, inners);
  }
  return res;
}

}  // namespace polyrefine
